//! Calibrates a DP-SGD noise multiplier and shows the accountant's ledger.

use dpadapter::privacy::{calibrate_sigma, gaussian_sigma, AccountantState, PrivacySpec};

fn main() -> dpadapter::Result<()> {
    println!("single Gaussian release at (1, 1e-5): sigma = {:.4}", gaussian_sigma(1.0, 1e-5)?);
    let (q, steps) = (0.032, 940);
    for eps in [1.0, 4.0] {
        let spec = PrivacySpec::new(eps, 1e-5)?;
        let sigma = calibrate_sigma(&spec, q, steps)?;
        let mut acc = AccountantState::default();
        acc.compose(q, sigma, steps)?;
        let report = acc.report(spec.delta)?;
        println!("target eps {eps}: sigma {sigma:.4}, spent {:.4} at order {}", report.epsilon, report.best_order);
    }
    Ok(())
}
