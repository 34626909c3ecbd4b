//! Accountant values against an independent 80-digit evaluation.

mod common;

use common::{calibration_grid, GAUSSIAN_SIGMA_1_1EM5, RDP_ORACLE};
use dpadapter::privacy::{calibrate_sigma, epsilon_for, gaussian_sigma, rdp_subsampled_gaussian, PrivacySpec};

#[test]
fn gaussian_sigma_closed_form() {
    let s = gaussian_sigma(1.0, 1e-5).unwrap();
    assert!((s - 4.8448).abs() <= 1e-3, "{s}");
    assert!((s - GAUSSIAN_SIGMA_1_1EM5).abs() <= 1e-12);
    assert!((gaussian_sigma(2.0, 1e-5).unwrap() - s / 2.0).abs() < 1e-12);
}

#[test]
fn full_batch_rdp_is_alpha_over_two_sigma_squared() {
    for alpha in [2.0, 3.0, 10.0, 64.0, 256.0] {
        for sigma in [0.5, 1.0, 3.7] {
            let r = rdp_subsampled_gaussian(1.0, sigma, alpha).unwrap();
            assert_eq!(r, alpha / (2.0 * sigma * sigma));
        }
    }
}

#[test]
fn subsampled_rdp_matches_high_precision_oracle() {
    for (q, sigma, alpha, want) in RDP_ORACLE {
        let got = rdp_subsampled_gaussian(q, sigma, alpha).unwrap();
        let rel = ((got - want) / want).abs();
        assert!(rel <= 1e-9, "q={q} sigma={sigma} alpha={alpha}: {got} vs {want} (rel {rel:.2e})");
    }
}

#[test]
fn calibration_round_trip() {
    for (eps, q, steps) in calibration_grid() {
        let spec = PrivacySpec::new(eps, 1e-5).unwrap();
        let sigma = calibrate_sigma(&spec, q, steps).unwrap();
        let spent = epsilon_for(q, sigma, steps, 1e-5).unwrap();
        assert!(spent <= eps, "eps {eps} q {q} steps {steps}: spent {spent}");
        assert!((spent - eps).abs() / eps <= 1e-3, "eps {eps} q {q} steps {steps}: spent {spent}");
    }
}
