//! Numerical verification of the convergence statements, run by the
//! `verify-theory` command and by the acceptance tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::finetune::SampleObjective;
use crate::theory::{
    gradient_variance, measured_pl_constant, measured_sample_smoothness, paired_agreement, run_decoupled_sam,
    run_decoupled_sam_sweep, run_epsilon_utility_sweep, run_rho_utility_sweep, QuadraticFamily, RescaledLinearFamily,
    SweepPoint, TheoryObjective, UtilitySweep,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub seeds: usize,
    /// Curvatures of the quadratic family.
    pub curvatures: Vec<f64>,
    pub quadratic_n: usize,
    pub b1_sizes: Vec<usize>,
    pub b2: usize,
    pub iterations: usize,
    pub linear_n: usize,
    pub linear_d: usize,
    pub rhos: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    /// Fraction of paired seeds that must show a trend.
    pub agreement: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            curvatures: vec![0.1, 0.25, 0.5],
            quadratic_n: 200,
            b1_sizes: vec![1, 8, 200],
            b2: 4,
            iterations: 2000,
            linear_n: 20,
            linear_d: 5,
            rhos: vec![0.5, 1.0, 2.0, 4.0],
            epsilons: vec![1.0, 2.0, 4.0],
            delta: 1e-5,
            agreement: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

#[derive(Debug, Clone)]
pub struct TheoryReport {
    pub checks: Vec<Check>,
    pub sam_sweep: Vec<SweepPoint>,
    pub rho_sweep: Vec<SweepPoint>,
    pub epsilon_sweep: Vec<SweepPoint>,
}

impl TheoryReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, rows) in [
            ("theory_sam_sweep.csv", &self.sam_sweep),
            ("theory_rho_sweep.csv", &self.rho_sweep),
            ("theory_eps_sweep.csv", &self.epsilon_sweep),
        ] {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("theory_checks.csv"))?;
        for c in &self.checks {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trend across consecutive sweep points: `increasing` asks each later point to
/// exceed the earlier one in at least `agreement` of the paired seeds.
fn paired_trend(points: &[SweepPoint], increasing: bool, agreement: f64) -> (bool, String) {
    let mut ok = true;
    let mut detail = String::new();
    for w in points.windows(2) {
        let frac = if increasing { paired_agreement(&w[0], &w[1]) } else { paired_agreement(&w[1], &w[0]) };
        ok &= frac >= agreement && (w[1].mean > w[0].mean) == increasing;
        detail.push_str(&format!(
            "{}->{}: {:.0}% mean {:.3e}->{:.3e}; ",
            w[0].value,
            w[1].value,
            100.0 * frac,
            w[0].mean,
            w[1].mean
        ));
    }
    (ok, detail)
}

pub fn run_theory_checks(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let seeds: Vec<u64> = (0..cfg.seeds as u64).collect();
    let mut checks = Vec::new();

    // Decoupled-batch convergence on the quadratic family.
    let quad = QuadraticFamily::random(cfg.curvatures.clone(), cfg.quadratic_n, 1.0, 11)?;
    let theta0 = vec![2.0; quad.dim()];
    let sam_sweep = run_decoupled_sam_sweep(&quad, &theta0, &cfg.b1_sizes, cfg.b2, cfg.iterations, &seeds)?;
    let first = &sam_sweep[0];
    let last = &sam_sweep[sam_sweep.len() - 1];
    let frac = paired_agreement(last, first);
    checks.push(check(
        "sam_large_b1_lowers_suboptimality",
        frac >= cfg.agreement && last.mean < first.mean,
        format!(
            "|B1|={} mean {:.4e} vs |B1|={} mean {:.4e}, {:.0}% of pairs",
            first.value,
            first.mean,
            last.value,
            last.mean,
            100.0 * frac
        ),
    ));
    let within = sam_sweep.iter().all(|p| p.mean <= 1.1 * p.bound.unwrap_or(f64::INFINITY));
    checks.push(check(
        "sam_below_analytic_bound",
        within,
        sam_sweep
            .iter()
            .map(|p| format!("|B1|={}: {:.4e} <= {:.4e}", p.value, p.mean, p.bound.unwrap_or(f64::NAN)))
            .collect::<Vec<_>>()
            .join("; "),
    ));
    let flat = QuadraticFamily::random(cfg.curvatures.clone(), 10, 0.0, 0)?;
    let run = run_decoupled_sam(&flat, &theta0, 1, 1, cfg.iterations, 0)?;
    checks.push(check("sam_noise_free_converges", run.final_gap < 1e-8, format!("final gap {:.3e}", run.final_gap)));

    let params = quad.params();
    let mu_hat = measured_pl_constant(&quad, &quad.minimizer(), 200, 5);
    checks.push(check(
        "pl_constant_matches",
        ((mu_hat - params.mu) / params.mu).abs() <= 0.01,
        format!("measured {mu_hat:.6} vs analytic {:.6}", params.mu),
    ));
    let var = gradient_variance(&quad, &theta0);
    checks.push(check(
        "variance_bound_quadratic",
        var <= params.sigma_hat_sq * (1.0 + 1e-12),
        format!("empirical {var:.6} vs declared {:.6}", params.sigma_hat_sq),
    ));

    // Private single-sample SGD on the rescaled linear family.
    let family = RescaledLinearFamily::random(1.0, cfg.linear_n, cfg.linear_d, 0.1, 7)?;
    let lin_theta0 = vec![1.0; family.dim()];
    let sweep = UtilitySweep { epsilon: 1.0, delta: cfg.delta, noise_scale: 1.0 };
    let rho_sweep = run_rho_utility_sweep(&family, &lin_theta0, &cfg.rhos, &sweep, &seeds)?;
    let (ok, detail) = paired_trend(&rho_sweep, true, cfg.agreement);
    checks.push(check("utility_worsens_with_rho", ok, detail));
    let epsilon_sweep = run_epsilon_utility_sweep(&family, &lin_theta0, &cfg.epsilons, &sweep, &seeds)?;
    let (ok, detail) = paired_trend(&epsilon_sweep, false, cfg.agreement);
    checks.push(check("utility_improves_with_epsilon", ok, detail));

    let level = family.loss(&lin_theta0);
    let minimizer = family.minimizer();
    let worst_var = (0..=10)
        .map(|k| {
            let s = k as f64 / 10.0;
            let probe: Vec<f64> = minimizer.iter().zip(&lin_theta0).map(|(m, t)| m + s * (t - m)).collect();
            gradient_variance(&family, &probe)
        })
        .fold(0.0, f64::max);
    checks.push(check(
        "variance_bound_rescaled_linear",
        worst_var <= family.variance_bound(level),
        format!("empirical {worst_var:.6} vs declared {:.6}", family.variance_bound(level)),
    ));

    let small = family.with_rho(1e-3);
    let noisy = run_rho_utility_sweep(&small, &lin_theta0, &[1e-3], &sweep, &seeds)?;
    let clean =
        run_rho_utility_sweep(&small, &lin_theta0, &[1e-3], &UtilitySweep { noise_scale: 0.0, ..sweep }, &seeds)?;
    let rel = (noisy[0].mean - clean[0].mean).abs() / clean[0].mean;
    checks.push(check(
        "small_rho_matches_noise_free",
        rel <= 0.1,
        format!("noisy {:.6e} vs noise-free {:.6e}", noisy[0].mean, clean[0].mean),
    ));

    for &rho in &cfg.rhos {
        let f = family.with_rho(rho);
        let smooth = measured_sample_smoothness(&f, 20, 3);
        let declared = f.params().smoothness();
        checks.push(check(
            &format!("sample_smoothness_rho_{rho}"),
            smooth <= 1.05 * declared && (smooth - f.sample_hessian_norm()).abs() <= 0.05 * declared,
            format!("measured {smooth:.6} vs declared {declared:.6}"),
        ));
    }
    Ok(TheoryReport { checks, sam_sweep, rho_sweep, epsilon_sweep })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_configuration_passes() {
        let cfg =
            TheoryConfig { seeds: 6, iterations: 400, quadratic_n: 50, b1_sizes: vec![1, 50], ..Default::default() };
        let report = run_theory_checks(&cfg).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
