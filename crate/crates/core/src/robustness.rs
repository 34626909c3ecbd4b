//! Parameter-space robustness: accuracy under Gaussian weight noise, and a
//! sampled lower bound on the output sensitivity
//! `max |f(x; theta + d) - f(x; theta)| / ||d||`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{accuracy, ModelParams};
use crate::tape::GradTape;
use crate::tensor::{self, Tensor};

pub const DEFAULT_NOISE_STD: f64 = 0.1;
pub const DEFAULT_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    pub noise_std: f64,
    pub trials: usize,
    pub seed: u64,
    /// True-class logit sensitivity, when estimated.
    pub rho_estimate: Option<f64>,
    /// Sensitivity of the whole logit vector in L2.
    pub rho_logit_vector: Option<f64>,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

/// Mean accuracy over `trials` draws of `theta + N(0, noise_std^2 I)`.
pub fn robust_accuracy(
    model: &ModelParams,
    test: &Dataset,
    noise_std: f64,
    trials: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    if test.is_empty() {
        return Err(Error::Input("robust accuracy of an empty test set".into()));
    }
    if !(noise_std >= 0.0) || trials == 0 {
        return Err(Error::Input(format!("need noise_std >= 0 and trials >= 1, got {noise_std}, {trials}")));
    }
    let clean = accuracy(model, &test.features, &test.labels)?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            if noise_std == 0.0 {
                return Ok(clean);
            }
            let mut rng = trial_rng(seed, t);
            let noisy: Vec<f64> =
                model.as_slice().iter().map(|v| v + noise_std * rng.sample::<f64, _>(StandardNormal)).collect();
            accuracy(&model.unflatten(noisy)?, &test.features, &test.labels)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RobustnessReport {
        clean_accuracy: clean,
        robust_accuracy: per_trial.iter().sum::<f64>() / trials as f64,
        noise_std,
        trials,
        seed,
        rho_estimate: None,
        rho_logit_vector: None,
    })
}

/// Both sensitivity variants of [`estimate_rho`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoEstimate {
    pub true_logit: f64,
    pub logit_vector: f64,
}

fn true_logit_gradient(model: &ModelParams, x: &Tensor, label: usize) -> Result<Vec<f64>> {
    let mut tape = GradTape::new();
    let logits = model.forward(&mut tape, x)?;
    let picked = tape.gather_sum(logits, &[label])?;
    tape.param_gradient(picked)
}

/// Sampled lower bound on parameter sensitivity. Each probe is tested along
/// its own true-logit gradient and along `n_directions` shared random unit
/// directions, at every radius. Directions are drawn in a fixed order, so a
/// larger `n_directions` only adds candidates.
pub fn estimate_rho(
    model: &ModelParams,
    probes: &Tensor,
    labels: &[usize],
    n_directions: usize,
    radii: &[f64],
    seed: u64,
) -> Result<RhoEstimate> {
    if n_directions == 0 {
        return Err(Error::Input("estimate_rho needs at least one direction".into()));
    }
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Input(format!("radii must be positive, got {radii:?}")));
    }
    if probes.rows() == 0 || labels.len() != probes.rows() {
        return Err(Error::Input("probe set is empty or mislabelled".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_dirs: Vec<Vec<f64>> = (0..n_directions)
        .map(|_| {
            let v: Vec<f64> = (0..model.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let n = tensor::l2_norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();

    let base = model.logits(probes)?;
    let mut best = RhoEstimate { true_logit: 0.0, logit_vector: 0.0 };
    for (i, &label) in labels.iter().enumerate() {
        let x = probes.select_rows(&[i]);
        let grad = true_logit_gradient(model, &x, label)?;
        let gnorm = tensor::l2_norm(&grad);
        let grad_dir = (gnorm > 0.0).then(|| grad.iter().map(|g| g / gnorm).collect::<Vec<f64>>());
        let f0 = base.row(i);
        for dir in grad_dir.iter().chain(&random_dirs) {
            for &r in radii {
                let shifted: Vec<f64> = model.as_slice().iter().zip(dir).map(|(t, d)| t + r * d).collect();
                let out = model.unflatten(shifted)?.logits(&x)?;
                let f1 = out.row(0);
                let scalar = (f1[label] - f0[label]).abs() / r;
                let vector = f1.iter().zip(f0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / r;
                best.true_logit = best.true_logit.max(scalar);
                best.logit_vector = best.logit_vector.max(vector);
            }
        }
    }
    Ok(best)
}

/// Robust accuracy plus both sensitivity estimates on up to `probe_count` test rows.
pub fn evaluate_robustness(
    model: &ModelParams,
    test: &Dataset,
    noise_std: f64,
    trials: usize,
    probe_count: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    let mut report = robust_accuracy(model, test, noise_std, trials, seed)?;
    let idx: Vec<usize> = (0..probe_count.min(test.len())).collect();
    let (x, y) = test.batch(&idx);
    let rho = estimate_rho(model, &x, &y, 8, &[1e-3, 1e-2, 1e-1], seed)?;
    report.rho_estimate = Some(rho.true_logit);
    report.rho_logit_vector = Some(rho.logit_vector);
    Ok(report)
}
