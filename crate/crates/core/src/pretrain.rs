//! Upstream pre-training: standard SGD, vanilla SAM (shared perturbation and
//! update batch) and DPAdapter (decoupled batches).
//!
//! One DPAdapter iteration draws a large batch `B1` and a regular batch `B2`,
//! takes an ascent step `delta = eta1 * grad L_B1(theta)`, projects it into the
//! `gamma` ball, and updates `theta` with the gradient of `L_B2` evaluated at
//! `theta + delta`. The perturbation is never written into `theta`, so
//! "perturb, step, revert" is exact.

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss_and_gradient, ModelParams};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMethod {
    /// No pre-training; the downstream run starts from a fresh initialisation.
    Scratch,
    Standard,
    VanillaSam,
    #[serde(rename = "dpadapter")]
    DpAdapter,
}

impl PretrainMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Scratch => "scratch",
            Self::Standard => "standard",
            Self::VanillaSam => "vanilla_sam",
            Self::DpAdapter => "dpadapter",
        }
    }
}

/// Piecewise-constant schedule: the rate is multiplied by `factor` at each
/// milestone, given as a fraction of the total iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub milestones: Vec<f64>,
    pub factor: f64,
}

impl StepDecay {
    pub fn rate(&self, base: f64, iteration: usize, total: usize) -> f64 {
        let progress = iteration as f64 / total.max(1) as f64;
        let passed = self.milestones.iter().filter(|&&m| progress >= m).count();
        base * self.factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Perturbation batch size.
    pub m1: usize,
    /// Update batch size.
    pub m2: usize,
    /// Perturbation step size.
    pub eta1: f64,
    /// Update learning rate.
    pub eta2: f64,
    /// Norm-ball radius in parameter space.
    pub gamma: f64,
    /// Update iterations after warm-up.
    pub iterations: usize,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: StepDecay,
    /// Ascent steps used to approximate the inner maximisation.
    pub inner_steps: usize,
    /// Use the update batch for the perturbation as well (vanilla SAM).
    pub shared_batch: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            m1: 320,
            m2: 32,
            eta1: 1.0,
            eta2: 0.1,
            gamma: 2.0,
            iterations: 2000,
            warmup_epochs: 5,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_schedule: StepDecay { milestones: vec![0.5, 0.75], factor: 0.1 },
            inner_steps: 1,
            shared_batch: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.m1 == 0 || self.m2 == 0 {
            return Err(Error::Config("m1 and m2 must be at least 1".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if !(self.eta1 >= 0.0) || !(self.eta2 >= 0.0) {
            return Err(Error::Config("step sizes must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `{theta : ||theta - center||_2 <= radius}`
#[derive(Debug, Clone, PartialEq)]
pub struct NormBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl NormBall {
    pub fn contains(&self, theta: &[f64]) -> bool {
        let d: f64 = theta.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        d.sqrt() <= self.radius
    }

    /// Radial projection onto the ball.
    pub fn project(&self, theta: &mut [f64]) {
        let mut offset: Vec<f64> = theta.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        project_into_ball(&mut offset, self.radius);
        for ((t, c), o) in theta.iter_mut().zip(&self.center).zip(&offset) {
            *t = c + o;
        }
    }
}

/// Rescales `delta` onto the sphere of radius `gamma` when it lies outside.
/// A zero vector is left untouched.
pub fn project_into_ball(delta: &mut [f64], gamma: f64) {
    let norm = tensor::l2_norm(delta);
    if norm > gamma && norm > 0.0 {
        let scale = gamma / norm;
        delta.iter_mut().for_each(|d| *d *= scale);
    }
}

/// Heavy-ball SGD with coupled weight decay.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl SgdMomentum {
    pub fn new(dim: usize, momentum: f64, weight_decay: f64) -> Self {
        Self { velocity: vec![0.0; dim], momentum, weight_decay }
    }

    /// `v <- momentum * v + (g + wd * theta)`, `theta <- theta - lr * v`
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + (g + self.weight_decay * *p);
            *p -= lr * *v;
        }
    }
}

fn shifted(model: &ModelParams, delta: &[f64]) -> Result<ModelParams> {
    let values = model.as_slice().iter().zip(delta).map(|(t, d)| t + d).collect();
    model.unflatten(values)
}

/// Worst-case perturbation from a single normalised ascent step on `B1`.
pub fn worst_case_perturbation(
    model: &ModelParams,
    x: &Tensor,
    y: &[usize],
    eta1: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    worst_case_perturbation_steps(model, x, y, eta1, gamma, 1)
}

/// Multi-step variant: repeated ascent from `theta + delta`, projected after every step.
pub fn worst_case_perturbation_steps(
    model: &ModelParams,
    x: &Tensor,
    y: &[usize],
    eta1: f64,
    gamma: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if y.is_empty() || x.rows() == 0 {
        return Err(Error::Input("perturbation batch is empty".into()));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Input(format!("gamma must be >= 0, got {gamma}")));
    }
    let mut delta = vec![0.0; model.dim()];
    if gamma == 0.0 || eta1 == 0.0 {
        return Ok(delta);
    }
    for step in 0..steps {
        let (_, g) = if step == 0 {
            loss_and_gradient(model, x, y)?
        } else {
            loss_and_gradient(&shifted(model, &delta)?, x, y)?
        };
        tensor::axpy(eta1, &g, &mut delta);
        project_into_ball(&mut delta, gamma);
    }
    Ok(delta)
}

/// Gradient of `L_B2` at `theta + delta(B1)`, plus the loss there.
pub fn perturbed_gradient(
    model: &ModelParams,
    b1: (&Tensor, &[usize]),
    b2: (&Tensor, &[usize]),
    config: &PretrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let delta = worst_case_perturbation_steps(model, b1.0, b1.1, config.eta1, config.gamma, config.inner_steps)?;
    if delta.iter().all(|&d| d == 0.0) {
        return loss_and_gradient(model, b2.0, b2.1);
    }
    loss_and_gradient(&shifted(model, &delta)?, b2.0, b2.1)
}

/// One plain DPAdapter update: `theta - eta2 * grad L_B2(theta + delta_B1)`.
pub fn dpadapter_step(
    model: &ModelParams,
    b1: (&Tensor, &[usize]),
    b2: (&Tensor, &[usize]),
    config: &PretrainConfig,
) -> Result<ModelParams> {
    let (_, g) = perturbed_gradient(model, b1, b2, config)?;
    let values = model.as_slice().iter().zip(&g).map(|(t, gi)| t - config.eta2 * gi).collect();
    model.unflatten(values)
}

/// Indices of a batch of `m` examples: without replacement when possible.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Vec<usize> {
    if m <= n {
        index::sample(rng, n, m).into_vec()
    } else {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Standard training for `warmup_epochs` shuffled epochs at the constant rate `eta2`.
pub fn warmup<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &Dataset,
    config: &PretrainConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    let mut params = model.clone();
    if config.warmup_epochs == 0 || data.is_empty() {
        return Ok(params);
    }
    let mut opt = SgdMomentum::new(params.dim(), config.momentum, config.weight_decay);
    let batch = config.m2.min(data.len());
    for _ in 0..config.warmup_epochs {
        let order = index::sample(rng, data.len(), data.len()).into_vec();
        for chunk in order.chunks(batch) {
            let (x, y) = data.batch(chunk);
            let (_, g) = loss_and_gradient(&params, &x, &y)?;
            opt.step(params.as_mut_slice(), &g, config.eta2);
        }
    }
    Ok(params)
}

/// Runs `method` from `init` on `data`. Warm-up is shared by all trained
/// methods and is not counted in `iterations`.
pub fn pretrain(
    method: PretrainMethod,
    init: &ModelParams,
    data: &Dataset,
    config: &PretrainConfig,
    seed: u64,
) -> Result<ModelParams> {
    config.validate()?;
    if method == PretrainMethod::Scratch {
        return Ok(init.clone());
    }
    if data.is_empty() {
        return Err(Error::Input("pre-training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = warmup(init, data, config, &mut rng)?;
    let mut opt = SgdMomentum::new(params.dim(), config.momentum, config.weight_decay);
    // With gamma = 0 the perturbation vanishes; skipping the B1 draw keeps the
    // random stream, and hence the trajectory, identical to standard training.
    let decoupled = method == PretrainMethod::DpAdapter && !config.shared_batch && config.gamma > 0.0;
    if decoupled && config.m1 > data.len() {
        warn!("m1 = {} exceeds the {} training examples; sampling with replacement", config.m1, data.len());
    }
    for it in 0..config.iterations {
        let lr = config.lr_schedule.rate(config.eta2, it, config.iterations);
        let b1_idx = decoupled.then(|| sample_batch(&mut rng, data.len(), config.m1));
        let b2_idx = sample_batch(&mut rng, data.len(), config.m2);
        let (x2, y2) = data.batch(&b2_idx);
        let g = match method {
            PretrainMethod::Standard => loss_and_gradient(&params, &x2, &y2)?.1,
            PretrainMethod::VanillaSam | PretrainMethod::DpAdapter => match &b1_idx {
                Some(idx) => {
                    let (x1, y1) = data.batch(idx);
                    perturbed_gradient(&params, (&x1, &y1), (&x2, &y2), config)?.1
                }
                None => perturbed_gradient(&params, (&x2, &y2), (&x2, &y2), config)?.1,
            },
            PretrainMethod::Scratch => unreachable!(),
        };
        opt.step(params.as_mut_slice(), &g, lr);
    }
    Ok(params)
}

pub fn train_standard(init: &ModelParams, data: &Dataset, config: &PretrainConfig, seed: u64) -> Result<ModelParams> {
    pretrain(PretrainMethod::Standard, init, data, config, seed)
}

/// Perturbation and update share one batch per iteration.
pub fn train_vanilla_sam(
    init: &ModelParams,
    data: &Dataset,
    config: &PretrainConfig,
    seed: u64,
) -> Result<ModelParams> {
    let shared = PretrainConfig { shared_batch: true, ..config.clone() };
    pretrain(PretrainMethod::VanillaSam, init, data, &shared, seed)
}

pub fn train_dpadapter(init: &ModelParams, data: &Dataset, config: &PretrainConfig, seed: u64) -> Result<ModelParams> {
    pretrain(PretrainMethod::DpAdapter, init, data, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_scales_onto_sphere() {
        let mut g: Vec<f64> = vec![6.0, 8.0];
        project_into_ball(&mut g, 2.0);
        assert!((g[0] - 1.2).abs() < 1e-15 && (g[1] - 1.6).abs() < 1e-15);
        assert!(tensor::l2_norm(&g) <= 2.0 + 1e-12);
        let mut z = vec![0.0; 3];
        project_into_ball(&mut z, 0.0);
        assert_eq!(z, vec![0.0; 3]);
    }

    #[test]
    fn norm_ball_membership() {
        let ball = NormBall { center: vec![1.0, 1.0], radius: 1.0 };
        assert!(ball.contains(&[1.0, 2.0]));
        assert!(!ball.contains(&[2.0, 2.0]));
        let mut p = vec![4.0, 5.0];
        ball.project(&mut p);
        assert!((tensor::l2_norm(&[p[0] - 1.0, p[1] - 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_decay_milestones() {
        let s = StepDecay { milestones: vec![0.5, 0.75], factor: 0.1 };
        assert_eq!(s.rate(1.0, 0, 100), 1.0);
        assert!((s.rate(1.0, 50, 100) - 0.1).abs() < 1e-15);
        assert!((s.rate(1.0, 80, 100) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PretrainConfig { gamma: -1.0, ..Default::default() }.validate().is_err());
        assert!(PretrainConfig { m1: 0, ..Default::default() }.validate().is_err());
        assert!(PretrainConfig::default().validate().is_ok());
    }

    #[test]
    fn oversized_batches_fall_back_to_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&mut rng, 5, 12);
        assert_eq!(b.len(), 12);
        assert!(b.iter().all(|&i| i < 5));
        let c = sample_batch(&mut rng, 50, 12);
        let mut sorted = c.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
    }
}
