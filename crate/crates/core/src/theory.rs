//! Numerical checks of the convergence results on synthetic objectives with
//! known constants.
//!
//! Two families:
//! - [`QuadraticFamily`]: `L_i(theta) = 1/2 sum_j lambda_j (theta_j - c_ij)^2`,
//!   PL with `mu = 1/(2 lambda_min)`, smoothness `lambda_max`, constant
//!   gradient variance.
//! - [`RescaledLinearFamily`]: `L_i(theta) = 1/2 (rho theta.x_i - y_i)^2` with
//!   unit-norm `x_i`, so the output map has sensitivity exactly `rho`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finetune::{random_round_dpsgd, RandomRoundConfig, SampleObjective};
use crate::pretrain::sample_batch;
use crate::tensor;

/// Constants of the smoothness/Lipschitz/PL assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryParams {
    /// Smoothness of the model output in the parameters.
    pub beta: f64,
    /// Lipschitz constant of the loss in the model output.
    pub beta1: f64,
    /// Smoothness of the loss in the model output.
    pub beta2: f64,
    pub sigma_hat_sq: f64,
    pub mu: f64,
    pub rho: f64,
}

impl TheoryParams {
    /// `rho^2 beta2 + beta beta1`
    pub fn smoothness(&self) -> f64 {
        self.rho * self.rho * self.beta2 + self.beta * self.beta1
    }
}

/// Objective with a known minimum and declared constants.
pub trait TheoryObjective: SampleObjective + Sync {
    fn min_loss(&self) -> f64;
    fn params(&self) -> TheoryParams;

    fn full_gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.batch_gradient(&(0..self.len()).collect::<Vec<_>>(), theta)
    }

    fn batch_gradient(&self, batch: &[usize], theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for &i in batch {
            tensor::axpy(1.0, &self.sample_gradient(i, theta), &mut g);
        }
        let m = batch.len() as f64;
        g.iter_mut().for_each(|v| *v /= m);
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFamily {
    pub curvatures: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

impl QuadraticFamily {
    /// `n` centres drawn from `N(0, spread^2 I)`; `spread = 0` makes every term identical.
    pub fn random(curvatures: Vec<f64>, n: usize, spread: f64, seed: u64) -> Result<Self> {
        if curvatures.is_empty() || curvatures.iter().any(|&l| !(l > 0.0)) || n == 0 {
            return Err(Error::Input("curvatures must be positive and n >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = curvatures.len();
        let centers = (0..n).map(|_| (0..d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        Ok(Self { curvatures, centers })
    }

    pub fn minimizer(&self) -> Vec<f64> {
        let n = self.centers.len() as f64;
        (0..self.dim()).map(|j| self.centers.iter().map(|c| c[j]).sum::<f64>() / n).collect()
    }

    fn lambda_min(&self) -> f64 {
        self.curvatures.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn lambda_max(&self) -> f64 {
        self.curvatures.iter().copied().fold(0.0, f64::max)
    }
}

impl SampleObjective for QuadraticFamily {
    fn dim(&self) -> usize {
        self.curvatures.len()
    }

    fn len(&self) -> usize {
        self.centers.len()
    }

    fn sample_gradient(&self, index: usize, theta: &[f64]) -> Vec<f64> {
        let c = &self.centers[index];
        self.curvatures.iter().zip(theta).zip(c).map(|((l, t), ci)| l * (t - ci)).collect()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let total: f64 = self
            .centers
            .iter()
            .map(|c| self.curvatures.iter().zip(theta).zip(c).map(|((l, t), ci)| l * (t - ci) * (t - ci)).sum::<f64>())
            .sum();
        0.5 * total / self.len() as f64
    }
}

impl TheoryObjective for QuadraticFamily {
    fn min_loss(&self) -> f64 {
        self.loss(&self.minimizer())
    }

    fn params(&self) -> TheoryParams {
        // Per-sample gradient deviation is independent of theta:
        // sum_j lambda_j^2 Var_i(c_ij).
        let mean = self.minimizer();
        let n = self.len() as f64;
        let sigma_hat_sq = self
            .curvatures
            .iter()
            .enumerate()
            .map(|(j, l)| l * l * self.centers.iter().map(|c| (c[j] - mean[j]).powi(2)).sum::<f64>() / n)
            .sum();
        TheoryParams {
            beta: 0.0,
            beta1: 1.0,
            beta2: self.lambda_max(),
            sigma_hat_sq,
            mu: 1.0 / (2.0 * self.lambda_min()),
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescaledLinearFamily {
    pub rho: f64,
    /// Unit-norm inputs.
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Declared constants for the step-size rule.
    pub beta: f64,
    pub beta1: f64,
}

impl RescaledLinearFamily {
    /// Targets `y_i = w.x_i + noise * N(0, 1)` for a random unit `w`.
    pub fn random(rho: f64, n: usize, d: usize, noise: f64, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 || !(rho > 0.0) {
            return Err(Error::Input("need n, d >= 1 and rho > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = tensor::l2_norm(&v);
            v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
        };
        let w = unit(&mut rng);
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng)).collect();
        let targets =
            inputs.iter().map(|x| tensor::dot(&w, x) + noise * rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Self { rho, inputs, targets, beta: 1.0, beta1: 1.0 })
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..self.clone() }
    }

    /// Least-squares minimiser in parameter space (minimum-norm if rank deficient).
    pub fn minimizer(&self) -> Vec<f64> {
        let d = self.dim();
        let x = DMatrix::from_fn(self.len(), d, |i, j| self.inputs[i][j]);
        let y = DVector::from_column_slice(&self.targets);
        let phi = x.svd(true, true).solve(&y, 1e-12).expect("SVD with both factors");
        phi.iter().map(|v| v / self.rho).collect()
    }

    /// `E ||grad L_i||^2 = 2 rho^2 L(theta)` bounds the gradient variance on
    /// the sublevel set `{L <= level}`.
    pub fn variance_bound(&self, level: f64) -> f64 {
        2.0 * self.rho * self.rho * level
    }

    /// Largest eigenvalue of a per-sample Hessian, `rho^2 ||x_i||^2 = rho^2`.
    pub fn sample_hessian_norm(&self) -> f64 {
        self.rho * self.rho
    }

    fn residual(&self, index: usize, theta: &[f64]) -> f64 {
        self.rho * tensor::dot(theta, &self.inputs[index]) - self.targets[index]
    }
}

impl SampleObjective for RescaledLinearFamily {
    fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn sample_gradient(&self, index: usize, theta: &[f64]) -> Vec<f64> {
        let r = self.residual(index, theta);
        self.inputs[index].iter().map(|x| self.rho * r * x).collect()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let total: f64 = (0..self.len()).map(|i| self.residual(i, theta).powi(2)).sum();
        0.5 * total / self.len() as f64
    }
}

impl TheoryObjective for RescaledLinearFamily {
    fn min_loss(&self) -> f64 {
        self.loss(&self.minimizer())
    }

    fn params(&self) -> TheoryParams {
        let gram = DMatrix::from_fn(self.dim(), self.dim(), |a, b| {
            self.inputs.iter().map(|x| x[a] * x[b]).sum::<f64>() / self.len() as f64
        });
        let lambda_min = gram.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        TheoryParams {
            beta: self.beta,
            beta1: self.beta1,
            beta2: 1.0,
            sigma_hat_sq: f64::NAN,
            mu: 1.0 / (2.0 * self.rho * self.rho * lambda_min.max(1e-300)),
            rho: self.rho,
        }
    }
}

/// Mean, sample standard deviation and per-seed values at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    /// Analytic upper bound at this point, where one exists.
    pub bound: Option<f64>,
    #[serde(skip)]
    pub per_seed: Vec<f64>,
}

impl SweepPoint {
    fn from_samples(value: f64, per_seed: Vec<f64>, bound: Option<f64>) -> Self {
        let n = per_seed.len();
        let mean = per_seed.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { value, mean, std: var.sqrt(), n_seeds: n, bound, per_seed }
    }
}

/// Outcome of one decoupled-batch run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamRun {
    /// `(1/T) sum_{t=1..T} (L(theta_t) - L*)`
    pub mean_gap: f64,
    pub final_gap: f64,
}

/// `theta <- theta - eta grad L_B2(theta + eta grad L_B1(theta))`, with
/// `eta = 1 / (4 smoothness)` and no normalisation of the ascent step.
/// Perturbation and update batches come from separate streams so runs with
/// different `b1` share their update batches.
pub fn run_decoupled_sam<O: TheoryObjective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    b1: usize,
    b2: usize,
    iterations: usize,
    seed: u64,
) -> Result<SamRun> {
    if b1 == 0 || b2 == 0 || iterations == 0 {
        return Err(Error::Input("batch sizes and iteration count must be positive".into()));
    }
    let eta = 1.0 / (4.0 * objective.params().smoothness());
    let n = objective.len();
    let floor = objective.min_loss();
    let mut perturb_rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_rng.set_stream(1);
    let mut update_rng = ChaCha8Rng::seed_from_u64(seed);
    update_rng.set_stream(2);
    let mut theta = theta0.to_vec();
    let mut gap_sum = 0.0;
    for _ in 0..iterations {
        let batch1 = sample_batch(&mut perturb_rng, n, b1.min(n));
        let batch2 = sample_batch(&mut update_rng, n, b2.min(n));
        let ascent = objective.batch_gradient(&batch1, &theta);
        let probe: Vec<f64> = theta.iter().zip(&ascent).map(|(t, g)| t + eta * g).collect();
        let g = objective.batch_gradient(&batch2, &probe);
        tensor::axpy(-eta, &g, &mut theta);
        gap_sum += objective.loss(&theta) - floor;
    }
    Ok(SamRun { mean_gap: gap_sum / iterations as f64, final_gap: objective.loss(&theta) - floor })
}

/// `mu (L(theta_0)/T + sigma_hat^2 / (16 smoothness) (1/b2 + 1/b1))`
pub fn decoupled_sam_bound(params: &TheoryParams, initial_loss: f64, iterations: usize, b1: usize, b2: usize) -> f64 {
    params.mu
        * (initial_loss / iterations as f64
            + params.sigma_hat_sq / (16.0 * params.smoothness()) * (1.0 / b2 as f64 + 1.0 / b1 as f64))
}

/// Time-averaged suboptimality per perturbation batch size, seeds paired across sizes.
pub fn run_decoupled_sam_sweep<O: TheoryObjective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    b1_sizes: &[usize],
    b2: usize,
    iterations: usize,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    let params = objective.params();
    let initial = objective.loss(theta0);
    b1_sizes
        .iter()
        .map(|&b1| {
            let gaps = seeds
                .iter()
                .map(|&s| run_decoupled_sam(objective, theta0, b1, b2, iterations, s).map(|r| r.mean_gap))
                .collect::<Result<Vec<_>>>()?;
            let bound = decoupled_sam_bound(&params, initial, iterations, b1.min(objective.len()), b2);
            Ok(SweepPoint::from_samples(b1 as f64, gaps, Some(bound)))
        })
        .collect()
}

/// Random-round private SGD settings shared by the utility sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilitySweep {
    pub epsilon: f64,
    pub delta: f64,
    pub noise_scale: f64,
}

fn random_round_config(family: &RescaledLinearFamily, theta0: &[f64], sweep: &UtilitySweep) -> RandomRoundConfig {
    RandomRoundConfig {
        epsilon: sweep.epsilon,
        delta: sweep.delta,
        rho: family.rho,
        beta1: family.beta1,
        beta2: 1.0,
        beta: family.beta,
        initial_gap: family.loss(theta0) - family.min_loss(),
        rounds: None,
        noise_scale: sweep.noise_scale,
    }
}

fn utility_gaps(
    family: &RescaledLinearFamily,
    theta0: &[f64],
    sweep: &UtilitySweep,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    let cfg = random_round_config(family, theta0, sweep);
    let floor = family.min_loss();
    seeds
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            random_round_dpsgd(family, theta0, &cfg, &mut rng).map(|theta| family.loss(&theta) - floor)
        })
        .collect()
}

/// Final suboptimality of random-round private SGD for each sensitivity `rho`.
pub fn run_rho_utility_sweep(
    family: &RescaledLinearFamily,
    theta0: &[f64],
    rhos: &[f64],
    sweep: &UtilitySweep,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    rhos.iter()
        .map(|&rho| {
            let gaps = utility_gaps(&family.with_rho(rho), theta0, sweep, seeds)?;
            Ok(SweepPoint::from_samples(rho, gaps, None))
        })
        .collect()
}

/// Final suboptimality for each privacy budget at fixed `rho`.
pub fn run_epsilon_utility_sweep(
    family: &RescaledLinearFamily,
    theta0: &[f64],
    epsilons: &[f64],
    sweep: &UtilitySweep,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    epsilons
        .iter()
        .map(|&epsilon| {
            let gaps = utility_gaps(family, theta0, &UtilitySweep { epsilon, ..*sweep }, seeds)?;
            Ok(SweepPoint::from_samples(epsilon, gaps, None))
        })
        .collect()
}

/// Fraction of seeds in which `hi` exceeds `lo` (paired by position).
pub fn paired_agreement(lo: &SweepPoint, hi: &SweepPoint) -> f64 {
    let wins = lo.per_seed.iter().zip(&hi.per_seed).filter(|(a, b)| b > a).count();
    wins as f64 / lo.per_seed.len().max(1) as f64
}

/// Largest `(L - L*) / ||grad L||^2` over coordinate-axis and random probes.
/// Under the PL condition this never exceeds `mu`.
pub fn measured_pl_constant<O: TheoryObjective + ?Sized>(
    objective: &O,
    center: &[f64],
    random_probes: usize,
    seed: u64,
) -> f64 {
    let floor = objective.min_loss();
    let d = objective.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis_probes = (0..d).map(|j| {
        let mut p = center.to_vec();
        p[j] += 1.0;
        p
    });
    let random = (0..random_probes)
        .map(|_| center.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>())
        .collect::<Vec<_>>();
    axis_probes
        .chain(random)
        .filter_map(|p| {
            let g = objective.full_gradient(&p);
            let gn = tensor::dot(&g, &g);
            (gn > 0.0).then(|| (objective.loss(&p) - floor) / gn)
        })
        .fold(0.0, f64::max)
}

/// `(1/n) sum_i ||grad L_i(theta) - grad L(theta)||^2`
pub fn gradient_variance<O: TheoryObjective + ?Sized>(objective: &O, theta: &[f64]) -> f64 {
    let full = objective.full_gradient(theta);
    let n = objective.len();
    (0..n)
        .map(|i| {
            let g = objective.sample_gradient(i, theta);
            g.iter().zip(&full).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / n as f64
}

/// Largest finite-difference ratio `||grad L_i(a) - grad L_i(b)|| / ||a - b||`
/// over random pairs and all examples.
pub fn measured_sample_smoothness<O: TheoryObjective + ?Sized>(objective: &O, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = objective.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1e-3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let step = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        for i in 0..objective.len() {
            let ga = objective.sample_gradient(i, &a);
            let gb = objective.sample_gradient(i, &b);
            let diff = ga.iter().zip(&gb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff / step);
        }
    }
    worst
}
