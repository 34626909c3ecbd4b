//! Fixtures and measurements shared by the integration targets.
#![allow(dead_code, clippy::excessive_precision)]

use dpadapter::finetune::{
    clip_gradient, clipped_sum, draw_rounds, random_round_dpsgd, RandomRoundConfig, SampleObjective,
};
use dpadapter::model::{loss_and_gradient, mean_loss, per_sample_gradients};
use dpadapter::tensor::l2_norm;
use dpadapter::{ModelParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// `(q, sigma, alpha, rdp)` from an independent 80-digit evaluation
/// (`tests/oracles/rdp_oracle.py`).
pub const RDP_ORACLE: [(f64, f64, f64, f64); 20] = [
    (0.001, 0.8, 2.0, 3.7707260727711085471e-6),
    (0.001, 1.0, 8.0, 6.9879416490941471102e-6),
    (0.001, 2.0, 32.0, 4.5873148985516597903e-6),
    (0.001, 5.0, 256.0, 5.2793966565790243182e-6),
    (0.01, 0.7, 3.0, 0.0012204873417287720077),
    (0.01, 1.0, 16.0, 3.0878507836962446159),
    (0.01, 1.5, 64.0, 9.5439540968435415506),
    (0.01, 4.0, 128.0, 0.00045100945697498200783),
    (0.032, 1.1, 5.0, 0.0040032348755014164553),
    (0.032, 1.1, 12.0, 1.2075552104744291252),
    (0.032, 2.5, 40.0, 0.0046841937010441871364),
    (0.05, 0.9, 6.0, 0.24659325247882188373),
    (0.05, 3.0, 24.0, 0.0040683920734171407455),
    (0.1, 1.0, 4.0, 0.058672606960080511514),
    (0.1, 2.0, 20.0, 0.18831361344655928304),
    (0.2, 1.2, 10.0, 1.6928268307238775767),
    (0.2, 6.0, 100.0, 0.12423528749634857573),
    (0.5, 1.0, 3.0, 0.69688911859804407817),
    (0.5, 2.0, 48.0, 5.292113064663051826),
    (0.9, 3.0, 7.0, 0.33192972540026021055),
];

/// Closed-form Gaussian-mechanism multiplier at `(1, 1e-5)`, from the same script.
pub const GAUSSIAN_SIGMA_1_1EM5: f64 = 4.8448052626053894213;

/// `(epsilon, q, steps)` points for the calibration round trip.
pub fn calibration_grid() -> Vec<(f64, f64, u64)> {
    let mut grid: Vec<(f64, f64, u64)> = [1.0, 4.0]
        .into_iter()
        .flat_map(|e| [0.01, 0.1].into_iter().flat_map(move |q| [100u64, 1000].map(|t| (e, q, t))))
        .collect();
    grid.extend([(1.0, 0.032, 940), (4.0, 0.032, 940), (2.0, 0.01, 5000), (8.0, 0.1, 100)]);
    grid
}

/// Small MLP with perturbed biases, so no ReLU sits exactly on its kink, and a random batch.
pub fn random_problem(seed: u64) -> (ModelParams, Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [5, 7, 6, 3];
    let init = ModelParams::init(&sizes, &mut rng).unwrap();
    let values = init.flatten().into_iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let model = init.unflatten(values).unwrap();
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let labels = (0..6).map(|_| rng.random_range(0..3)).collect();
    (model, Tensor::from_rows(&rows).unwrap(), labels)
}

pub fn finite_difference(model: &ModelParams, x: &Tensor, y: &[usize], h: f64) -> Vec<f64> {
    let base = model.flatten();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let lp = mean_loss(&model.unflatten(plus).unwrap(), x, y).unwrap();
            let lm = mean_loss(&model.unflatten(minus).unwrap(), x, y).unwrap();
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// `||tape - fd|| / ||fd||` on `random_problem(seed)`.
pub fn gradient_check_error(seed: u64) -> f64 {
    let (model, x, y) = random_problem(seed);
    let (_, grad) = loss_and_gradient(&model, &x, &y).unwrap();
    let fd = finite_difference(&model, &x, &y, 1e-6);
    let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
    l2_norm(&diff) / l2_norm(&fd).max(1e-12)
}

/// Largest coordinate gap between the mean per-example gradient and the batch gradient.
pub fn per_sample_mean_gap(seed: u64) -> f64 {
    let (model, x, y) = random_problem(seed);
    let (_, batch) = loss_and_gradient(&model, &x, &y).unwrap();
    let rows = per_sample_gradients(&model, &x, &y).unwrap();
    let n = rows.len() as f64;
    batch.iter().enumerate().map(|(j, b)| (rows.iter().map(|r| r[j]).sum::<f64>() / n - b).abs()).fold(0.0, f64::max)
}

/// Heavy-tailed random batches; returns the number of steps where a clipped
/// row or the clipped sum broke its norm bound.
pub fn clipping_violations(steps: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heavy = StudentT::new(1.5).unwrap();
    let mut bad = 0;
    for _ in 0..steps {
        let dim = rng.random_range(1..20);
        let rows = rng.random_range(1..12);
        let clip = 10f64.powf(rng.random_range(-3.0..2.0));
        let grads: Vec<Vec<f64>> = (0..rows).map(|_| (0..dim).map(|_| heavy.sample(&mut rng)).collect()).collect();
        let rows_ok = grads.iter().all(|g| l2_norm(&clip_gradient(g, clip)) <= clip * (1.0 + 1e-12));
        let sum_ok = l2_norm(&clipped_sum(&grads, clip, dim)) <= rows as f64 * clip * (1.0 + 1e-12);
        if !(rows_ok && sum_ok) {
            bad += 1;
        }
    }
    bad
}

/// Constant loss: every random-round update is pure noise.
pub struct Flat {
    pub n: usize,
    pub dim: usize,
}

impl SampleObjective for Flat {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.n
    }
    fn sample_gradient(&self, _: usize, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn loss(&self, _: &[f64]) -> f64 {
        0.0
    }
}

pub fn rr_config(rounds: Option<u64>, noise_scale: f64) -> RandomRoundConfig {
    RandomRoundConfig {
        epsilon: 2.0,
        delta: 1e-5,
        rho: 1.0,
        beta1: 1.0,
        beta2: 1.0,
        beta: 1.0,
        initial_gap: 1.0,
        rounds,
        noise_scale,
    }
}

/// Chi-square statistic and p-value of `draws` round counts for `n` examples.
pub fn rounds_chi_square(n: usize, draws: usize, seed: u64) -> (f64, f64) {
    let cells = n * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; cells];
    for _ in 0..draws {
        let r = draw_rounds(&mut rng, n);
        assert!((1..=cells as u64).contains(&r), "round count {r} outside 1..={cells}");
        counts[(r - 1) as usize] += 1;
    }
    let expected = draws as f64 / cells as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    (stat, 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat))
}

/// Empirical per-round noise variance on the flat objective, and the calibrated value.
pub fn random_round_noise_variance() -> (f64, f64) {
    let objective = Flat { n: 50, dim: 500 };
    let rounds = 40;
    let cfg = rr_config(Some(rounds), 1.0);
    let eta = cfg.step_size(objective.n, objective.dim);
    let theta0 = vec![0.0; objective.dim];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut sum_sq, mut count) = (0.0, 0usize);
    for _ in 0..200 {
        // theta_R = -eta * (z_1 + ... + z_R) per coordinate.
        let theta = random_round_dpsgd(&objective, &theta0, &cfg, &mut rng).unwrap();
        sum_sq += theta.iter().map(|t| (t / eta).powi(2)).sum::<f64>();
        count += theta.len();
    }
    (sum_sq / count as f64 / rounds as f64, cfg.noise_variance(objective.n))
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
