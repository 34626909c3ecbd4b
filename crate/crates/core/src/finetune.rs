//! Private fine-tuning: DP-SGD and three variants (adaptive clipping,
//! decaying noise allocation, gradient embedding perturbation), plus the
//! random-round single-sample DP-SGD used by the utility analysis.
//!
//! Lots are Poisson-sampled with rate `q = lot_size / n`, matching the
//! accountant. Noised sums are divided by the expected lot size. Momentum is
//! applied after noising, so only the per-step gradient is privatised.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{accuracy, mean_loss, per_sample_gradients, ModelParams};
use crate::pretrain::SgdMomentum;
use crate::privacy::{calibrate_sigma, AccountantReport, AccountantState, PrivacySpec, SIGMA_BRACKET};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DpAlgorithm {
    DpSgd,
    AdpClip,
    AdpAlloc,
    Gep,
}

impl DpAlgorithm {
    pub const ALL: [DpAlgorithm; 4] = [Self::DpSgd, Self::AdpClip, Self::AdpAlloc, Self::Gep];

    pub fn name(self) -> &'static str {
        match self {
            Self::DpSgd => "dpsgd",
            Self::AdpClip => "adpclip",
            Self::AdpAlloc => "adpalloc",
            Self::Gep => "gep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSgdConfig {
    pub clip_norm: f64,
    /// Noise multiplier; overwritten by calibration inside [`finetune`].
    pub sigma: f64,
    /// Expected lot size.
    pub lot_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for DpSgdConfig {
    fn default() -> Self {
        Self { clip_norm: 4.0, sigma: 1.0, lot_size: 32, epochs: 100, lr: 0.01, momentum: 0.9 }
    }
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.lot_size == 0 {
            return Err(Error::Config("lot size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rescales `g` to norm at most `clip`.
pub fn clip_gradient(g: &[f64], clip: f64) -> Vec<f64> {
    let norm = tensor::l2_norm(g);
    if norm <= clip {
        return g.to_vec();
    }
    let factor = clip / norm;
    g.iter().map(|v| v * factor).collect()
}

/// Sum of clipped vectors. The result has norm at most `rows.len() * clip`.
pub fn clipped_sum(rows: &[Vec<f64>], clip: f64, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for g in rows {
        for (s, v) in sum.iter_mut().zip(clip_gradient(g, clip)) {
            *s += v;
        }
    }
    sum
}

/// Adds `N(0, (sigma * clip)^2)` per coordinate (skipped entirely when the scale is zero).
pub fn add_gaussian_noise<R: Rng + ?Sized>(v: &mut [f64], std: f64, rng: &mut R) {
    if std == 0.0 {
        return;
    }
    for x in v {
        let z: f64 = rng.sample(StandardNormal);
        *x += std * z;
    }
}

/// Privatised mean gradient: clip, sum, noise, divide by `lot_size`.
pub fn privatize<R: Rng + ?Sized>(
    per_sample: &[Vec<f64>],
    dim: usize,
    clip: f64,
    sigma: f64,
    lot_size: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut sum = clipped_sum(per_sample, clip, dim);
    add_gaussian_noise(&mut sum, sigma * clip, rng);
    let denom = lot_size as f64;
    sum.iter_mut().for_each(|s| *s /= denom);
    sum
}

/// One DP-SGD step from zero momentum state on an already drawn lot.
pub fn dpsgd_step<R: Rng + ?Sized>(
    model: &ModelParams,
    lot: (&Tensor, &[usize]),
    config: &DpSgdConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    let grads = per_sample_gradients(model, lot.0, lot.1)?;
    let g = privatize(&grads, model.dim(), config.clip_norm, config.sigma, config.lot_size, rng);
    let values = model.as_slice().iter().zip(&g).map(|(t, gi)| t - config.lr * gi).collect();
    model.unflatten(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdpClipConfig {
    pub initial_clip: f64,
    pub eta_c: f64,
    pub target_quantile: f64,
    /// Noise on the clipped-count query. `None` picks twice the calibrated
    /// joint multiplier so the gradient noise grows by about 15%.
    pub sigma_b: Option<f64>,
}

impl Default for AdpClipConfig {
    fn default() -> Self {
        Self { initial_clip: 4.0, eta_c: 0.2, target_quantile: 0.5, sigma_b: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdpClipState {
    pub clip: f64,
    pub eta_c: f64,
    pub target_quantile: f64,
    pub sigma_b: f64,
}

/// Geometric quantile tracking: `C <- C * exp(-eta_c * (b - target))`, where
/// `b` is the noised fraction of norms at or below the current threshold.
pub fn adpclip_update<R: Rng + ?Sized>(
    state: &AdpClipState,
    norms: &[f64],
    expected_count: f64,
    rng: &mut R,
) -> Result<f64> {
    if norms.is_empty() && expected_count <= 0.0 {
        return Err(Error::Input("adaptive clipping needs at least one norm".into()));
    }
    let m = if expected_count > 0.0 { expected_count } else { norms.len() as f64 };
    let below = norms.iter().filter(|&&n| n <= state.clip).count() as f64;
    let noise = if state.sigma_b > 0.0 { state.sigma_b * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
    let fraction = (below + noise) / m;
    Ok(state.clip * (-state.eta_c * (fraction - state.target_quantile)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdpAllocConfig {
    /// `sigma0` as a multiple of the constant calibrated multiplier.
    pub sigma0_factor: f64,
}

impl Default for AdpAllocConfig {
    fn default() -> Self {
        Self { sigma0_factor: 1.5 }
    }
}

/// `sigma_t = sigma0 * exp(-k t)` with `t` counted in epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdpAllocSchedule {
    pub sigma0: f64,
    pub k: f64,
}

pub fn adpalloc_sigma(schedule: &AdpAllocSchedule, t: f64) -> Result<f64> {
    if !(schedule.k > 0.0) {
        return Err(Error::Config(format!("decay rate k must be positive, got {}", schedule.k)));
    }
    if !(t >= 0.0) {
        return Err(Error::Input(format!("time must be nonnegative, got {t}")));
    }
    Ok(schedule.sigma0 * (-schedule.k * t).exp())
}

fn schedule_epsilon(
    schedule: &AdpAllocSchedule,
    q: f64,
    epochs: usize,
    steps_per_epoch: u64,
    delta: f64,
) -> Result<f64> {
    let mut acc = AccountantState::default();
    for e in 0..epochs {
        acc.compose(q, schedule.sigma0 * (-schedule.k * e as f64).exp(), steps_per_epoch)?;
    }
    Ok(acc.epsilon(delta)?.0)
}

/// Largest decay rate whose composed epsilon stays within budget, with `sigma0` fixed.
pub fn calibrate_decay(
    sigma0: f64,
    spec: &PrivacySpec,
    q: f64,
    epochs: usize,
    steps_per_epoch: u64,
) -> Result<AdpAllocSchedule> {
    let eps = |k: f64| schedule_epsilon(&AdpAllocSchedule { sigma0, k }, q, epochs, steps_per_epoch, spec.delta);
    let (mut lo, mut hi) = (0.0, 1.0);
    if eps(lo)? > spec.epsilon {
        return Err(Error::Calibration(format!("sigma0 = {sigma0} already exceeds epsilon {}", spec.epsilon)));
    }
    while eps(hi)? <= spec.epsilon {
        hi *= 2.0;
        if hi > 1e3 {
            return Ok(AdpAllocSchedule { sigma0, k: hi });
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? <= spec.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(Error::Calibration("no positive decay rate fits the budget".into()));
    }
    Ok(AdpAllocSchedule { sigma0, k: lo })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GepConfig {
    pub subspace_dim: usize,
    pub power_iters: usize,
    /// Public examples drawn from the upstream set at every basis refresh.
    pub public_samples: usize,
}

impl Default for GepConfig {
    fn default() -> Self {
        Self { subspace_dim: 8, power_iters: 20, public_samples: 100 }
    }
}

/// Orthonormal basis stored as `rank` rows of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl Basis {
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// `max |B^T B - I|` over all entries.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.rows.iter().enumerate() {
            for (j, b) in self.rows.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((tensor::dot(a, b) - target).abs());
            }
        }
        worst
    }
}

fn gram_schmidt(rows: &mut Vec<Vec<f64>>) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for mut v in rows.drain(..) {
        // Two passes keep the basis orthonormal to machine precision.
        for _ in 0..2 {
            for u in &kept {
                let c = tensor::dot(u, &v);
                tensor::axpy(-c, u, &mut v);
            }
        }
        let n = tensor::l2_norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            kept.push(v);
        }
    }
    *rows = kept;
}

/// Block power iteration on `G^T G` for the top principal directions of the
/// rows of `public_grads`.
pub fn power_method_basis<R: Rng + ?Sized>(
    public_grads: &[Vec<f64>],
    config: &GepConfig,
    rng: &mut R,
) -> Result<Basis> {
    if config.power_iters == 0 {
        return Err(Error::Config("power_iters must be at least 1".into()));
    }
    if config.subspace_dim == 0 || config.subspace_dim > public_grads.len() {
        return Err(Error::Config(format!(
            "subspace_dim {} must lie in [1, {}]",
            config.subspace_dim,
            public_grads.len()
        )));
    }
    let dim = public_grads[0].len();
    if public_grads.iter().all(|g| g.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate("all public gradients are zero".into()));
    }
    let mut rows: Vec<Vec<f64>> =
        (0..config.subspace_dim).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
    gram_schmidt(&mut rows);
    for _ in 0..config.power_iters {
        rows = rows
            .iter()
            .map(|v| {
                let mut out = vec![0.0; dim];
                for g in public_grads {
                    tensor::axpy(tensor::dot(g, v), g, &mut out);
                }
                out
            })
            .collect();
        gram_schmidt(&mut rows);
        if rows.is_empty() {
            return Err(Error::Degenerate("power iteration collapsed".into()));
        }
    }
    Ok(Basis { dim, rows })
}

/// Per-example subspace coordinates and residuals.
pub type GepSplit = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Splits each gradient into its subspace coordinates `B^T g` and the residual
/// `g - B B^T g`.
pub fn gep_project(private_grads: &[Vec<f64>], basis: &Basis) -> Result<GepSplit> {
    let err = basis.orthonormality_error();
    if err > 1e-8 {
        return Err(Error::Precondition(format!("basis is not orthonormal (max deviation {err:e})")));
    }
    let mut embeddings = Vec::with_capacity(private_grads.len());
    let mut residuals = Vec::with_capacity(private_grads.len());
    for g in private_grads {
        if g.len() != basis.dim {
            return Err(Error::Input(format!("gradient length {} vs basis dim {}", g.len(), basis.dim)));
        }
        let emb: Vec<f64> = basis.rows.iter().map(|b| tensor::dot(b, g)).collect();
        let mut res = g.clone();
        for (b, c) in basis.rows.iter().zip(&emb) {
            tensor::axpy(-c, b, &mut res);
        }
        embeddings.push(emb);
        residuals.push(res);
    }
    Ok((embeddings, residuals))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub dpsgd: DpSgdConfig,
    pub adpclip: AdpClipConfig,
    pub adpalloc: AdpAllocConfig,
    pub gep: GepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub clip_norm: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: ModelParams,
    pub history: Vec<EpochMetrics>,
    pub report: AccountantReport,
    /// False for the `epsilon = inf` sentinel run.
    pub private: bool,
}

fn poisson_lot<R: Rng + ?Sized>(rng: &mut R, n: usize, q: f64) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// Noise multiplier of a single query that releases two independent Gaussian
/// queries with multipliers `a` and `b`.
fn joint_multiplier(a: f64, b: f64) -> f64 {
    (a.powi(-2) + b.powi(-2)).powf(-0.5)
}

/// Fine-tunes `init` on `train` under `spec`. `public` supplies the gradients
/// for the GEP anchor subspace; `test` is only used for the metrics history.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    algorithm: DpAlgorithm,
    init: &ModelParams,
    train: &Dataset,
    test: &Dataset,
    public: Option<&Dataset>,
    spec: &PrivacySpec,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    let dp = &config.dpsgd;
    dp.validate()?;
    if train.is_empty() {
        return Err(Error::Input("fine-tuning set is empty".into()));
    }
    let n = train.len();
    let q = (dp.lot_size as f64 / n as f64).min(1.0);
    let steps_per_epoch = n.div_ceil(dp.lot_size) as u64;
    let total_steps = steps_per_epoch * dp.epochs as u64;
    let private = spec.is_private();
    let joint = calibrate_sigma(spec, q, total_steps)?;

    // Per-algorithm noise layout, all summing to the same accounted multiplier.
    let mut clip_state = None;
    let mut alloc = None;
    let mut grad_sigma = joint;
    match algorithm {
        DpAlgorithm::DpSgd => {}
        DpAlgorithm::AdpClip => {
            let sigma_b = if private {
                let sb = config.adpclip.sigma_b.unwrap_or(2.0 * joint);
                if sb <= joint {
                    return Err(Error::Calibration(format!(
                        "count noise {sb} must exceed the joint multiplier {joint}"
                    )));
                }
                grad_sigma = (joint.powi(-2) - sb.powi(-2)).powf(-0.5);
                debug_assert!((joint_multiplier(grad_sigma, sb) - joint).abs() <= 1e-9 * joint);
                sb
            } else {
                0.0
            };
            clip_state = Some(AdpClipState {
                clip: config.adpclip.initial_clip,
                eta_c: config.adpclip.eta_c,
                target_quantile: config.adpclip.target_quantile,
                sigma_b,
            });
        }
        DpAlgorithm::AdpAlloc => {
            if private {
                let sigma0 = (config.adpalloc.sigma0_factor * joint).min(SIGMA_BRACKET.1);
                alloc = Some(calibrate_decay(sigma0, spec, q, dp.epochs, steps_per_epoch)?);
            }
        }
        DpAlgorithm::Gep => {
            if public.is_none() {
                return Err(Error::Config("GEP needs a public dataset for the anchor subspace".into()));
            }
            grad_sigma = std::f64::consts::SQRT_2 * joint;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init.clone();
    let mut opt = SgdMomentum::new(params.dim(), dp.momentum, 0.0);
    let mut accountant = AccountantState::default();
    let mut history = Vec::with_capacity(dp.epochs);
    let dim = params.dim();

    for epoch in 0..dp.epochs {
        let sigma_epoch = match &alloc {
            Some(s) => adpalloc_sigma(s, epoch as f64)?,
            None => grad_sigma,
        };
        let basis = match (algorithm, public) {
            (DpAlgorithm::Gep, Some(pubset)) => {
                let m = config.gep.public_samples.min(pubset.len());
                let idx = crate::pretrain::sample_batch(&mut rng, pubset.len(), m);
                let (x, y) = pubset.batch(&idx);
                let grads = per_sample_gradients(&params, &x, &y)?;
                Some(power_method_basis(&grads, &config.gep, &mut rng)?)
            }
            _ => None,
        };
        for _ in 0..steps_per_epoch {
            let lot = poisson_lot(&mut rng, n, q);
            let grads = if lot.is_empty() {
                Vec::new()
            } else {
                let (x, y) = train.batch(&lot);
                per_sample_gradients(&params, &x, &y)?
            };
            let g = match (&basis, clip_state.as_mut()) {
                (Some(basis), _) => {
                    let (emb, res) = gep_project(&grads, basis)?;
                    let c = dp.clip_norm;
                    let mut emb_sum = clipped_sum(&emb, c, basis.rank());
                    add_gaussian_noise(&mut emb_sum, sigma_epoch * c, &mut rng);
                    let mut g = clipped_sum(&res, c, dim);
                    add_gaussian_noise(&mut g, sigma_epoch * c, &mut rng);
                    for (b, e) in basis.rows.iter().zip(&emb_sum) {
                        tensor::axpy(*e, b, &mut g);
                    }
                    g.iter_mut().for_each(|v| *v /= dp.lot_size as f64);
                    g
                }
                (None, Some(state)) => {
                    let norms: Vec<f64> = grads.iter().map(|g| tensor::l2_norm(g)).collect();
                    let g = privatize(&grads, dim, state.clip, sigma_epoch, dp.lot_size, &mut rng);
                    state.clip = adpclip_update(state, &norms, dp.lot_size as f64, &mut rng)?;
                    g
                }
                (None, None) => privatize(&grads, dim, dp.clip_norm, sigma_epoch, dp.lot_size, &mut rng),
            };
            opt.step(params.as_mut_slice(), &g, dp.lr);
        }
        if private {
            let accounted = match algorithm {
                DpAlgorithm::AdpAlloc => sigma_epoch,
                _ => joint,
            };
            accountant.compose(q, accounted, steps_per_epoch)?;
        }
        let epsilon = if private { accountant.epsilon(spec.delta)?.0 } else { f64::INFINITY };
        history.push(EpochMetrics {
            epoch,
            train_loss: mean_loss(&params, &train.features, &train.labels)?,
            test_accuracy: accuracy(&params, &test.features, &test.labels)?,
            clip_norm: clip_state.as_ref().map_or(dp.clip_norm, |s| s.clip),
            sigma: sigma_epoch,
            epsilon,
        });
    }

    let report = if private {
        let report = accountant.report(spec.delta)?;
        if report.epsilon > spec.epsilon * (1.0 + 1e-9) {
            return Err(Error::BudgetOverrun { spent: report.epsilon, target: spec.epsilon });
        }
        report
    } else {
        AccountantReport {
            orders: Vec::new(),
            ledger: Vec::new(),
            steps: total_steps,
            best_order: f64::NAN,
            epsilon: f64::INFINITY,
            delta: spec.delta,
        }
    };
    Ok(FinetuneOutcome { model: params, history, report, private })
}

/// Per-example objective for single-sample private SGD.
pub trait SampleObjective {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn sample_gradient(&self, index: usize, theta: &[f64]) -> Vec<f64>;
    /// Mean loss over all examples.
    fn loss(&self, theta: &[f64]) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomRoundConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Parameter-robustness bound of the model output map.
    pub rho: f64,
    /// Lipschitz constant of the loss in the model output.
    pub beta1: f64,
    /// Smoothness of the loss in the model output.
    pub beta2: f64,
    /// Smoothness of the model output in the parameters.
    pub beta: f64,
    /// `L(theta_0) - inf L`, used by the step-size rule.
    pub initial_gap: f64,
    /// Pins the round count instead of drawing it.
    pub rounds: Option<u64>,
    /// Multiplies the noise std; 1 reproduces the calibrated noise, 0 disables it.
    pub noise_scale: f64,
}

impl RandomRoundConfig {
    /// `rho^2 beta2 + beta beta1`
    pub fn smoothness(&self) -> f64 {
        self.rho * self.rho * self.beta2 + self.beta * self.beta1
    }

    /// Per-coordinate noise variance `4 beta1^2 rho^2 ln(3n/delta) ln(2/delta) / eps^2`.
    pub fn noise_variance(&self, n: usize) -> f64 {
        4.0 * self.beta1.powi(2) * self.rho.powi(2) * (3.0 * n as f64 / self.delta).ln() * (2.0 / self.delta).ln()
            / self.epsilon.powi(2)
    }

    /// `min(1 / smoothness, D_f / (sigma n))`, with
    /// `sigma = 2 beta1 rho sqrt(1 + d ln(3n/delta) ln(2/delta) / eps^2)`.
    pub fn step_size(&self, n: usize, dim: usize) -> f64 {
        let smooth = self.smoothness();
        let d_f = (2.0 * self.initial_gap / smooth).sqrt();
        let logs = (3.0 * n as f64 / self.delta).ln() * (2.0 / self.delta).ln();
        let sigma = 2.0 * self.beta1 * self.rho * (1.0 + dim as f64 * logs / self.epsilon.powi(2)).sqrt();
        let noise_limited = if sigma > 0.0 { d_f / (sigma * n as f64) } else { f64::INFINITY };
        (1.0 / smooth).min(noise_limited)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Domain("epsilon must be positive and delta in (0, 1)".into()));
        }
        if !(self.smoothness() > 0.0) {
            return Err(Error::Config("rho^2 beta2 + beta beta1 must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform draw from `{1, ..., n^2}`.
pub fn draw_rounds<R: Rng + ?Sized>(rng: &mut R, n: usize) -> u64 {
    let n = n as u64;
    rng.random_range(1..=n * n)
}

/// Runs the random-round algorithm and returns the last iterate.
pub fn random_round_dpsgd<O: SampleObjective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    theta0: &[f64],
    config: &RandomRoundConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = objective.len();
    if n == 0 {
        return Err(Error::Input("objective has no examples".into()));
    }
    let dim = objective.dim();
    let eta = config.step_size(n, dim);
    let rounds = config.rounds.unwrap_or_else(|| draw_rounds(rng, n));
    let std = config.noise_scale * config.noise_variance(n).sqrt();
    let noise = Normal::new(0.0, std).map_err(|e| Error::Domain(e.to_string()))?;
    let mut theta = theta0.to_vec();
    for _ in 0..rounds {
        let i = rng.random_range(0..n);
        let g = objective.sample_gradient(i, &theta);
        for (t, gi) in theta.iter_mut().zip(&g) {
            let z = if std > 0.0 { noise.sample(rng) } else { 0.0 };
            *t -= eta * (gi + z);
        }
    }
    Ok(theta)
}
