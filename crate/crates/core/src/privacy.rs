//! Gaussian-mechanism calibration and Renyi-DP accounting for Poisson-subsampled
//! Gaussian steps.
//!
//! The subsampled bound uses the exact binomial expansion for integer orders,
//! `A_a = sum_k C(a,k) (1-q)^(a-k) q^k exp((k^2-k) / (2 sigma^2))`, evaluated as
//! `1 + sum_{k>=2} ... * expm1(...)` in log space so that no cancellation
//! occurs for small sampling rates. Conversion to `(eps, delta)` uses
//! `eps = min_a [ rdp(a) + ln(1/delta) / (a-1) ]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-5;
/// Bracket searched by [`calibrate_sigma`].
pub const SIGMA_BRACKET: (f64, f64) = (1e-2, 1e3);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    /// `f64::INFINITY` marks a non-private run.
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, DEFAULT_DELTA)
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }
}

/// Noise multiplier of the classical Gaussian mechanism, `sqrt(2 ln(1.25/delta)) / eps`.
pub fn gaussian_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0) || delta >= 1.25 {
        return Err(Error::Domain(format!("delta must lie in (0, 1.25) for ln(1.25/delta) > 0, got {delta}")));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^x - 1)` for `x > 0`.
fn ln_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// RDP at integer order `alpha` of one Poisson-subsampled Gaussian step with
/// sampling rate `q` and noise multiplier `sigma`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 2.0) || alpha.fract() != 0.0 || !alpha.is_finite() {
        return Err(Error::UnsupportedOrder(alpha));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!("sampling rate must lie in (0, 1], got {q}")));
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("noise multiplier must be positive, got {sigma}")));
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let a = alpha as u64;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_s2 = 2.0 * sigma * sigma;
    // ln C(a, k), built incrementally from ln C(a, 1) = ln a.
    let mut ln_binom = (a as f64).ln();
    let mut ln_excess = f64::NEG_INFINITY;
    for k in 2..=a {
        let kf = k as f64;
        ln_binom += ((a - k + 1) as f64).ln() - kf.ln();
        let term = ln_binom + (a - k) as f64 * ln_1mq + kf * ln_q + ln_expm1((kf * kf - kf) / two_s2);
        ln_excess = log_add(ln_excess, term);
    }
    let ln_a = if ln_excess > 0.0 { ln_excess + (-ln_excess).exp().ln_1p() } else { ln_excess.exp().ln_1p() };
    Ok(ln_a / (alpha - 1.0))
}

/// Integer orders 2..=64 plus 128 and 256.
pub fn default_orders() -> Vec<f64> {
    (2..=64).map(f64::from).chain([128.0, 256.0]).collect()
}

/// Per-order RDP ledger of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    orders: Vec<f64>,
    ledger: Vec<f64>,
    steps: u64,
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::new(default_orders())
    }
}

impl AccountantState {
    pub fn new(orders: Vec<f64>) -> Self {
        let ledger = vec![0.0; orders.len()];
        Self { orders, ledger, steps: 0 }
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn ledger(&self) -> &[f64] {
        &self.ledger
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Records one subsampled Gaussian step.
    pub fn step(&mut self, q: f64, sigma: f64) -> Result<()> {
        self.compose(q, sigma, 1)
    }

    /// Records `count` identical steps.
    pub fn compose(&mut self, q: f64, sigma: f64, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        for (slot, &alpha) in self.ledger.iter_mut().zip(&self.orders) {
            *slot += rdp_subsampled_gaussian(q, sigma, alpha)? * count as f64;
        }
        self.steps += count;
        Ok(())
    }

    /// `(epsilon, best order)` for the given `delta`.
    pub fn epsilon(&self, delta: f64) -> Result<(f64, f64)> {
        compose_and_convert(self, delta)
    }

    pub fn report(&self, delta: f64) -> Result<AccountantReport> {
        let (epsilon, order) = self.epsilon(delta)?;
        Ok(AccountantReport {
            orders: self.orders.clone(),
            ledger: self.ledger.clone(),
            steps: self.steps,
            best_order: order,
            epsilon,
            delta,
        })
    }
}

/// Converts the accumulated ledger to `(epsilon, minimising order)`.
pub fn compose_and_convert(state: &AccountantState, delta: f64) -> Result<(f64, f64)> {
    if state.orders.is_empty() {
        return Err(Error::Config("accountant has no Renyi orders".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let ln_inv_delta = (1.0 / delta).ln();
    let mut best = (f64::INFINITY, state.orders[0]);
    for (&alpha, &rdp) in state.orders.iter().zip(&state.ledger) {
        let eps = rdp + ln_inv_delta / (alpha - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    Ok(best)
}

/// Epsilon after `steps` identical steps, without building a ledger.
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<f64> {
    let mut state = AccountantState::default();
    state.compose(q, sigma, steps)?;
    Ok(state.epsilon(delta)?.0)
}

/// Smallest noise multiplier (within 1e-4 relative) whose composed epsilon
/// over `steps` subsampled steps stays within `spec.epsilon`.
pub fn calibrate_sigma(spec: &PrivacySpec, q: f64, steps: u64) -> Result<f64> {
    if !spec.is_private() {
        return Ok(0.0);
    }
    let (lo, hi) = SIGMA_BRACKET;
    if steps == 0 {
        return Ok(lo);
    }
    let eps = |s: f64| epsilon_for(q, s, steps, spec.delta);
    search_decreasing(eps, spec.epsilon, lo, hi).map_err(|_| {
        Error::Calibration(format!(
            "no noise multiplier in [{lo}, {hi}] reaches epsilon {} (q = {q}, steps = {steps})",
            spec.epsilon
        ))
    })
}

/// Geometric bisection for the smallest `x` in `[lo, hi]` with `f(x) <= target`,
/// where `f` is nonincreasing. Returns `lo` if already feasible.
pub(crate) fn search_decreasing<F>(f: F, target: f64, lo: f64, hi: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if f(hi)? > target {
        return Err(Error::Calibration(format!("infeasible at upper bracket {hi}")));
    }
    if f(lo)? <= target {
        return Ok(lo);
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi / lo > 1.0 + 1e-4 {
        let mid = (lo * hi).sqrt();
        if f(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Accountant summary written to run logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantReport {
    pub orders: Vec<f64>,
    pub ledger: Vec<f64>,
    pub steps: u64,
    pub best_order: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl fmt::Display for AccountantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[accountant]")?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "best_order = {}", self.best_order)?;
        writeln!(f, "epsilon = {:.6}", self.epsilon)?;
        writeln!(f, "delta = {:e}", self.delta)?;
        writeln!(f, "[accountant.ledger]")?;
        for (a, r) in self.orders.iter().zip(&self.ledger) {
            writeln!(f, "{a} = {r:.9e}")?;
        }
        Ok(())
    }
}
