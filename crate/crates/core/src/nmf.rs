//! Single-layer sparse NMF.
//!
//! One layer minimizes
//!
//! ```text
//! ½‖X − A·S‖²_F + α_A·Σ√a_ij + α_S·Σ√s_ij
//! ```
//!
//! with multiplicative updates. The sum-to-one constraint on the columns of
//! `S` is enforced softly by appending a constant row `δ` to both `X` and `A`
//! before the abundance update. The penalty weight decays as
//! `α_A(t) = α0·exp(−t/τ)` and `α_S = ratio·α_A`.

use ndarray::{concatenate, Array2, ArrayView2, Axis, Zip};

use crate::data::{half_sq_residual, qnorm};
use crate::error::{dim_err, Error, Result};

/// Entries are clamped to at least this before taking `x^(-1/2)`.
pub const POWER_FLOOR: f64 = 1e-9;
/// Lower bound on every multiplicative-update denominator.
pub const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    /// Initial penalty weight α0.
    pub alpha0: f64,
    /// Decay constant τ of the penalty schedule.
    pub tau: f64,
    /// α_S = alpha_s_ratio · α_A.
    pub alpha_s_ratio: f64,
    /// When false, α_A is held at zero and only the abundances are
    /// penalized (the single-layer L1/2 baseline).
    pub penalize_signatures: bool,
    /// Weight of the sum-to-one row δ.
    pub delta: f64,
    pub t_max: usize,
    pub epsilon: f64,
    /// Consecutive small-change iterations required to stop.
    pub stop_patience: usize,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.1,
            tau: 25.0,
            alpha_s_ratio: 2.0,
            penalize_signatures: true,
            delta: 25.0,
            t_max: 400,
            epsilon: 1e-4,
            stop_patience: 10,
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha0 >= 0.0) || !self.alpha0.is_finite() {
            return bad("alpha0 must be finite and >= 0");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(self.alpha_s_ratio > 0.0) || !self.alpha_s_ratio.is_finite() {
            return bad("alpha_s_ratio must be finite and > 0");
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return bad("delta must be finite and >= 0");
        }
        if self.t_max < 1 {
            return bad("t_max must be >= 1");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be >= 0");
        }
        if self.stop_patience < 1 {
            return bad("stop_patience must be >= 1");
        }
        Ok(())
    }

    /// (α_A, α_S) at iteration `t`.
    pub fn alphas(&self, t: usize) -> (f64, f64) {
        let base = alpha_schedule(self.alpha0, self.tau, t);
        let alpha_a = if self.penalize_signatures { base } else { 0.0 };
        (alpha_a, self.alpha_s_ratio * base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Converged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIterations => "max_iterations",
            StopReason::Converged => "converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerResult {
    /// This layer's mixing matrix.
    pub a: Array2<f64>,
    /// This layer's activations.
    pub s: Array2<f64>,
    /// Penalized cost after every iteration.
    pub cost_trace: Vec<f64>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
}

/// Annealed penalty weight `α0·exp(−t/τ)`.
pub fn alpha_schedule(alpha0: f64, tau: f64, t: usize) -> f64 {
    debug_assert!(tau > 0.0);
    alpha0 * (-(t as f64) / tau).exp()
}

fn check_dims(x: ArrayView2<f64>, a: ArrayView2<f64>, s: ArrayView2<f64>) -> Result<()> {
    if a.ncols() != s.nrows() || x.nrows() != a.nrows() || x.ncols() != s.ncols() {
        return dim_err(format!(
            "X {:?} vs A {:?} · S {:?}",
            x.dim(),
            a.dim(),
            s.dim()
        ));
    }
    Ok(())
}

/// `current .* numer ./ max(denom + ½·alpha·max(current, floor)^(-1/2), DENOM_FLOOR)`
fn multiplicative_step(
    current: ArrayView2<f64>,
    numer: &Array2<f64>,
    denom: &Array2<f64>,
    alpha: f64,
    floor: f64,
) -> Array2<f64> {
    let half_alpha = 0.5 * alpha;
    let mut out = Array2::zeros(current.raw_dim());
    Zip::from(&mut out)
        .and(current)
        .and(numer)
        .and(denom)
        .for_each(|o, &c, &n, &d| {
            let penalty = if half_alpha > 0.0 {
                half_alpha / c.max(floor).sqrt()
            } else {
                0.0
            };
            *o = c * n / (d + penalty).max(DENOM_FLOOR);
        });
    out
}

/// Multiplicative update of the signature factor:
/// `A .* (X·Sᵀ) ./ (A·S·Sᵀ + ½·α_A·A^(−1/2))`.
pub fn update_signatures(
    x: ArrayView2<f64>,
    a: ArrayView2<f64>,
    s: ArrayView2<f64>,
    alpha_a: f64,
    floor: f64,
) -> Result<Array2<f64>> {
    check_dims(x, a, s)?;
    let numer = x.dot(&s.t());
    let denom = a.dot(&s.dot(&s.t()));
    Ok(multiplicative_step(a, &numer, &denom, alpha_a, floor))
}

/// Multiplicative update of the abundance factor:
/// `S .* (Aᵀ·X) ./ (Aᵀ·A·S + ½·α_S·S^(−1/2))`.
pub fn update_abundances(
    x: ArrayView2<f64>,
    a: ArrayView2<f64>,
    s: ArrayView2<f64>,
    alpha_s: f64,
    floor: f64,
) -> Result<Array2<f64>> {
    check_dims(x, a, s)?;
    let numer = a.t().dot(&x);
    let denom = a.t().dot(&a).dot(&s);
    Ok(multiplicative_step(s, &numer, &denom, alpha_s, floor))
}

/// Appends a constant row `δ` to `X` and to `A`.
pub fn fcls_augment(
    x: ArrayView2<f64>,
    a: ArrayView2<f64>,
    delta: f64,
) -> (Array2<f64>, Array2<f64>) {
    (append_row(x, delta), append_row(a, delta))
}

fn append_row(m: ArrayView2<f64>, value: f64) -> Array2<f64> {
    let row = Array2::from_elem((1, m.ncols()), value);
    concatenate![Axis(0), m, row]
}

/// Penalized layer cost `½‖X − A·S‖²_F + α_A·Σ√a + α_S·Σ√s`.
pub fn layer_cost(
    x: ArrayView2<f64>,
    a: ArrayView2<f64>,
    s: ArrayView2<f64>,
    alpha_a: f64,
    alpha_s: f64,
) -> Result<f64> {
    let fit = half_sq_residual(x, a, s)?;
    let pa = if alpha_a != 0.0 { alpha_a * qnorm(a, 0.5)? } else { 0.0 };
    let ps = if alpha_s != 0.0 { alpha_s * qnorm(s, 0.5)? } else { 0.0 };
    Ok(fit + pa + ps)
}

/// `|cost_new − cost_old| < epsilon`.
pub fn check_stop(cost_new: f64, cost_old: f64, epsilon: f64) -> bool {
    (cost_new - cost_old).abs() < epsilon
}

fn all_finite(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Runs one layer of sparse NMF from the given starting factors.
///
/// Each iteration updates `A` against the plain `X`, then updates `S`
/// against the δ-augmented pair. The augmented matrices live only for the
/// abundance update; the cost is always evaluated on the plain quantities.
pub fn run_layer(
    x: ArrayView2<f64>,
    a0: Array2<f64>,
    s0: Array2<f64>,
    cfg: &LayerConfig,
) -> Result<LayerResult> {
    cfg.validate()?;
    check_dims(x, a0.view(), s0.view())?;
    if x.iter().any(|&v| !(v >= 0.0)) || a0.iter().any(|&v| !(v >= 0.0)) || s0.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain("run_layer inputs must be nonnegative".into()));
    }

    // X̃ does not depend on the factors, so build it once.
    let x_aug = append_row(x, cfg.delta);
    let mut a = a0;
    let mut s = s0;
    let mut trace = Vec::with_capacity(cfg.t_max.min(4096));
    let mut streak = 0usize;
    let mut stop_reason = StopReason::MaxIterations;

    for t in 1..=cfg.t_max {
        let (alpha_a, alpha_s) = cfg.alphas(t);
        a = update_signatures(x, a.view(), s.view(), alpha_a, POWER_FLOOR)?;
        let a_aug = append_row(a.view(), cfg.delta);
        s = update_abundances(x_aug.view(), a_aug.view(), s.view(), alpha_s, POWER_FLOOR)?;
        if !all_finite(&a) || !all_finite(&s) {
            return Err(Error::Divergence {
                iteration: t,
                layer: None,
            });
        }

        let cost = layer_cost(x, a.view(), s.view(), alpha_a, alpha_s)?;
        if !cost.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                layer: None,
            });
        }
        match trace.last() {
            Some(&prev) if check_stop(cost, prev, cfg.epsilon) => streak += 1,
            _ => streak = 0,
        }
        trace.push(cost);
        if streak >= cfg.stop_patience {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    Ok(LayerResult {
        a,
        s,
        iterations_run: trace.len(),
        cost_trace: trace,
        stop_reason,
    })
}

/// Abundance estimation for fixed signatures: unpenalized abundance updates
/// on the δ-augmented system, iterated until the residual settles or
/// `t_max` is hit. Returns the abundances and the number of iterations.
pub fn estimate_abundances(
    x: ArrayView2<f64>,
    a: ArrayView2<f64>,
    s0: Array2<f64>,
    delta: f64,
    t_max: usize,
    epsilon: f64,
    patience: usize,
) -> Result<(Array2<f64>, usize)> {
    check_dims(x, a, s0.view())?;
    let (x_aug, a_aug) = fcls_augment(x, a, delta);
    let mut s = s0;
    let mut prev: Option<f64> = None;
    let mut streak = 0usize;
    for t in 1..=t_max.max(1) {
        s = update_abundances(x_aug.view(), a_aug.view(), s.view(), 0.0, POWER_FLOOR)?;
        if !all_finite(&s) {
            return Err(Error::Divergence {
                iteration: t,
                layer: None,
            });
        }
        let cost = half_sq_residual(x, a, s.view())?;
        match prev {
            Some(p) if check_stop(cost, p, epsilon) => streak += 1,
            _ => streak = 0,
        }
        prev = Some(cost);
        if streak >= patience.max(1) {
            return Ok((s, t));
        }
    }
    Ok((s, t_max.max(1)))
}
