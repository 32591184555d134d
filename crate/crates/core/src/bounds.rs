//! Closed-form bounds on the Lyapunov gap and the report that checks the
//! forgetting rates against it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycle::{expected_log_det, lyapunov_spectrum, LyapunovEstimate};
use crate::error::{Error, Result};
use crate::memloss::{
    all_triples, best_rate, default_rate_window, delta_curve, delta_tilde_curve, estimate_rate, matched_gap,
    CurveKind, DecayCurve, RateEstimate, RateMethod, Triple, MIN_RATE_POINTS,
};
use crate::model::{check_hypotheses, HmmModel, DEFAULT_RANK_TOL};
use crate::simulate::{derive_seed, past_window, sample_path, ObservationWindow};

/// Default slack, in exponent units, for comparing rates with the gap.
pub const DEFAULT_TOL: f64 = 0.05;
/// Fraction of windows on which the best rate must match the gap.
pub const ATTAINMENT_FRACTION: f64 = 0.9;

/// `(1/(k−1)) ln |det p| − (k/(k−1)) ln R`, a lower bound on `λ₂ − λ₁`.
pub fn proposition_lower_bound(model: &HmmModel) -> Result<f64> {
    let det = model.p().determinant();
    if det == 0.0 {
        return Err(Error::DegenerateDeterminant);
    }
    Ok(lower_bound_formula(det.abs(), 1.0 / model.min_q(), model.k()))
}

/// The bound from its ingredients `|det p|`, `R` and `k`.
pub fn lower_bound_formula(abs_det: f64, r: f64, k: usize) -> f64 {
    let k = k as f64;
    abs_det.ln() / (k - 1.0) - k / (k - 1.0) * r.ln()
}

/// Rates of every triple on one window, with the window's own finite-time
/// gap as the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRates {
    pub index: usize,
    pub seed: u64,
    /// Slope of `ℓ₂ − ℓ₁` over the fit window, see [`matched_gap`].
    pub matched_gap: f64,
    pub rates: Vec<RateEstimate>,
    /// Triples whose curve had too few uncensored points in the window.
    pub skipped: Vec<Triple>,
}

impl WindowRates {
    pub fn best(&self) -> Option<&RateEstimate> {
        best_rate(&self.rates)
    }
}

/// Where rates are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateWindow {
    /// `[n_max / 2, n_max]`.
    Half,
    /// `[n_hi / 2, n_hi]` with `n_hi` the last point any curve keeps above
    /// the underflow floor. For fast-forgetting models whose curves vanish
    /// well before `n_max`.
    Auto,
}

fn fit_window(curves: &[DecayCurve], n_max: usize, mode: RateWindow) -> (usize, usize) {
    match mode {
        RateWindow::Half => default_rate_window(n_max),
        RateWindow::Auto => {
            let n_hi = curves
                .iter()
                .filter_map(|c| c.uncensored().map(|p| p.n).max())
                .max()
                .unwrap_or(n_max)
                .max(2 * MIN_RATE_POINTS);
            default_rate_window(n_hi)
        }
    }
}

/// Curves, rates and matched gap for one past window of length `n_max − 1`.
pub fn window_rates(
    model: &HmmModel,
    window: &ObservationWindow,
    kind: CurveKind,
    n_max: usize,
    method: RateMethod,
    mode: RateWindow,
) -> Result<(Vec<DecayCurve>, (usize, usize), Vec<RateEstimate>, Vec<Triple>)> {
    let triples = all_triples(model, kind);
    let curves = match kind {
        CurveKind::Delta => delta_curve(model, window, &triples, n_max)?,
        CurveKind::DeltaTilde => delta_tilde_curve(model, window, &triples, n_max)?,
    };
    let (lo, hi) = fit_window(&curves, n_max, mode);
    let mut rates = Vec::with_capacity(curves.len());
    let mut skipped = Vec::new();
    for c in &curves {
        match estimate_rate(c, lo, hi, method) {
            Ok(r) => rates.push(r),
            Err(Error::InsufficientPoints { .. }) => skipped.push(c.triple),
            Err(e) => return Err(e),
        }
    }
    Ok((curves, (lo, hi), rates, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub window: usize,
    pub triple: Triple,
    pub tau_hat: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// `λ̂₂ − λ̂₁` from the long run.
    pub lyap_gap: f64,
    pub lyap_gap_std_error: f64,
    pub prop_lower_bound: f64,
    /// `prop_lower_bound <= lyap_gap + 3 · std error`.
    pub prop_bound_holds: bool,
    /// `|Σ λ̂ − E ln |det L||`.
    pub det_identity_residual: f64,
    /// Quadrature sum of the exponents' standard errors.
    pub det_identity_std_error: f64,
    pub det_identity_holds: bool,
    /// Triples with `τ̂ > gap + tol` on some window, gap being the window's
    /// matched finite-time gap.
    pub theorem1_violations: Vec<Violation>,
    /// Whether both hypotheses hold, so that attainment is predicted.
    pub theorem2_applicable: bool,
    /// Best-triple `τ̂` within `tol` of the matched gap on at least 90% of
    /// windows (and the model satisfies the hypotheses).
    pub theorem2_attained: bool,
    pub theorem2_fraction: f64,
    /// Same fraction against the long-run `λ̂₂ − λ̂₁`, for reference.
    pub theorem2_fraction_global: f64,
    pub windows: usize,
    pub tol: f64,
}

impl BoundsReport {
    /// Everything the report checks holds.
    pub fn passed(&self) -> bool {
        self.prop_bound_holds
            && self.det_identity_holds
            && self.theorem1_violations.is_empty()
            && (!self.theorem2_applicable || self.theorem2_attained)
    }
}

/// Assembles the report. Pure in its inputs.
///
/// With a single window this reduces to comparing one set of rates with one
/// gap; several windows give the attainment fraction.
pub fn verify_all(model: &HmmModel, lyap: &LyapunovEstimate, windows: &[WindowRates], tol: f64) -> BoundsReport {
    let hyp = check_hypotheses(model, DEFAULT_RANK_TOL);
    let theorem2_applicable = hyp.h1_holds && hyp.h2_holds;

    let gap = lyap.gap().unwrap_or(f64::NAN);
    let gap_se = lyap.gap_std_error().unwrap_or(f64::NAN);
    let prop = proposition_lower_bound(model).unwrap_or(f64::NEG_INFINITY);
    let prop_bound_holds = prop <= gap + 3.0 * gap_se || prop == f64::NEG_INFINITY;

    let (sum, sum_se) = lyap.sum();
    let eld = expected_log_det(model);
    let det_identity_residual = if sum == eld { 0.0 } else { (sum - eld).abs() };
    let det_identity_holds = det_identity_residual <= 3.0 * sum_se || det_identity_residual < 1e-10;

    let mut theorem1_violations = Vec::new();
    let mut attained = 0usize;
    let mut attained_global = 0usize;
    for w in windows {
        for r in &w.rates {
            if r.tau_hat > w.matched_gap + tol {
                theorem1_violations.push(Violation {
                    window: w.index,
                    triple: r.triple,
                    tau_hat: r.tau_hat,
                    gap: w.matched_gap,
                });
            }
        }
        if let Some(b) = w.best() {
            attained += usize::from((b.tau_hat - w.matched_gap).abs() <= tol);
            attained_global += usize::from((b.tau_hat - gap).abs() <= tol);
        }
    }
    let n = windows.len().max(1) as f64;
    let theorem2_fraction = attained as f64 / n;
    BoundsReport {
        lyap_gap: gap,
        lyap_gap_std_error: gap_se,
        prop_lower_bound: prop,
        prop_bound_holds,
        det_identity_residual,
        det_identity_std_error: sum_se,
        det_identity_holds,
        theorem1_violations,
        theorem2_applicable,
        theorem2_attained: theorem2_applicable && !windows.is_empty() && theorem2_fraction >= ATTAINMENT_FRACTION,
        theorem2_fraction,
        theorem2_fraction_global: attained_global as f64 / n,
        windows: windows.len(),
        tol,
    }
}

/// Settings for [`run_verification`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyPlan {
    pub seed: u64,
    pub n_lyap: usize,
    pub n_max: usize,
    pub windows: usize,
    pub tol: f64,
    pub method: RateMethod,
    pub kind: CurveKind,
    pub rate_window: RateWindow,
}

impl VerifyPlan {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            n_lyap: 1_000_000,
            n_max: 400,
            windows: 20,
            tol: DEFAULT_TOL,
            method: RateMethod::Regression,
            kind: CurveKind::Delta,
            rate_window: RateWindow::Half,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub lyapunov: LyapunovEstimate,
    pub windows: Vec<WindowRates>,
    pub report: BoundsReport,
}

/// Long-run spectrum on task 0 of the master seed, then `plan.windows`
/// independent stationary windows on tasks `1..`, evaluated in parallel.
pub fn run_verification(model: &HmmModel, plan: &VerifyPlan) -> Result<Verification> {
    if plan.n_max < 2 * MIN_RATE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "n_max must be at least {}",
            2 * MIN_RATE_POINTS
        )));
    }
    let r = model.k();
    let long = sample_path(model, plan.n_lyap, derive_seed(plan.seed, 0))?;
    let lyapunov = lyapunov_spectrum(model, &long, r, plan.n_lyap)?;
    drop(long);

    let windows = (0..plan.windows)
        .into_par_iter()
        .map(|i| -> Result<WindowRates> {
            let seed = derive_seed(plan.seed, i as u64 + 1);
            let path = sample_path(model, plan.n_max - 1, seed)?;
            let window = past_window(&path, plan.n_max - 1)?;
            let (_, (lo, hi), rates, skipped) =
                window_rates(model, &window, plan.kind, plan.n_max, plan.method, plan.rate_window)?;
            Ok(WindowRates {
                index: i,
                seed,
                matched_gap: matched_gap(model, &window, lo, hi)?,
                rates,
                skipped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = verify_all(model, &lyapunov, &windows, plan.tol);
    Ok(Verification {
        lyapunov,
        windows,
        report,
    })
}
