//! The observation cocycle `L_z`, its Lyapunov spectrum and the Oseledec
//! structure behind the forgetting rate.
//!
//! `L_z[i, j] = q(z_0 | j) p(j | i)`. Products are taken along a
//! past-ordered stream: the first matrix applied is the one of the latest
//! symbol, then the one before it, and so on. For a window ending at time
//! −1 step `n` applies `L(z_{-n})`; a [`SamplePath`] is read the same way,
//! its last observation playing the role of `z_{-1}`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{observation_marginal, HmmModel};
use crate::simulate::{ObservationWindow, SamplePath};
use crate::stats::{linear_fit, BatchMeans, DEFAULT_BATCHES};
use crate::wedge;

/// Orthonormality tolerance on the frame after each step.
pub const FRAME_TOL: f64 = 1e-10;
/// A QR diagonal this small relative to its column is a collapsed direction.
const COLLAPSE_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    pub entries: DMatrix<f64>,
    pub symbol: usize,
}

impl ObservationMatrix {
    /// `(prod_i q(z0|i)) det p`.
    pub fn determinant_identity(model: &HmmModel, z0: usize) -> f64 {
        model.q().column(z0 - 1).iter().product::<f64>() * model.p().determinant()
    }
}

pub fn observation_matrix(model: &HmmModel, z0: usize) -> Result<ObservationMatrix> {
    model.check_symbol(z0)?;
    Ok(ObservationMatrix {
        entries: observation_matrix_unchecked(model, z0),
        symbol: z0,
    })
}

pub(crate) fn observation_matrix_unchecked(model: &HmmModel, z0: usize) -> DMatrix<f64> {
    let p = model.p();
    let q = model.q();
    DMatrix::from_fn(model.k(), model.k(), |i, j| q[(j, z0 - 1)] * p[(i, j)])
}

/// All observation matrices, indexed by `symbol - 1`.
pub fn observation_matrices(model: &HmmModel) -> Vec<DMatrix<f64>> {
    (1..=model.l())
        .map(|z| observation_matrix_unchecked(model, z))
        .collect()
}

/// Where the cocycle reads its symbols from.
#[derive(Debug, Clone, Copy)]
pub enum CocycleSource<'a> {
    Path(&'a SamplePath),
    Window(&'a ObservationWindow),
}

impl<'a> CocycleSource<'a> {
    fn available(&self) -> usize {
        match self {
            CocycleSource::Path(p) => p.len(),
            CocycleSource::Window(w) => w.len(),
        }
    }

    /// Symbols latest first.
    fn stream(&self) -> Box<dyn Iterator<Item = usize> + 'a> {
        match *self {
            CocycleSource::Path(p) => Box::new(p.z.iter().rev().copied()),
            CocycleSource::Window(w) => Box::new(w.symbols().iter().rev().copied()),
        }
    }
}

impl<'a> From<&'a SamplePath> for CocycleSource<'a> {
    fn from(p: &'a SamplePath) -> Self {
        CocycleSource::Path(p)
    }
}

impl<'a> From<&'a ObservationWindow> for CocycleSource<'a> {
    fn from(w: &'a ObservationWindow) -> Self {
        CocycleSource::Window(w)
    }
}

/// Benettin accumulator: an orthonormal `k × r` frame carried through the
/// product, re-orthonormalized by QR after every multiplication.
#[derive(Debug, Clone)]
pub struct CocycleState {
    frame: DMatrix<f64>,
    log_norms: Vec<f64>,
    collapsed: Vec<bool>,
    steps: usize,
}

impl CocycleState {
    /// Frame whose first column is the normalized all-ones vector, completed
    /// by standard basis vectors. A positive start vector never lies in the
    /// slow subspace, and for stochastic-like products it is already close to
    /// the leading direction, which keeps the transient small.
    pub fn new(k: usize, r: usize) -> Self {
        assert!(r >= 1 && r <= k, "need 1 <= r <= k");
        let mut start = DMatrix::identity(k, r);
        start.column_mut(0).fill(1.0);
        Self::with_frame(start)
    }

    /// Starts from the QR orthonormalization of `frame`'s columns.
    pub fn with_frame(frame: DMatrix<f64>) -> Self {
        let (q, _) = signed_qr(frame);
        Self::from_orthonormal(q)
    }

    fn from_orthonormal(frame: DMatrix<f64>) -> Self {
        let r = frame.ncols();
        Self {
            frame,
            log_norms: vec![0.0; r],
            collapsed: vec![false; r],
            steps: 0,
        }
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn log_norms(&self) -> &[f64] {
        &self.log_norms
    }

    pub fn collapsed(&self) -> &[bool] {
        &self.collapsed
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Multiplies the frame by `l`, re-orthonormalizes and returns the log
    /// of each diagonal scale factor (`-inf` for a collapsed direction).
    pub fn step(&mut self, l: &DMatrix<f64>) -> Vec<f64> {
        let image = l * &self.frame;
        let col_norms: Vec<f64> = image.column_iter().map(|c| c.norm()).collect();
        let (q, r) = signed_qr(image);
        self.frame = q;
        self.steps += 1;
        (0..self.log_norms.len())
            .map(|j| {
                let d = r[(j, j)];
                if self.collapsed[j] || d <= COLLAPSE_RTOL * col_norms[j] {
                    self.collapsed[j] = true;
                    self.log_norms[j] = f64::NEG_INFINITY;
                    f64::NEG_INFINITY
                } else {
                    let inc = d.ln();
                    self.log_norms[j] += inc;
                    inc
                }
            })
            .collect()
    }

    /// Largest deviation of `frameᵀ frame` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let r = self.frame.ncols();
        (self.frame.transpose() * &self.frame - DMatrix::<f64>::identity(r, r)).amax()
    }
}

/// Householder QR with the signs chosen so that `R` has a non-negative
/// diagonal.
fn signed_qr(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Lyapunov exponents sorted in decreasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub lambdas: Vec<f64>,
    pub n_steps: usize,
    pub std_errors: Vec<f64>,
    /// Direction collapsed to zero; the matching exponent is `-inf`.
    pub underflow_flags: Vec<bool>,
}

/// A group of numerically indistinguishable exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentCluster {
    pub value: f64,
    pub multiplicity: usize,
    pub std_error: f64,
}

impl LyapunovEstimate {
    fn sorted(lambdas: Vec<f64>, std_errors: Vec<f64>, flags: Vec<bool>, n_steps: usize) -> Self {
        let mut idx: Vec<usize> = (0..lambdas.len()).collect();
        idx.sort_by(|&a, &b| lambdas[b].partial_cmp(&lambdas[a]).unwrap_or(std::cmp::Ordering::Equal));
        Self {
            lambdas: idx.iter().map(|&i| lambdas[i]).collect(),
            std_errors: idx.iter().map(|&i| std_errors[i]).collect(),
            underflow_flags: idx.iter().map(|&i| flags[i]).collect(),
            n_steps,
        }
    }

    /// Distinct exponents: sorted estimates are split wherever consecutive
    /// values differ by more than `max(0.05, 5 * std_error)`.
    pub fn distinct(&self) -> Vec<ExponentCluster> {
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for (i, &lam) in self.lambdas.iter().enumerate() {
            let se = self.std_errors[i];
            let join = match out.last() {
                None => false,
                Some((members, prev_se)) => {
                    let prev = *members.last().unwrap();
                    if prev == f64::NEG_INFINITY && lam == f64::NEG_INFINITY {
                        true
                    } else {
                        let thr = 0.05_f64.max(5.0 * prev_se.max(se));
                        prev - lam <= thr
                    }
                }
            };
            if join {
                let last = out.last_mut().unwrap();
                last.0.push(lam);
                last.1 = last.1.max(se);
            } else {
                out.push((vec![lam], se));
            }
        }
        out.into_iter()
            .map(|(members, se)| ExponentCluster {
                value: members.iter().sum::<f64>() / members.len() as f64,
                multiplicity: members.len(),
                std_error: se,
            })
            .collect()
    }

    /// `λ₂ − λ₁` between the first two distinct exponents.
    pub fn gap(&self) -> Option<f64> {
        let d = self.distinct();
        (d.len() >= 2).then(|| d[1].value - d[0].value)
    }

    /// Standard error of the gap, combining the two cluster errors in
    /// quadrature.
    pub fn gap_std_error(&self) -> Option<f64> {
        let d = self.distinct();
        (d.len() >= 2).then(|| d[0].std_error.hypot(d[1].std_error))
    }

    /// Sum of all tracked exponents and its quadrature-combined error.
    pub fn sum(&self) -> (f64, f64) {
        let s = self.lambdas.iter().sum();
        let e = self.std_errors.iter().map(|x| x * x).sum::<f64>().sqrt();
        (s, e)
    }
}

fn take_stream<'a>(source: CocycleSource<'a>, n_steps: usize) -> Result<impl Iterator<Item = usize> + 'a> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if source.available() < n_steps {
        return Err(Error::WindowTooShort {
            needed: n_steps,
            available: source.available(),
        });
    }
    Ok(source.stream().take(n_steps))
}

fn check_r(model: &HmmModel, r: usize) -> Result<()> {
    if r == 0 || r > model.k() {
        return Err(Error::InvalidArgument(format!(
            "number of exponents must be in 1..={}, got {r}",
            model.k()
        )));
    }
    Ok(())
}

/// First `r` Lyapunov exponents over `n_steps` symbols of `source`, with
/// batch-means standard errors.
///
/// Models with zero emission probabilities are accepted: a direction that
/// collapses is reported as `-inf` and flagged.
pub fn lyapunov_spectrum<'a>(
    model: &HmmModel,
    source: impl Into<CocycleSource<'a>>,
    r: usize,
    n_steps: usize,
) -> Result<LyapunovEstimate> {
    check_r(model, r)?;
    let mats = observation_matrices(model);
    let mut state = CocycleState::new(model.k(), r);
    let mut batches = vec![BatchMeans::new(n_steps, DEFAULT_BATCHES); r];
    for z in take_stream(source.into(), n_steps)? {
        model.check_symbol(z)?;
        let incs = state.step(&mats[z - 1]);
        for (b, inc) in batches.iter_mut().zip(incs) {
            if inc.is_finite() {
                b.push(inc);
            }
        }
    }
    let flags = state.collapsed().to_vec();
    let lambdas = (0..r)
        .map(|j| if flags[j] { f64::NEG_INFINITY } else { state.log_norms()[j] / n_steps as f64 })
        .collect();
    let std_errors = (0..r)
        .map(|j| if flags[j] { 0.0 } else { batches[j].std_error() })
        .collect();
    Ok(LyapunovEstimate::sorted(lambdas, std_errors, flags, n_steps))
}

/// Accumulated log-norms after every step: row `n - 1` holds the values
/// after `n` matrices, in frame-column order.
pub fn log_norm_trajectory<'a>(
    model: &HmmModel,
    source: impl Into<CocycleSource<'a>>,
    r: usize,
    n_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    check_r(model, r)?;
    let mats = observation_matrices(model);
    let mut state = CocycleState::new(model.k(), r);
    let mut out = Vec::with_capacity(n_steps);
    for z in take_stream(source.into(), n_steps)? {
        model.check_symbol(z)?;
        state.step(&mats[z - 1]);
        out.push(state.log_norms().to_vec());
    }
    Ok(out)
}

/// Writes `n, lambda1, lambda2, ...` running estimates every `every` steps.
pub fn write_trajectory_csv<W: Write>(trajectory: &[Vec<f64>], every: usize, mut w: W) -> Result<()> {
    let r = trajectory.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=r).map(|j| format!("lambda{j}")).collect();
    writeln!(w, "n,{}", header.join(","))?;
    let every = every.max(1);
    for (i, row) in trajectory.iter().enumerate() {
        let n = i + 1;
        if n % every != 0 && n != trajectory.len() {
            continue;
        }
        let vals: Vec<String> = row.iter().map(|x| format!("{}", x / n as f64)).collect();
        writeln!(w, "{n},{}", vals.join(","))?;
    }
    Ok(())
}

/// Finite-time exponents over a stretch of a window: the least-squares
/// slope of each accumulated log-norm against the product length, using
/// only the product lengths in `steps`.
pub fn windowed_exponents(
    model: &HmmModel,
    window: &ObservationWindow,
    r: usize,
    steps: &[usize],
) -> Result<LyapunovEstimate> {
    let max_step = steps.iter().copied().max().ok_or_else(|| {
        Error::InvalidArgument("no product lengths given".into())
    })?;
    if steps.len() < 3 || steps.contains(&0) {
        return Err(Error::InvalidArgument(
            "need at least three positive product lengths".into(),
        ));
    }
    let traj = log_norm_trajectory(model, window, r, max_step)?;
    let xs: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    let mut lambdas = Vec::with_capacity(r);
    let mut ses = Vec::with_capacity(r);
    let mut flags = Vec::with_capacity(r);
    for j in 0..r {
        let ys: Vec<f64> = steps.iter().map(|&s| traj[s - 1][j]).collect();
        if ys.iter().any(|y| !y.is_finite()) {
            lambdas.push(f64::NEG_INFINITY);
            ses.push(0.0);
            flags.push(true);
            continue;
        }
        let fit = linear_fit(&xs, &ys).expect("distinct product lengths");
        lambdas.push(fit.slope);
        ses.push(slope_std_error(&xs, &ys, fit.slope, fit.intercept));
        flags.push(false);
    }
    Ok(LyapunovEstimate::sorted(lambdas, ses, flags, max_step))
}

fn slope_std_error(xs: &[f64], ys: &[f64], slope: f64, intercept: f64) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    (ss / (n - 2.0) / sxx).sqrt()
}

/// `E_μ[log |det L_z|] = sum_m P(Z_0 = m) sum_i log q(m|i) + log |det p|`.
///
/// Returns `-inf` when `det p = 0` or an observable symbol has a zero
/// emission probability.
pub fn expected_log_det(model: &HmmModel) -> f64 {
    let det = model.p().determinant();
    if det == 0.0 {
        return f64::NEG_INFINITY;
    }
    let marginal = observation_marginal(model);
    let q = model.q();
    let mut e = det.abs().ln();
    for m in 0..model.l() {
        if marginal[m] == 0.0 {
            continue;
        }
        let s: f64 = q.column(m).iter().map(|x| x.ln()).sum();
        e += marginal[m] * s;
    }
    e
}

/// Orthogonal complement of the estimated slow subspace `V⁽²⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codim1Direction {
    /// Unit normal to `V⁽²⁾`, largest-magnitude component positive.
    pub f: DVector<f64>,
    /// Orthonormal basis of the estimate of `V⁽²⁾` (`k - 1` columns).
    pub v2_basis: DMatrix<f64>,
}

fn require_h1(model: &HmmModel, what: &str) -> Result<()> {
    if model.min_p() > 0.0 && model.min_q() > 0.0 {
        Ok(())
    } else {
        Err(Error::HypothesisViolated(format!(
            "{what} requires strictly positive p and q"
        )))
    }
}

fn fix_sign(mut v: DVector<f64>) -> DVector<f64> {
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
    v
}

/// Leading right-singular direction of the product over `window`.
///
/// `P = L(z_first) ... L(z_last)` is the product that acts on vectors latest
/// symbol first. Its transpose is run through successive QR factors starting
/// from the earliest symbol, and the singular vectors are read off the
/// accumulated triangular factor, so `P` itself is never formed. The
/// remaining right-singular vectors span the estimate of `V⁽²⁾`.
pub fn estimate_codim1_direction(model: &HmmModel, window: &ObservationWindow) -> Result<Codim1Direction> {
    if window.len() < 2 {
        return Err(Error::WindowTooShort {
            needed: 2,
            available: window.len(),
        });
    }
    require_h1(model, "codimension-one direction")?;
    let k = model.k();
    let transposed: Vec<DMatrix<f64>> = observation_matrices(model)
        .into_iter()
        .map(|m| m.transpose())
        .collect();
    // Pᵀ = Q R with R accumulated (rescaled) from the step factors, so the
    // right-singular vectors of P are Q times the left-singular vectors of R.
    let mut q = DMatrix::<f64>::identity(k, k);
    let mut r_acc = DMatrix::<f64>::identity(k, k);
    for &z in window.symbols() {
        model.check_symbol(z)?;
        let (q_next, r_step) = signed_qr(&transposed[z - 1] * &q);
        q = q_next;
        r_acc = r_step * r_acc;
        let s = r_acc.amax();
        r_acc /= s;
    }
    // nalgebra's SVD resolves the tiny components of the vectors on the
    // transposed (lower-triangular) input noticeably better.
    let svd = r_acc.transpose().svd(false, true);
    let u = svd.v_t.expect("right singular vectors requested").transpose();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let f = fix_sign(&q * u.column(order[0]));
    let cols: Vec<DVector<f64>> = order[1..]
        .iter()
        .map(|&j| fix_sign(&q * u.column(j)))
        .collect();
    let v2_basis = DMatrix::from_columns(&cols);
    Ok(Codim1Direction { f, v2_basis })
}

/// One point of the projective ratio sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveRatio {
    pub n: usize,
    /// `max_i (L w1)_i / (L w2)_i`.
    pub gamma: f64,
    /// `min_i (L w1)_i / (L w2)_i`.
    pub delta: f64,
    /// `ln(gamma / delta - 1)`, computed without cancellation.
    pub log_excess: f64,
}

/// `γ_n, δ_n` for `n = 0..=len(window)` under the window's product.
pub fn projective_ratio_curve(
    model: &HmmModel,
    w1: &DVector<f64>,
    w2: &DVector<f64>,
    window: &ObservationWindow,
) -> Result<Vec<ProjectiveRatio>> {
    let k = model.k();
    if w1.len() != k || w2.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "vectors must have length {k}"
        )));
    }
    if w1.iter().chain(w2.iter()).any(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveInput);
    }
    require_h1(model, "projective ratio curve")?;
    let mats = observation_matrices(model);
    let compounds: Vec<DMatrix<f64>> = mats.iter().map(wedge::compound2).collect();

    // u1, u2 share one scale; the wedge carries its own
    let mut u1 = w1.clone();
    let mut u2 = w2.clone();
    let mut log_u = 0.0;
    let mut w = wedge::wedge(w1, w2);
    let mut log_w = 0.0;

    let mut out = Vec::with_capacity(window.len() + 1);
    out.push(ratio_point(0, &u1, &u2, log_u, &w, log_w));
    for (n, z) in window.symbols().iter().rev().enumerate() {
        model.check_symbol(*z)?;
        u1 = &mats[z - 1] * u1;
        u2 = &mats[z - 1] * u2;
        let s = u2.max();
        u1 /= s;
        u2 /= s;
        log_u += s.ln();
        w = &compounds[z - 1] * w;
        let sw = w.amax();
        if sw > 0.0 {
            w /= sw;
            log_w += sw.ln();
        }
        out.push(ratio_point(n + 1, &u1, &u2, log_u, &w, log_w));
    }
    Ok(out)
}

fn ratio_point(
    n: usize,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
    log_u: f64,
    w: &DVector<f64>,
    log_w: f64,
) -> ProjectiveRatio {
    let ratios: Vec<f64> = u1.iter().zip(u2.iter()).map(|(a, b)| a / b).collect();
    let (imax, gamma) = ratios
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, r)| if r > acc.1 { (i, r) } else { acc });
    let (imin, delta) = ratios
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, r)| if r < acc.1 { (i, r) } else { acc });

    // γ/δ − 1 = (u1_i u2_j − u1_j u2_i) / (u2_i u1_j), i = argmax, j = argmin
    let log_excess = if imax == imin {
        f64::NEG_INFINITY
    } else {
        let (a, b) = (imax.min(imin), imax.max(imin));
        let idx = wedge::pairs(u1.len()).iter().position(|&pr| pr == (a, b)).unwrap();
        let sign = if imax < imin { 1.0 } else { -1.0 };
        let num = sign * w[idx];
        if num <= 0.0 {
            f64::NEG_INFINITY
        } else {
            num.ln() + log_w - (u2[imax] * u1[imin]).ln() - 2.0 * log_u
        }
    };
    ProjectiveRatio {
        n,
        gamma,
        delta,
        log_excess,
    }
}

/// Least-squares slope of `ln(γ_n/δ_n − 1)` over `n_lo..=n_hi`.
pub fn fit_projective_decay(curve: &[ProjectiveRatio], n_lo: usize, n_hi: usize) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .iter()
        .filter(|p| p.n >= n_lo && p.n <= n_hi && p.log_excess.is_finite())
        .map(|p| (p.n as f64, p.log_excess))
        .unzip();
    linear_fit(&xs, &ys).map(|f| f.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{test_model, uniform_emission_model};
    use crate::model::build_model;
    use crate::simulate::{past_window, sample_path};
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn observation_matrix_entries() {
        let m = test_model();
        let l = observation_matrix(&m, 1).unwrap().entries;
        let expected = dmatrix![0.81, 0.01; 0.18, 0.08];
        assert!((l - &expected).amax() < 1e-15);
        assert!((expected.determinant() - 0.063).abs() < 1e-15);
        assert!((ObservationMatrix::determinant_identity(&m, 1) - 0.063).abs() < 1e-15);
        assert!(matches!(
            observation_matrix(&m, 3),
            Err(Error::SymbolOutOfRange { .. })
        ));
        assert!(observation_matrix(&m, 0).is_err());
    }

    #[test]
    fn uniform_emissions_halve_p() {
        let m = uniform_emission_model();
        for z in 1..=2 {
            let l = observation_matrix(&m, z).unwrap().entries;
            assert!((l - m.p() * 0.5).amax() < 1e-16);
        }
    }

    #[test]
    fn determinant_identity_three_states() {
        let m = build_model(
            &dmatrix![0.6, 0.3, 0.1; 0.2, 0.5, 0.3; 0.25, 0.25, 0.5],
            &dmatrix![0.7, 0.2, 0.1; 0.1, 0.6, 0.3; 0.3, 0.3, 0.4],
        )
        .unwrap();
        for z in 1..=3 {
            let d = observation_matrix(&m, z).unwrap().entries.determinant();
            let id = ObservationMatrix::determinant_identity(&m, z);
            assert!(((d - id) / id).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_cocycle_exponents() {
        // L = 0.5 p for both symbols; eigenvalues of p are 1 and 0.7
        let m = uniform_emission_model();
        let path = sample_path(&m, 10_000, 1).unwrap();
        let est = lyapunov_spectrum(&m, &path, 2, 10_000).unwrap();
        assert!((est.lambdas[0] - 0.5_f64.ln()).abs() < 1e-6);
        assert!((est.lambdas[1] - 0.35_f64.ln()).abs() < 1e-6);
        assert!((est.gap().unwrap() - 0.7_f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn markov_case_has_collapsed_second_exponent() {
        let m = build_model(&dmatrix![0.5, 0.5; 0.5, 0.5], &dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
        let path = sample_path(&m, 2000, 5).unwrap();
        let est = lyapunov_spectrum(&m, &path, 2, 2000).unwrap();
        assert!((est.lambdas[0] + 2.0_f64.ln()).abs() < 1e-12);
        assert_eq!(est.lambdas[1], f64::NEG_INFINITY);
        assert_eq!(est.underflow_flags, vec![false, true]);
        assert_eq!(est.distinct().len(), 2);
    }

    #[test]
    fn frame_stays_orthonormal() {
        let m = test_model();
        let mats = observation_matrices(&m);
        let path = sample_path(&m, 5000, 9).unwrap();
        let mut st = CocycleState::new(2, 2);
        for &z in &path.z {
            st.step(&mats[z - 1]);
            assert!(st.orthonormality_defect() < FRAME_TOL);
        }
    }

    #[test]
    fn top_exponent_is_not_positive() {
        let m = test_model();
        let path = sample_path(&m, 20_000, 2).unwrap();
        let est = lyapunov_spectrum(&m, &path, 2, 20_000).unwrap();
        assert!(est.lambdas[0] <= 0.0);
        assert!(est.lambdas[0] >= est.lambdas[1]);
    }

    #[test]
    fn positive_start_vectors_share_the_top_exponent() {
        let m = test_model();
        let mats = observation_matrices(&m);
        let path = sample_path(&m, 100_000, 4).unwrap();
        let run = |v: DVector<f64>| {
            let mut st = CocycleState::with_frame(DMatrix::from_column_slice(2, 1, v.as_slice()));
            let mut bm = BatchMeans::new(path.len(), DEFAULT_BATCHES);
            for &z in path.z.iter().rev() {
                bm.push(st.step(&mats[z - 1])[0]);
            }
            (bm.mean(), bm.std_error())
        };
        let (a, sa) = run(dvector![1.0, 1.0]);
        let (b, sb) = run(dvector![0.13, 0.91]);
        assert!((a - b).abs() <= 3.0 * sa.hypot(sb));
    }

    #[test]
    fn expected_log_det_closed_forms() {
        let e = expected_log_det(&test_model());
        let direct = 0.1_f64.ln() + 0.9_f64.ln() + 0.7_f64.ln();
        assert!((e - direct).abs() < 1e-14);
        assert!((e + 2.7646).abs() < 1e-4);

        let u = expected_log_det(&uniform_emission_model());
        assert!((u - (0.25_f64.ln() + 0.7_f64.ln())).abs() < 1e-14);

        let singular = build_model(&dmatrix![0.5, 0.5; 0.5, 0.5], &dmatrix![0.5, 0.5; 0.5, 0.5]).unwrap();
        assert_eq!(expected_log_det(&singular), f64::NEG_INFINITY);
    }

    #[test]
    fn clustering_merges_close_exponents() {
        let est = LyapunovEstimate {
            lambdas: vec![-0.5, -1.0, -1.02, -3.0],
            n_steps: 100,
            std_errors: vec![0.001; 4],
            underflow_flags: vec![false; 4],
        };
        let d = est.distinct();
        assert_eq!(d.len(), 3);
        assert_eq!(d[1].multiplicity, 2);
        assert!((est.gap().unwrap() - (-1.01 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn codim1_direction_of_constant_cocycle() {
        // Oracle: SVD of the explicit 8th power of 0.5 p
        let m = uniform_emission_model();
        let w = ObservationWindow::past(vec![1, 2, 1, 1, 2, 2, 1, 2]);
        let d = estimate_codim1_direction(&m, &w).unwrap();
        let mut power = DMatrix::<f64>::identity(2, 2);
        for _ in 0..8 {
            power = m.p() * 0.5 * power;
        }
        let svd = power.svd(false, true);
        let vt = svd.v_t.unwrap();
        let imax = svd.singular_values.imax();
        let lead = fix_sign(vt.row(imax).transpose());
        assert!((d.f.clone() - lead).amax() < 1e-10);
        assert!((d.f.norm() - 1.0).abs() < 1e-14);
        assert!(d.f.dot(&d.v2_basis.column(0)).abs() < 1e-14);
    }

    #[test]
    fn codim1_direction_needs_two_symbols() {
        let m = test_model();
        assert!(matches!(
            estimate_codim1_direction(&m, &ObservationWindow::past(vec![1])),
            Err(Error::WindowTooShort { .. })
        ));
    }

    #[test]
    fn slow_subspace_vector_has_mixed_signs() {
        let m = test_model();
        for seed in 0..10 {
            let path = sample_path(&m, 200, seed).unwrap();
            let w = past_window(&path, 200).unwrap();
            let d = estimate_codim1_direction(&m, &w).unwrap();
            assert!(d.f.iter().all(|&x| x > 0.0));
            let v = d.v2_basis.column(0);
            assert!(v.max() > 0.0 && v.min() < 0.0, "seed {seed}: {v}");
        }
    }

    #[test]
    fn complement_of_f_grows_at_second_exponent() {
        let m = test_model();
        let mats = observation_matrices(&m);
        let path = sample_path(&m, 20_000, 21).unwrap();
        let est = lyapunov_spectrum(&m, &path, 2, 20_000).unwrap();
        let n = 200;
        let w = past_window(&path, n).unwrap();
        let d = estimate_codim1_direction(&m, &w).unwrap();

        // Product P applied latest symbol first, carried as log-renormalized
        // frame [f, v]. For k = 2 with f the top right-singular vector,
        // ‖P v‖ = |det P| / ‖P f‖ and the second QR log-norm is exactly that.
        let frame = DMatrix::from_columns(&[d.f.clone(), d.v2_basis.column(0).into_owned()]);
        let mut st = CocycleState::with_frame(frame);
        for z in w.symbols().iter().rev() {
            st.step(&mats[z - 1]);
        }
        let rate = st.log_norms()[1] / n as f64;
        assert!((rate - est.lambdas[1]).abs() < 0.1, "{rate} vs {}", est.lambdas[1]);

        // Short window: the direct product is still accurate, and v lands on
        // the second singular value of P.
        let short = past_window(&path, 10).unwrap();
        let ds = estimate_codim1_direction(&m, &short).unwrap();
        let mut p = DMatrix::<f64>::identity(2, 2);
        for z in short.symbols().iter().rev() {
            p = &mats[z - 1] * p;
        }
        let sv = p.singular_values();
        let smin = sv.min();
        let pv = (&p * ds.v2_basis.column(0)).norm();
        assert!(((pv - smin) / smin).abs() < 1e-6, "{pv} vs {smin}");
    }

    #[test]
    fn projective_ratios_identical_vectors() {
        let m = test_model();
        let path = sample_path(&m, 50, 3).unwrap();
        let w = past_window(&path, 50).unwrap();
        let v = dvector![0.3, 0.7];
        for pt in projective_ratio_curve(&m, &v, &v, &w).unwrap() {
            assert!((pt.gamma - 1.0).abs() < 1e-15 && (pt.delta - 1.0).abs() < 1e-15);
            assert_eq!(pt.log_excess, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn projective_ratios_contract() {
        let m = test_model();
        let path = sample_path(&m, 60, 8).unwrap();
        let w = past_window(&path, 60).unwrap();
        let curve = projective_ratio_curve(&m, &dvector![1.0, 0.5], &dvector![0.5, 1.0], &w).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1].gamma <= pair[0].gamma * (1.0 + 1e-12));
            assert!(pair[1].delta >= pair[0].delta * (1.0 - 1e-12));
            assert!(pair[1].gamma >= pair[1].delta);
        }
        // early points: direct subtraction is still accurate
        for pt in &curve[..6] {
            let direct = (pt.gamma / pt.delta - 1.0).ln();
            assert!((direct - pt.log_excess).abs() < 1e-8, "{pt:?}");
        }
        let rate = fit_projective_decay(&curve, 5, 50).unwrap();
        assert!(rate <= (5.0_f64 / 7.0).ln() + 0.05, "rate {rate}");
    }

    #[test]
    fn projective_ratio_rejects_non_positive() {
        let m = test_model();
        let w = ObservationWindow::past(vec![1, 2]);
        assert!(matches!(
            projective_ratio_curve(&m, &dvector![1.0, 0.0], &dvector![1.0, 1.0], &w),
            Err(Error::NonPositiveInput)
        ));
    }

    #[test]
    fn trajectory_csv_layout() {
        let m = test_model();
        let path = sample_path(&m, 10, 1).unwrap();
        let traj = log_norm_trajectory(&m, &path, 2, 10).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,lambda1,lambda2");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("10,"));
    }
}
