//! Hidden Markov model parameters, the stationary law of the hidden chain and
//! the positivity/rank hypotheses the forgetting results rely on.
//!
//! States are labelled `1..=k` and observations `1..=l` in every public API
//! that takes or returns a symbol. Matrices are stored 0-based: row `i - 1`
//! of `p` is the law of the next state from state `i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Row sums may deviate from one by at most this much before rejection.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Default threshold on `|det p|` and the k-th singular value of `q`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const POWER_TOL: f64 = 1e-14;
const POWER_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    pi: DVector<f64>,
}

/// On-disk model description: `{"p": [[..]], "q": [[..]]}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<HmmModel> {
        build_model(&rows_to_matrix(&self.p, "p")?, &rows_to_matrix(&self.q, "q")?)
    }
}

impl From<&HmmModel> for ModelSpec {
    fn from(model: &HmmModel) -> Self {
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        ModelSpec {
            p: rows(&model.p),
            q: rows(&model.q),
        }
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::DimensionMismatch(format!("{name} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("{name} is not rectangular")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Reads a JSON model file and validates it through [`build_model`].
pub fn read_model(path: impl AsRef<Path>) -> Result<HmmModel> {
    let text = std::fs::read_to_string(path)?;
    let spec: ModelSpec = serde_json::from_str(&text)?;
    spec.build()
}

fn normalize_rows(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row = m.row(i);
        if let Some(bad) = row.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0) {
            return Err(Error::NonStochastic(format!(
                "{name} row {} has entry {bad} outside [0,1]",
                i + 1
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NonStochastic(format!(
                "{name} row {} sums to {s}",
                i + 1
            )));
        }
        out.row_mut(i).scale_mut(1.0 / s);
    }
    Ok(out)
}

/// Validates `p` (k×k) and `q` (k×l, l ≥ k) and solves for the stationary law.
pub fn build_model(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<HmmModel> {
    let k = p.nrows();
    if p.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "p must be square, got {}x{}",
            k,
            p.ncols()
        )));
    }
    if k < 2 {
        return Err(Error::DimensionMismatch("need at least two states".into()));
    }
    if q.nrows() != k {
        return Err(Error::DimensionMismatch(format!(
            "q has {} rows, p has {k}",
            q.nrows()
        )));
    }
    if q.ncols() < k {
        return Err(Error::DimensionMismatch(format!(
            "observation alphabet ({}) smaller than state alphabet ({k})",
            q.ncols()
        )));
    }
    let p = normalize_rows(p, "p")?;
    let q = normalize_rows(q, "q")?;
    let pi = stationary_distribution(&p)?;
    Ok(HmmModel { p, q, pi })
}

/// Solves `pi p = pi`, `sum pi = 1` directly, falling back to power iteration
/// when the direct solution has a poor residual.
fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = p.nrows();
    let a = p.transpose() - DMatrix::<f64>::identity(k, k);
    let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if sv[1] < 1e-12 {
        return Err(Error::NotIrreducible(
            "stationary distribution is not unique".into(),
        ));
    }

    let mut system = a;
    system.row_mut(k - 1).fill(1.0);
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    let direct = system.lu().solve(&rhs);

    let residual = |x: &DVector<f64>| (p.transpose() * x - x).amax();
    let mut pi = match direct {
        Some(x) if x.iter().all(|v| v.is_finite()) && residual(&x) <= 1e-13 => x,
        _ => power_iteration(p)?,
    };

    if pi.iter().any(|&v| v <= 0.0) {
        if pi.iter().any(|&v| v < -1e-14) || pi.iter().all(|&v| v <= 0.0) {
            return Err(Error::NotIrreducible(format!(
                "stationary solve produced a non-positive vector {:?}",
                pi.as_slice()
            )));
        }
        return Err(Error::NotIrreducible(
            "some state has zero stationary mass".into(),
        ));
    }
    let s = pi.sum();
    pi /= s;
    Ok(pi)
}

fn power_iteration(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = p.nrows();
    let pt = p.transpose();
    let mut x = DVector::from_element(k, 1.0 / k as f64);
    for _ in 0..POWER_MAX_ITERS {
        let next = &pt * &x;
        let diff = (&next - &x).amax();
        x = next;
        if diff < POWER_TOL {
            return Ok(x);
        }
    }
    Err(Error::NotIrreducible(
        "power iteration did not converge".into(),
    ))
}

impl HmmModel {
    /// Number of hidden states.
    pub fn k(&self) -> usize {
        self.p.nrows()
    }

    /// Number of observation symbols.
    pub fn l(&self) -> usize {
        self.q.ncols()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn min_p(&self) -> f64 {
        self.p.min()
    }

    pub fn min_q(&self) -> f64 {
        self.q.min()
    }

    /// `Err(SymbolOutOfRange)` unless `1 <= z <= l`.
    pub fn check_symbol(&self, z: usize) -> Result<()> {
        if z == 0 || z > self.l() {
            Err(Error::SymbolOutOfRange {
                symbol: z,
                alphabet: self.l(),
            })
        } else {
            Ok(())
        }
    }

    pub fn check_state(&self, a: usize) -> Result<()> {
        if a == 0 || a > self.k() {
            Err(Error::SymbolOutOfRange {
                symbol: a,
                alphabet: self.k(),
            })
        } else {
            Ok(())
        }
    }

    /// Emission column `m -> (q(m|1), ..., q(m|k))` for a 1-based symbol.
    pub fn emission_column(&self, m: usize) -> DVector<f64> {
        self.q.column(m - 1).into_owned()
    }
}

/// Outcome of checking the positivity and rank hypotheses on a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// All transition and emission probabilities strictly positive.
    pub h1_holds: bool,
    /// `p` invertible and `q` of full row rank, up to `rank_tol`.
    pub h2_holds: bool,
    pub min_p: f64,
    pub min_q: f64,
    pub det_p: f64,
    pub sigma_min_q: f64,
    /// `1 / min q`.
    #[serde(rename = "R")]
    pub r: f64,
    /// Smallest cross-ratio of observation matrix entries.
    pub phi: f64,
    /// Birkhoff contraction coefficient `(1 - sqrt phi) / (1 + sqrt phi)`.
    pub alpha: f64,
    pub rank_tol: f64,
}

pub fn check_hypotheses(model: &HmmModel, rank_tol: f64) -> HypothesisReport {
    let k = model.k();
    let min_p = model.min_p();
    let min_q = model.min_q();
    let det_p = model.p.determinant();
    let mut sv: Vec<f64> = model.q.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_min_q = sv[k - 1];

    let h1_holds = min_p > 0.0 && min_q > 0.0;
    let h2_holds = det_p.abs() > rank_tol && sigma_min_q > rank_tol;

    let phi = birkhoff_phi(model);
    let alpha = (1.0 - phi.sqrt()) / (1.0 + phi.sqrt());
    HypothesisReport {
        h1_holds,
        h2_holds,
        min_p,
        min_q,
        det_p,
        sigma_min_q,
        r: 1.0 / min_q,
        phi,
        alpha,
        rank_tol,
    }
}

/// Exhaustive minimum over `(z0, i, j, r, s)` of
/// `L[r,j] L[s,i] / (L[s,j] L[r,i])`; zero when some entry of `L` vanishes.
fn birkhoff_phi(model: &HmmModel) -> f64 {
    let k = model.k();
    let mut phi = f64::INFINITY;
    for z0 in 1..=model.l() {
        let lz = crate::cocycle::observation_matrix_unchecked(model, z0);
        for i in 0..k {
            for j in 0..k {
                for r in 0..k {
                    for s in 0..k {
                        let den = lz[(s, j)] * lz[(r, i)];
                        if den <= 0.0 {
                            return 0.0;
                        }
                        phi = phi.min(lz[(r, j)] * lz[(s, i)] / den);
                    }
                }
            }
        }
    }
    phi
}

/// Stationary law of a single observation: `P(Z_0 = m) = sum_i pi(i) q(m|i)`.
pub fn observation_marginal(model: &HmmModel) -> DVector<f64> {
    model.q.transpose() * &model.pi
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    use crate::fixtures::test_model;

    #[test]
    fn symmetric_chain_has_uniform_law() {
        let m = build_model(&dmatrix![0.5, 0.5; 0.5, 0.5], &dmatrix![0.5, 0.5; 0.5, 0.5]).unwrap();
        assert!((m.pi()[0] - 0.5).abs() < 1e-15);
        assert!((m.pi()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stationary_law_of_test_chain() {
        // (pi1, pi2) p = (pi1, pi2): 0.1 pi1 = 0.2 pi2
        let m = test_model();
        assert!((m.pi()[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((m.pi()[1] - 1.0 / 3.0).abs() < 1e-14);
        let res = m.p().transpose() * m.pi() - m.pi();
        assert!(res.amax() < 1e-12);
    }

    #[test]
    fn rejects_short_row() {
        let err = build_model(&dmatrix![0.5, 0.3; 0.5, 0.5], &dmatrix![0.5, 0.5; 0.5, 0.5])
            .unwrap_err();
        assert!(matches!(err, Error::NonStochastic(_)));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let err = build_model(&dmatrix![0.5, 0.5; 0.5, 0.5], &dmatrix![1.0; 1.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
        let err = build_model(&dmatrix![1.0, 0.0], &dmatrix![1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_reducible_chain() {
        let err = build_model(&dmatrix![1.0, 0.0; 0.0, 1.0], &dmatrix![0.5, 0.5; 0.5, 0.5])
            .unwrap_err();
        assert!(matches!(err, Error::NotIrreducible(_)));
        // state 2 is transient
        let err = build_model(&dmatrix![1.0, 0.0; 0.5, 0.5], &dmatrix![0.5, 0.5; 0.5, 0.5])
            .unwrap_err();
        assert!(matches!(err, Error::NotIrreducible(_)));
    }

    #[test]
    fn periodic_chain_still_has_unique_law() {
        let m = build_model(&dmatrix![0.0, 1.0; 1.0, 0.0], &dmatrix![0.5, 0.5; 0.5, 0.5]).unwrap();
        assert!((m.pi()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hypotheses_on_test_model() {
        let rep = check_hypotheses(&test_model(), DEFAULT_RANK_TOL);
        assert!(rep.h1_holds && rep.h2_holds);
        assert!((rep.r - 10.0).abs() < 1e-12);
        assert!((rep.det_p - 0.7).abs() < 1e-12);
        assert!((rep.phi - 1.0 / 36.0).abs() < 1e-14);
        assert!((rep.alpha - 5.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn phi_matches_brute_force_cross_ratio() {
        // Independent oracle: enumerate cross ratios of p alone; the emission
        // factors cancel in every ratio.
        let m = build_model(
            &dmatrix![0.6, 0.3, 0.1; 0.2, 0.5, 0.3; 0.25, 0.25, 0.5],
            &dmatrix![0.7, 0.2, 0.1; 0.1, 0.6, 0.3; 0.3, 0.3, 0.4],
        )
        .unwrap();
        let p = m.p();
        let mut oracle = f64::INFINITY;
        for i in 0..3 {
            for j in 0..3 {
                for r in 0..3 {
                    for s in 0..3 {
                        oracle = oracle.min(p[(r, j)] * p[(s, i)] / (p[(s, j)] * p[(r, i)]));
                    }
                }
            }
        }
        let rep = check_hypotheses(&m, DEFAULT_RANK_TOL);
        assert!((rep.phi - oracle).abs() < 1e-14);
        assert!(rep.alpha < 1.0 && rep.alpha >= 0.0);
    }

    #[test]
    fn rank_one_emissions_fail_h2() {
        let m = build_model(&dmatrix![0.9, 0.1; 0.2, 0.8], &dmatrix![0.5, 0.5; 0.5, 0.5]).unwrap();
        let rep = check_hypotheses(&m, DEFAULT_RANK_TOL);
        assert!(rep.h1_holds);
        assert!(!rep.h2_holds);
    }

    #[test]
    fn identity_emissions_fail_h1() {
        let m = build_model(&dmatrix![0.9, 0.1; 0.2, 0.8], &dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
        let rep = check_hypotheses(&m, DEFAULT_RANK_TOL);
        assert!(!rep.h1_holds);
        assert_eq!(rep.min_q, 0.0);
        assert_eq!(rep.phi, 0.0);
        assert_eq!(rep.alpha, 1.0);
    }

    #[test]
    fn marginal_of_observations() {
        let m = test_model();
        let mu = observation_marginal(&m);
        assert!((mu[0] - (2.0 / 3.0 * 0.9 + 1.0 / 3.0 * 0.1)).abs() < 1e-14);
        assert!((mu.sum() - 1.0).abs() < 1e-14);

        let u = build_model(
            &dmatrix![0.9, 0.1; 0.2, 0.8],
            &dmatrix![0.25, 0.25, 0.25, 0.25; 0.25, 0.25, 0.25, 0.25],
        )
        .unwrap();
        assert!(observation_marginal(&u).iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn model_spec_round_trip() {
        let m = test_model();
        let spec = ModelSpec::from(&m);
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.build().unwrap(), m);
    }
}
