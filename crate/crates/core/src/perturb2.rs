//! Two-state chain observed through a binary symmetric channel, treated as a
//! perturbation of the fully observed chain.
//!
//! Symbols are `0` and `1` throughout this module. [`PerturbModel::to_hmm`]
//! and [`to_binary`] are the only places that translate to the 1-based
//! labels of [`HmmModel`].
//!
//! With `P = [[p0, 1-p0], [p1, 1-p1]]` and flip probability `ε`, the
//! observation matrix splits as `L(z, ε) = M_z + ε A_z`, and for `ε` small
//! the top Oseledec direction is `g = e_{z1} + ε h f_{z1}` where `h` is the
//! fixed point of a contraction built from the two next symbols. Its
//! multiplier `ρ` gives the top exponent as a Birkhoff average.

use nalgebra::{dmatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, HmmModel};
use crate::simulate::{sample_path, ObservationWindow};
use crate::stats::{BatchMeans, DEFAULT_BATCHES};

/// Default truncation depth of the fixed-point recursion.
pub const DEFAULT_DEPTH: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Only `ε <= eps0`, where the proof's inequalities guarantee a
    /// contraction by one half.
    Rigorous,
    /// Any `ε`, with the contraction factor measured at run time.
    #[default]
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbModel {
    pub p0: f64,
    pub p1: f64,
    pub epsilon: f64,
    /// `min{p0, p1, 1-p0, 1-p1}`.
    pub beta: f64,
    /// Radius `16 / β⁵` of the ball the fixed point lives in.
    pub d: f64,
    /// Largest `ε` satisfying both proof inequalities.
    pub eps0: f64,
    pub m: [Matrix2<f64>; 2],
    pub a: [Matrix2<f64>; 2],
    pub e: [Vector2<f64>; 2],
    pub f: [Vector2<f64>; 2],
    pub pi: Vector2<f64>,
}

/// Natural-log negative binary entropy `x ln x + (1-x) ln(1-x)`.
pub fn neg_entropy(x: f64) -> f64 {
    let t = |y: f64| if y > 0.0 { y * y.ln() } else { 0.0 };
    t(x) + t(1.0 - x)
}

/// `ε = 0` is accepted: it is the unperturbed, fully observed chain that the
/// expansion starts from.
pub fn build_perturb(p0: f64, p1: f64, epsilon: f64) -> Result<PerturbModel> {
    if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) {
        return Err(Error::DegenerateParameters(format!(
            "p0 = {p0}, p1 = {p1} must lie in [0, 1]"
        )));
    }
    if p0 == p1 {
        return Err(Error::DegenerateParameters("p0 = p1 makes P singular".into()));
    }
    let beta = p0.min(p1).min(1.0 - p0).min(1.0 - p1);
    if !(beta > 0.0) {
        return Err(Error::DegenerateParameters("a transition probability is 0 or 1".into()));
    }
    if !(epsilon >= 0.0 && epsilon < 1.0) || epsilon == 0.5 {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    let d = 16.0 / beta.powi(5);
    let base = Matrix2::new(p0, -(1.0 - p0), p1, -(1.0 - p1));
    let m = [
        Matrix2::new(p0, 0.0, p1, 0.0),
        Matrix2::new(0.0, 1.0 - p0, 0.0, 1.0 - p1),
    ];
    let a = [-base, base];
    let e = [Vector2::new(p0, p1), Vector2::new(1.0 - p0, 1.0 - p1)];
    let f = [Vector2::new(-p1, p0), Vector2::new(-(1.0 - p1), 1.0 - p0)];
    // stationary law of the two-state chain
    let pi0 = p1 / (p1 + 1.0 - p0);
    Ok(PerturbModel {
        p0,
        p1,
        epsilon,
        beta,
        d,
        eps0: rigorous_eps0(beta, d),
        m,
        a,
        e,
        f,
        pi: Vector2::new(pi0, 1.0 - pi0),
    })
}

/// Bisection for the largest `ε` with
/// `(2/β²)(4 + 4εD)/(β³ − 4εD − 4ε − 4ε²) <= D` and
/// `ε (2/β²) 16/(β³ − 4εD − 4ε − 4ε²)² <= 1/2`.
fn rigorous_eps0(beta: f64, d: f64) -> f64 {
    let ok = |eps: f64| {
        let den = beta.powi(3) - 4.0 * eps * d - 4.0 * eps - 4.0 * eps * eps;
        if den <= 0.0 {
            return false;
        }
        let maps_into = (2.0 / (beta * beta)) * (4.0 + 4.0 * eps * d) / den <= d;
        let contracts = eps * (2.0 / (beta * beta)) * 16.0 / (den * den) <= 0.5;
        maps_into && contracts
    };
    if !ok(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    // the denominator vanishes before β³ / (4D)
    let mut hi = beta.powi(3) / (4.0 * d);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// 1-based observation symbols to `0/1`.
pub fn to_binary(symbols: &[usize]) -> Result<Vec<usize>> {
    symbols
        .iter()
        .map(|&s| match s {
            1 | 2 => Ok(s - 1),
            _ => Err(Error::SymbolOutOfRange { symbol: s, alphabet: 2 }),
        })
        .collect()
}

impl PerturbModel {
    /// `η_z = q(z | 0)`: `1 − ε` for `z = 0`, `ε` for `z = 1`.
    pub fn eta(&self, z: usize) -> f64 {
        if z == 0 {
            1.0 - self.epsilon
        } else {
            self.epsilon
        }
    }

    pub fn transition(&self) -> Matrix2<f64> {
        Matrix2::new(self.p0, 1.0 - self.p0, self.p1, 1.0 - self.p1)
    }

    /// `L(z, ε) = M_z + ε A_z`.
    pub fn observation_matrix(&self, z: usize) -> Matrix2<f64> {
        self.m[z] + self.a[z] * self.epsilon
    }

    /// The same chain as a generic model; symbol `b` becomes `b + 1`.
    pub fn to_hmm(&self) -> Result<HmmModel> {
        let eps = self.epsilon;
        build_model(
            &dmatrix![self.p0, 1.0 - self.p0; self.p1, 1.0 - self.p1],
            &dmatrix![1.0 - eps, eps; eps, 1.0 - eps],
        )
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<PerturbModel> {
        build_perturb(self.p0, self.p1, epsilon)
    }

    /// Coefficients `(u1, u2, u3, u4)` of `𝒯` for the symbol pair `(z1, z2)`:
    /// `h = (u1 + ε u2 h') / (u3 + ε u4 h')`.
    ///
    /// Expanding `L(z1)(e_{z2} + ε h' f_{z2})` puts `h'` on the `ε²` term, so
    /// that term sits in `u4` rather than in `u3`.
    pub fn coefficients(&self, z1: usize, z2: usize) -> [f64; 4] {
        let (m, a) = (&self.m[z1], &self.a[z1]);
        let (e1, f1, e2, f2) = (&self.e[z1], &self.f[z1], &self.e[z2], &self.f[z2]);
        let ratio = e1.norm_squared() / f1.norm_squared();
        let eps = self.epsilon;
        [
            ratio * (a * e2).dot(f1),
            ratio * (a * f2).dot(f1),
            (m * e2).dot(e1) + eps * (a * e2).dot(e1),
            (m * f2).dot(e1) + eps * (a * f2).dot(e1),
        ]
    }

    /// One application of `𝒯` at the symbol pair `(z1, z2)`.
    pub fn apply_t(&self, z1: usize, z2: usize, h_next: f64) -> f64 {
        let [u1, u2, u3, u4] = self.coefficients(z1, z2);
        let eps = self.epsilon;
        (u1 + eps * u2 * h_next) / (u3 + eps * u4 * h_next)
    }

    /// `g = e_z + ε h f_z`.
    pub fn g(&self, z: usize, h: f64) -> Vector2<f64> {
        self.e[z] + self.f[z] * (self.epsilon * h)
    }

    /// Closed-form zeroth-order term `π(0) H(p0) + π(1) H(p1)`.
    pub fn lambda1_zeroth_order(&self) -> f64 {
        self.pi[0] * neg_entropy(self.p0) + self.pi[1] * neg_entropy(self.p1)
    }
}

/// `ρ = (u3 + ε u4 h') / ‖e_{z1}‖²`, the multiplier in
/// `L(z1) g(z2, h') = ρ g(z1, h)`.
pub fn rho_eval(pm: &PerturbModel, z1: usize, z2: usize, h_next: f64) -> f64 {
    let [_, _, u3, u4] = pm.coefficients(z1, z2);
    (u3 + pm.epsilon * u4 * h_next) / pm.e[z1].norm_squared()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub h_value: f64,
    pub iterations: usize,
    /// `D 2⁻ᵐ` (rigorous) or `D cᵐ` with the measured factor `c` (empirical).
    pub error_bound: f64,
    /// Symbols `z_1 ... z_{m+1}`, as `0/1`.
    pub window_used: Vec<usize>,
    /// Largest ratio of successive iterate differences that rounding does
    /// not swamp; zero when the iterates stop moving at once.
    pub contraction_estimate: f64,
    /// `h⁽¹⁾, ..., h⁽ᵐ⁾` at the window's first symbol, starting from `h⁽⁰⁾ = 0`.
    pub iterates: Vec<f64>,
    pub mode: SolveMode,
}

/// Fixed point `h(z)` from the forward symbols `z_1 ... z_{m+1}` (`0/1`).
///
/// The `i`-th iterate is `𝒯^i(0)` evaluated at `z`, which reads
/// `z_1 ... z_{i+1}`; successive iterates are compared to measure the
/// contraction.
pub fn solve_h_binary(pm: &PerturbModel, forward: &[usize], m: usize, mode: SolveMode) -> Result<FixedPointResult> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    if forward.len() < m + 1 {
        return Err(Error::WindowTooShort {
            needed: m + 1,
            available: forward.len(),
        });
    }
    if let Some(&bad) = forward.iter().find(|&&z| z > 1) {
        return Err(Error::SymbolOutOfRange { symbol: bad, alphabet: 2 });
    }
    if mode == SolveMode::Rigorous && pm.epsilon > pm.eps0 {
        return Err(Error::OutsideValidity {
            epsilon: pm.epsilon,
            eps0: pm.eps0,
        });
    }
    let coeffs: Vec<[f64; 4]> = (0..m).map(|j| pm.coefficients(forward[j], forward[j + 1])).collect();
    let eps = pm.epsilon;
    let iterates: Vec<f64> = (1..=m)
        .map(|i| {
            (0..i).rev().fold(0.0, |h, j| {
                let [u1, u2, u3, u4] = coeffs[j];
                (u1 + eps * u2 * h) / (u3 + eps * u4 * h)
            })
        })
        .collect();
    let h_value = *iterates.last().expect("m >= 1");

    let noise = 64.0 * f64::EPSILON * h_value.abs().max(1.0);
    let diffs: Vec<f64> = iterates.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let contraction_estimate = diffs
        .windows(2)
        .filter(|w| w[0] > noise && w[1] > noise)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    let error_bound = match mode {
        SolveMode::Rigorous => pm.d * 0.5_f64.powi(m as i32),
        SolveMode::Empirical => {
            if contraction_estimate >= 1.0 {
                return Err(Error::ContractionFailure(contraction_estimate));
            }
            pm.d * contraction_estimate.powi(m as i32)
        }
    };
    Ok(FixedPointResult {
        h_value,
        iterations: m,
        error_bound,
        window_used: forward[..=m].to_vec(),
        contraction_estimate,
        iterates,
        mode,
    })
}

/// [`solve_h_binary`] on a forward window (times `1 ..= m+1`, 1-based
/// symbols).
pub fn solve_h(pm: &PerturbModel, window: &ObservationWindow, m: usize, mode: SolveMode) -> Result<FixedPointResult> {
    if window.origin() != 1 {
        return Err(Error::InvalidArgument(format!(
            "forward window must start at time 1, this one starts at {}",
            window.origin()
        )));
    }
    solve_h_binary(pm, &to_binary(window.symbols())?, m, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenrelation {
    /// `‖L(z_1) g(σz) − ρ g(z)‖`.
    pub residual: f64,
    pub rho: f64,
    pub g: [f64; 2],
    pub g_shifted: [f64; 2],
    pub h: FixedPointResult,
    pub h_shifted: FixedPointResult,
}

/// Solves `h(z)` and `h(σz)` independently, `m` iterations each, and
/// measures how well `L(z_1) g(σz) = ρ(σz) g(z)` holds. Needs `m + 2`
/// forward symbols.
pub fn verify_eigenrelation(pm: &PerturbModel, window: &ObservationWindow, m: usize, mode: SolveMode) -> Result<Eigenrelation> {
    if window.origin() != 1 {
        return Err(Error::InvalidArgument("forward window must start at time 1".into()));
    }
    let z = to_binary(window.symbols())?;
    if z.len() < m + 2 {
        return Err(Error::WindowTooShort {
            needed: m + 2,
            available: z.len(),
        });
    }
    let h = solve_h_binary(pm, &z, m, mode)?;
    let h_shifted = solve_h_binary(pm, &z[1..], m, mode)?;
    let g = pm.g(z[0], h.h_value);
    let g_shifted = pm.g(z[1], h_shifted.h_value);
    let rho = rho_eval(pm, z[0], z[1], h_shifted.h_value);
    let residual = (pm.observation_matrix(z[0]) * g_shifted - g * rho).norm();
    Ok(Eigenrelation {
        residual,
        rho,
        g: [g[0], g[1]],
        g_shifted: [g_shifted[0], g_shifted[1]],
        h,
        h_shifted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_steps: usize,
    pub depth: usize,
    /// Smallest `ρ` met along the path.
    pub min_rho: f64,
}

/// `λ₁ ≈ (1/N) Σ_t ln ρ_t` along a stationary path of `N + m + 1` symbols,
/// each `h_t` obtained by running the recursion back from depth `m`.
///
/// A single backward sweep computes every `h_t`: the value at `t` reuses
/// the value at `t + 1`, which is `𝒯` applied `N + m − t` times to zero.
pub fn lambda1_birkhoff(pm: &PerturbModel, n_steps: usize, depth: usize, seed: u64) -> Result<BirkhoffEstimate> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let hmm = pm.to_hmm()?;
    let path = sample_path(&hmm, n_steps + depth + 1, seed)?;
    let z = to_binary(&path.z)?;
    let mut h_next = 0.0;
    let mut logs = vec![0.0; n_steps];
    let mut min_rho = f64::INFINITY;
    for t in (0..n_steps + depth).rev() {
        let rho = rho_eval(pm, z[t], z[t + 1], h_next);
        if t < n_steps {
            if !(rho > 0.0) {
                return Err(Error::ContractionFailure(rho));
            }
            logs[t] = rho.ln();
            min_rho = min_rho.min(rho);
        }
        h_next = pm.apply_t(z[t], z[t + 1], h_next);
    }
    let mut bm = BatchMeans::new(n_steps, DEFAULT_BATCHES);
    for x in logs {
        bm.push(x);
    }
    Ok(BirkhoffEstimate {
        mean: bm.mean(),
        std_error: bm.std_error(),
        n_steps,
        depth,
        min_rho,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryRateBound {
    /// `ln ε + ln |det P| − 2 [π(0) H(p0) + π(1) H(p1)]`, without the `O(ε)`
    /// remainder.
    pub leading_term: f64,
    /// Exact `λ₁ + λ₂ = ln ε + ln(1 − ε) + ln |det P|`.
    pub ledet: f64,
}

pub fn binary_rate_bound(pm: &PerturbModel) -> BinaryRateBound {
    let eps = pm.epsilon;
    let det = pm.transition().determinant().abs().ln();
    BinaryRateBound {
        leading_term: eps.ln() + det - 2.0 * pm.lambda1_zeroth_order(),
        ledet: eps.ln() + (1.0 - eps).ln() + det,
    }
}
