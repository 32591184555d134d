//! Loss of memory: the conditional differences `Δ[n]` and `Δ̃[n]`, their
//! decay rates, and the filter vectors they are built from.
//!
//! With `(θ_b)_i = π(i) q(b|i)`, `(ψ_a)_i = p(a|i)` and
//! `S_ab[n] = <θ_b, L^[n-1] ψ_a>`, where `L^[n-1]` applies `L(z_{-1})` first
//! and `L(z_{-n+1})` last,
//!
//! ```text
//! Δ_{a,b,c}[n] = S_ab / Σ_a' S_a'b − S_ac / Σ_a' S_a'c
//!             = <θ_b ∧ θ_c, u_a ∧ u_1> / (<θ_b, u_1> <θ_c, u_1>)
//! ```
//!
//! with `u_a = L^[n-1] ψ_a` and `u_1 = L^[n-1] 1`. The wedge in the
//! numerator is carried through the second compound matrix, so `Δ[n]` keeps
//! full relative precision long after the two conditional probabilities
//! agree to every printed digit.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::cocycle::{log_norm_trajectory, observation_matrices};
use crate::error::{Error, Result};
use crate::model::HmmModel;
use crate::simulate::ObservationWindow;
use crate::stats::linear_fit;
use crate::wedge;

/// Points with `|Δ|` below this are censored from rate fits.
pub const DEFAULT_UNDERFLOW_FLOOR: f64 = 1e-290;
/// Largest `n` accepted by the path-enumeration oracles.
pub const BRUTE_FORCE_MAX_N: usize = 14;
/// Fewest uncensored points a rate fit accepts.
pub const MIN_RATE_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterVectors {
    /// `theta[b - 1][i] = π(i) q(b|i)`.
    pub theta: Vec<DVector<f64>>,
    /// `psi[a - 1][i] = p(a|i)`.
    pub psi: Vec<DVector<f64>>,
}

pub fn filter_vectors(model: &HmmModel) -> FilterVectors {
    let theta = (1..=model.l())
        .map(|b| model.pi().component_mul(&model.emission_column(b)))
        .collect();
    let psi = (0..model.k())
        .map(|a| model.p().column(a).into_owned())
        .collect();
    FilterVectors { theta, psi }
}

/// `ψ̃_e = Σ_a q(e|a) ψ_a`, the vector that turns `Δ` into `Δ̃`.
fn psi_tilde(model: &HmmModel) -> Vec<DVector<f64>> {
    (1..=model.l())
        .map(|e| model.p() * model.emission_column(e))
        .collect()
}

/// Which conditional difference a curve holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    /// `Δ_{a,b,c}`: the first index is a hidden state.
    Delta,
    /// `Δ̃_{e,b,c}`: the first index is an observation symbol.
    DeltaTilde,
}

/// `(a, b, c)` for `Δ`, `(e, b, c)` for `Δ̃`; all 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple(pub usize, pub usize, pub usize);

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.0, self.1, self.2)
    }
}

impl std::str::FromStr for Triple {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad triple {s:?}")))
        };
        match parts.as_slice() {
            [a, b, c] => Ok(Triple(parse(a)?, parse(b)?, parse(c)?)),
            _ => Err(Error::InvalidArgument(format!("bad triple {s:?}, expected a-b-c"))),
        }
    }
}

/// Every triple in lexicographic order.
pub fn all_triples(model: &HmmModel, kind: CurveKind) -> Vec<Triple> {
    let first = match kind {
        CurveKind::Delta => model.k(),
        CurveKind::DeltaTilde => model.l(),
    };
    let mut out = Vec::new();
    for a in 1..=first {
        for b in 1..=model.l() {
            for c in 1..=model.l() {
                out.push(Triple(a, b, c));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    /// Signed value; underflows to zero long before `log_abs` does.
    pub value: f64,
    /// `ln |Δ[n]|`, `-inf` for an exact zero.
    pub log_abs: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub kind: CurveKind,
    pub triple: Triple,
    /// Points for `n = 1..=n_max`, in order.
    pub points: Vec<DecayPoint>,
}

impl DecayCurve {
    pub fn n_max(&self) -> usize {
        self.points.last().map_or(0, |p| p.n)
    }

    pub fn uncensored(&self) -> impl Iterator<Item = &DecayPoint> {
        self.points.iter().filter(|p| !p.censored)
    }
}

/// Writes curves as CSV rows `triple,n,delta,log_abs_delta,censored`.
pub fn write_curves_csv<W: Write>(curves: &[DecayCurve], mut w: W) -> Result<()> {
    writeln!(w, "triple,n,delta,log_abs_delta,censored")?;
    for c in curves {
        for p in &c.points {
            writeln!(w, "{},{},{:e},{},{}", c.triple, p.n, p.value, p.log_abs, p.censored)?;
        }
    }
    Ok(())
}

/// Forward pass shared by `Δ` and `Δ̃`: a family of vectors `u_a`, the
/// vector `u_1`, and the wedges `u_a ∧ u_1`, each under its own log scale.
struct ForwardEngine {
    mats: Vec<DMatrix<f64>>,
    compounds: Vec<DMatrix<f64>>,
    family: Vec<DVector<f64>>,
    ones: DVector<f64>,
    log_u: f64,
    wedges: Vec<DVector<f64>>,
    log_w: Vec<f64>,
}

impl ForwardEngine {
    fn new(model: &HmmModel, family: Vec<DVector<f64>>) -> Self {
        let mats = observation_matrices(model);
        let compounds = mats.iter().map(wedge::compound2).collect();
        let ones = DVector::from_element(model.k(), 1.0);
        let wedges: Vec<DVector<f64>> = family.iter().map(|u| wedge::wedge(u, &ones)).collect();
        let log_w = vec![0.0; wedges.len()];
        Self {
            mats,
            compounds,
            family,
            ones,
            log_u: 0.0,
            wedges,
            log_w,
        }
    }

    fn step(&mut self, z: usize) {
        let l = &self.mats[z - 1];
        for u in &mut self.family {
            *u = l * &*u;
        }
        self.ones = l * &self.ones;
        let s = self.ones.amax();
        for u in &mut self.family {
            *u /= s;
        }
        self.ones /= s;
        self.log_u += s.ln();

        let c = &self.compounds[z - 1];
        for (w, lw) in self.wedges.iter_mut().zip(&mut self.log_w) {
            *w = c * &*w;
            let sw = w.amax();
            if sw > 0.0 {
                *w /= sw;
                *lw += sw.ln();
            }
        }
    }

    /// Multiplies the stored vectors by `c` without recording it; the wedges
    /// pick up `c²`. Conditional differences must not notice.
    fn inject_scale(&mut self, c: f64) {
        for u in &mut self.family {
            *u *= c;
        }
        self.ones *= c;
        for w in &mut self.wedges {
            *w *= c * c;
        }
    }

    /// `(sign, ln |Δ|)` of the difference for family member `a` (0-based).
    fn delta(&self, a: usize, theta_b: &DVector<f64>, theta_c: &DVector<f64>, theta_bc: &DVector<f64>) -> (f64, f64) {
        let num = wedge::pairing(theta_bc, &self.wedges[a]);
        if num == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        let den = theta_b.dot(&self.ones) * theta_c.dot(&self.ones);
        let log_abs = num.abs().ln() + self.log_w[a] - den.ln() - 2.0 * self.log_u;
        (num.signum(), log_abs)
    }
}

fn check_h1(model: &HmmModel) -> Result<()> {
    if model.min_p() > 0.0 && model.min_q() > 0.0 {
        Ok(())
    } else {
        Err(Error::HypothesisViolated(
            "decay curves require strictly positive p and q".into(),
        ))
    }
}

fn check_triple(model: &HmmModel, kind: CurveKind, t: Triple) -> Result<()> {
    match kind {
        CurveKind::Delta => model.check_state(t.0)?,
        CurveKind::DeltaTilde => model.check_symbol(t.0)?,
    }
    model.check_symbol(t.1)?;
    model.check_symbol(t.2)
}

fn curves_impl(
    model: &HmmModel,
    kind: CurveKind,
    window: &ObservationWindow,
    triples: &[Triple],
    n_max: usize,
    floor: f64,
    rescale: &dyn Fn(usize) -> f64,
) -> Result<Vec<DecayCurve>> {
    check_h1(model)?;
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if window.len() + 1 < n_max {
        return Err(Error::WindowTooShort {
            needed: n_max - 1,
            available: window.len(),
        });
    }
    for &t in triples {
        check_triple(model, kind, t)?;
    }
    let stream: Vec<usize> = window.past_ordered()?.take(n_max - 1).collect();
    for &z in &stream {
        model.check_symbol(z)?;
    }

    let family = match kind {
        CurveKind::Delta => filter_vectors(model).psi,
        CurveKind::DeltaTilde => psi_tilde(model),
    };
    let theta = filter_vectors(model).theta;
    let theta_wedges: Vec<Vec<DVector<f64>>> = theta
        .iter()
        .map(|tb| theta.iter().map(|tc| wedge::wedge(tb, tc)).collect())
        .collect();
    let log_floor = floor.ln();

    let mut engine = ForwardEngine::new(model, family);
    let mut curves: Vec<DecayCurve> = triples
        .iter()
        .map(|&triple| DecayCurve {
            kind,
            triple,
            points: Vec::with_capacity(n_max),
        })
        .collect();
    for n in 1..=n_max {
        if n >= 2 {
            engine.step(stream[n - 2]);
        }
        let c = rescale(n);
        if c != 1.0 {
            engine.inject_scale(c);
        }
        for curve in &mut curves {
            let Triple(a, b, c) = curve.triple;
            let (sign, log_abs) = engine.delta(a - 1, &theta[b - 1], &theta[c - 1], &theta_wedges[b - 1][c - 1]);
            curve.points.push(DecayPoint {
                n,
                value: sign * log_abs.exp(),
                log_abs,
                censored: !(log_abs >= log_floor),
            });
        }
    }
    Ok(curves)
}

/// `Δ_{a,b,c}[n]` for `n = 1..=n_max` along a window ending at time −1.
///
/// The window must hold at least `n_max − 1` symbols; only the latest
/// `n_max − 1` are read.
pub fn delta_curve(
    model: &HmmModel,
    window: &ObservationWindow,
    triples: &[Triple],
    n_max: usize,
) -> Result<Vec<DecayCurve>> {
    curves_impl(model, CurveKind::Delta, window, triples, n_max, DEFAULT_UNDERFLOW_FLOOR, &|_| 1.0)
}

/// [`delta_curve`] with a custom censoring floor.
pub fn delta_curve_with_floor(
    model: &HmmModel,
    window: &ObservationWindow,
    triples: &[Triple],
    n_max: usize,
    floor: f64,
) -> Result<Vec<DecayCurve>> {
    curves_impl(model, CurveKind::Delta, window, triples, n_max, floor, &|_| 1.0)
}

/// [`delta_curve`] with the internal forward vectors multiplied by
/// `rescale(n)` at step `n`, for checking that the result is scale free.
pub fn delta_curve_rescaled(
    model: &HmmModel,
    window: &ObservationWindow,
    triples: &[Triple],
    n_max: usize,
    rescale: impl Fn(usize) -> f64,
) -> Result<Vec<DecayCurve>> {
    curves_impl(model, CurveKind::Delta, window, triples, n_max, DEFAULT_UNDERFLOW_FLOOR, &rescale)
}

/// `Δ̃_{e,b,c}[n] = Σ_a q(e|a) Δ_{a,b,c}[n]`, evaluated through the single
/// vector `Σ_a q(e|a) ψ_a` so that no cancellation occurs in the sum.
pub fn delta_tilde_curve(
    model: &HmmModel,
    window: &ObservationWindow,
    triples: &[Triple],
    n_max: usize,
) -> Result<Vec<DecayCurve>> {
    curves_impl(model, CurveKind::DeltaTilde, window, triples, n_max, DEFAULT_UNDERFLOW_FLOOR, &|_| 1.0)
}

/// `γ_b[n] = <θ_{b0}, u> / <θ_b, u>` with `u = L^[n-1] ψ_a`, for every `b`;
/// row `n - 1` holds step `n`.
pub fn gamma_b_trajectory(
    model: &HmmModel,
    window: &ObservationWindow,
    a: usize,
    b0: usize,
    n_max: usize,
) -> Result<Vec<Vec<f64>>> {
    check_h1(model)?;
    model.check_state(a)?;
    model.check_symbol(b0)?;
    if n_max == 0 || window.len() + 1 < n_max {
        return Err(Error::WindowTooShort {
            needed: n_max.saturating_sub(1),
            available: window.len(),
        });
    }
    let fv = filter_vectors(model);
    let mats = observation_matrices(model);
    let mut u = fv.psi[a - 1].clone();
    let mut stream = window.past_ordered()?;
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        if n >= 2 {
            let z = stream.next().expect("length checked");
            model.check_symbol(z)?;
            u = &mats[z - 1] * u;
            let s = u.amax();
            u /= s;
        }
        let top = fv.theta[b0 - 1].dot(&u);
        out.push(fv.theta.iter().map(|tb| top / tb.dot(&u)).collect());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exact path enumeration

/// `m · 2^e`, exact. Products and sums of `f64` values stay exact.
#[derive(Debug, Clone)]
struct Dyadic {
    m: BigInt,
    e: i64,
}

impl Dyadic {
    fn zero() -> Self {
        Dyadic { m: BigInt::zero(), e: 0 }
    }

    fn from_f64(x: f64) -> Self {
        use num_traits::Float;
        let (mant, exp, sign) = x.integer_decode();
        Dyadic {
            m: BigInt::from(mant) * i64::from(sign),
            e: i64::from(exp),
        }
    }

    fn mul(&self, o: &Dyadic) -> Dyadic {
        Dyadic {
            m: &self.m * &o.m,
            e: self.e + o.e,
        }
    }

    fn add(&self, o: &Dyadic) -> Dyadic {
        if self.m.is_zero() {
            return o.clone();
        }
        if o.m.is_zero() {
            return self.clone();
        }
        let e = self.e.min(o.e);
        let a = &self.m << (self.e - e) as usize;
        let b = &o.m << (o.e - e) as usize;
        Dyadic { m: a + b, e }
    }

    fn sub(&self, o: &Dyadic) -> Dyadic {
        self.add(&Dyadic { m: -o.m.clone(), e: o.e })
    }

    /// `self / den` rounded to `f64` (relative error below `2^-60`).
    fn ratio(&self, den: &Dyadic) -> f64 {
        if self.m.is_zero() {
            return 0.0;
        }
        let neg = self.m.is_negative() != den.m.is_negative();
        let (a, b) = (self.m.abs(), den.m.abs());
        // scale so the integer quotient carries at least 64 significant bits
        let shift = (b.bits() as i64 - a.bits() as i64 + 64).max(0);
        let q = (a << shift as usize) / b;
        let bits = q.bits() as i64;
        let drop = (bits - 64).max(0);
        let top = (q >> drop as usize).to_u64().expect("64-bit quotient") as f64;
        let exp = self.e - den.e - shift + drop;
        let v = scale_pow2(top, exp);
        if neg {
            -v
        } else {
            v
        }
    }
}

fn scale_pow2(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// `W[x][y] = Σ_paths Π p(x_{t+1}|x_t) q(z_{t+1}|x_{t+1})` over hidden paths
/// from `x` to `y` that emit `emissions` after the first state, by
/// depth-first enumeration.
fn path_weights(model: &HmmModel, emissions: &[usize]) -> Vec<Vec<Dyadic>> {
    let k = model.k();
    let p: Vec<Vec<Dyadic>> = (0..k)
        .map(|i| (0..k).map(|j| Dyadic::from_f64(model.p()[(i, j)])).collect())
        .collect();
    let q: Vec<Vec<Dyadic>> = (0..k)
        .map(|i| (0..model.l()).map(|m| Dyadic::from_f64(model.q()[(i, m)])).collect())
        .collect();
    let mut w = vec![vec![Dyadic::zero(); k]; k];

    fn dfs(
        depth: usize,
        state: usize,
        weight: Dyadic,
        start: usize,
        emissions: &[usize],
        p: &[Vec<Dyadic>],
        q: &[Vec<Dyadic>],
        w: &mut [Vec<Dyadic>],
    ) {
        if depth == emissions.len() {
            w[start][state] = w[start][state].add(&weight);
            return;
        }
        let z = emissions[depth] - 1;
        for next in 0..p.len() {
            let step = p[state][next].mul(&q[next][z]);
            dfs(depth + 1, next, weight.mul(&step), start, emissions, p, q, w);
        }
    }

    for x in 0..k {
        dfs(0, x, Dyadic::from_f64(1.0), x, emissions, &p, &q, &mut w);
    }
    w
}

fn oracle_block(model: &HmmModel, window: &ObservationWindow, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    if window.len() + 1 < n {
        return Err(Error::WindowTooShort {
            needed: n - 1,
            available: window.len(),
        });
    }
    // times −n+1, ..., −1 in chronological order
    let mut block: Vec<usize> = window.past_ordered()?.take(n - 1).collect();
    block.reverse();
    for &z in &block {
        model.check_symbol(z)?;
    }
    Ok(block)
}

fn conditional_difference(s_b: &[Dyadic], s_c: &[Dyadic], idx: usize) -> f64 {
    let total = |s: &[Dyadic]| s.iter().fold(Dyadic::zero(), |acc, x| acc.add(x));
    let (t_b, t_c) = (total(s_b), total(s_c));
    let num = s_b[idx].mul(&t_c).sub(&s_c[idx].mul(&t_b));
    num.ratio(&t_b.mul(&t_c))
}

/// `P(X_0 = a, Z block, Z_{-n} = b)` for every `a`, by enumerating the
/// hidden path `x_{-n}, ..., x_{-1}`.
fn joint_state(model: &HmmModel, block: &[usize], b: usize) -> Vec<Dyadic> {
    let k = model.k();
    let w = path_weights(model, block);
    (0..k)
        .map(|a| {
            let mut s = Dyadic::zero();
            for x in 0..k {
                let head = Dyadic::from_f64(model.pi()[x]).mul(&Dyadic::from_f64(model.q()[(x, b - 1)]));
                for y in 0..k {
                    let tail = Dyadic::from_f64(model.p()[(y, a)]);
                    s = s.add(&head.mul(&w[x][y]).mul(&tail));
                }
            }
            s
        })
        .collect()
}

/// `Δ_{a,b,c}[n]` by summing over every hidden path, in exact arithmetic.
///
/// Independent of the matrix formulation and limited to
/// `n <= BRUTE_FORCE_MAX_N`. Only the latest `n − 1` symbols of the window
/// are used.
pub fn delta_bruteforce(
    model: &HmmModel,
    window: &ObservationWindow,
    a: usize,
    b: usize,
    c: usize,
    n: usize,
) -> Result<f64> {
    model.check_state(a)?;
    model.check_symbol(b)?;
    model.check_symbol(c)?;
    let block = oracle_block(model, window, n)?;
    if b == c {
        return Ok(0.0);
    }
    let s_b = joint_state(model, &block, b);
    let s_c = joint_state(model, &block, c);
    Ok(conditional_difference(&s_b, &s_c, a - 1))
}

/// `P(Z_0 = e | Z block, Z_{-n} = b) − P(Z_0 = e | Z block, Z_{-n} = c)` by
/// enumerating the hidden path through time 0 with `Z_0` observed.
pub fn delta_tilde_bruteforce(
    model: &HmmModel,
    window: &ObservationWindow,
    e: usize,
    b: usize,
    c: usize,
    n: usize,
) -> Result<f64> {
    model.check_symbol(e)?;
    model.check_symbol(b)?;
    model.check_symbol(c)?;
    let block = oracle_block(model, window, n)?;
    if b == c {
        return Ok(0.0);
    }
    let joint = |b: usize| -> Vec<Dyadic> {
        (1..=model.l())
            .map(|e| {
                let mut emissions = block.clone();
                emissions.push(e);
                let w = path_weights(model, &emissions);
                let mut s = Dyadic::zero();
                for x in 0..model.k() {
                    let head = Dyadic::from_f64(model.pi()[x]).mul(&Dyadic::from_f64(model.q()[(x, b - 1)]));
                    for y in 0..model.k() {
                        s = s.add(&head.mul(&w[x][y]));
                    }
                }
                s
            })
            .collect()
    };
    Ok(conditional_difference(&joint(b), &joint(c), e - 1))
}

// ---------------------------------------------------------------------------
// Rates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMethod {
    /// Least-squares slope of `ln |Δ[n]|` against `n`.
    #[default]
    Regression,
    /// Largest chord slope from the first uncensored point of the window.
    TailMax,
}

impl fmt::Display for RateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateMethod::Regression => "regression",
            RateMethod::TailMax => "tail-max",
        })
    }
}

impl std::str::FromStr for RateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(RateMethod::Regression),
            "tail-max" => Ok(RateMethod::TailMax),
            other => Err(Error::InvalidArgument(format!("unknown rate method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub triple: Triple,
    pub kind: CurveKind,
    /// `-inf` when every point in the window is censored.
    pub tau_hat: f64,
    pub window: (usize, usize),
    /// Only for regression fits of uncensored curves.
    pub r_squared: Option<f64>,
    pub method: RateMethod,
    pub points_used: usize,
    pub all_censored: bool,
}

/// Default fit window `[n_max / 2, n_max]`, clamped so that `n_min >= 2`.
pub fn default_rate_window(n_max: usize) -> (usize, usize) {
    ((n_max / 2).max(2), n_max)
}

/// Estimates the exponential rate of `curve` over `[n_min, n_max]`.
pub fn estimate_rate(curve: &DecayCurve, n_min: usize, n_max: usize, method: RateMethod) -> Result<RateEstimate> {
    if n_min < 2 || n_max <= n_min {
        return Err(Error::InvalidArgument(format!(
            "rate window [{n_min}, {n_max}] needs 2 <= n_min < n_max"
        )));
    }
    let pts: Vec<&DecayPoint> = curve
        .uncensored()
        .filter(|p| p.n >= n_min && p.n <= n_max)
        .collect();
    let mut est = RateEstimate {
        triple: curve.triple,
        kind: curve.kind,
        tau_hat: f64::NEG_INFINITY,
        window: (n_min, n_max),
        r_squared: None,
        method,
        points_used: pts.len(),
        all_censored: pts.is_empty(),
    };
    if pts.is_empty() {
        return Ok(est);
    }
    if pts.len() < MIN_RATE_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_RATE_POINTS,
            found: pts.len(),
        });
    }
    match method {
        RateMethod::Regression => {
            let xs: Vec<f64> = pts.iter().map(|p| p.n as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.log_abs).collect();
            let fit = linear_fit(&xs, &ys).expect("distinct abscissae");
            est.tau_hat = fit.slope;
            est.r_squared = Some(fit.r_squared);
        }
        RateMethod::TailMax => {
            let anchor = pts[0];
            est.tau_hat = pts[1..]
                .iter()
                .map(|p| (p.log_abs - anchor.log_abs) / (p.n - anchor.n) as f64)
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(est)
}

/// Largest finite rate; ties go to the first triple in input order.
pub fn best_rate(rates: &[RateEstimate]) -> Option<&RateEstimate> {
    rates.iter().fold(None, |best: Option<&RateEstimate>, r| match best {
        Some(b) if b.tau_hat >= r.tau_hat => Some(b),
        _ if r.tau_hat.is_finite() => Some(r),
        _ => best,
    })
}

/// Finite-time Lyapunov gap on the same window and the same product lengths
/// a rate fit uses: the least-squares slope of `ℓ₂ − ℓ₁` against `n`, where
/// `ℓ_j` are the accumulated QR log-norms of `L^[n-1]` for `n` in
/// `[n_min, n_max]`.
///
/// The fluctuations of `ln |Δ[n]|` and of `ℓ₂ − ℓ₁` along one window are
/// largely shared, so this is the natural reference for a per-window rate.
pub fn matched_gap(model: &HmmModel, window: &ObservationWindow, n_min: usize, n_max: usize) -> Result<f64> {
    if n_min < 2 || n_max <= n_min {
        return Err(Error::InvalidArgument(format!(
            "gap window [{n_min}, {n_max}] needs 2 <= n_min < n_max"
        )));
    }
    if window.end() != -1 {
        return Err(Error::InvalidArgument("window must end at time -1".into()));
    }
    let traj = log_norm_trajectory(model, window, 2.min(model.k()), n_max - 1)?;
    let xs: Vec<f64> = (n_min..=n_max).map(|n| n as f64).collect();
    let ys: Vec<f64> = (n_min..=n_max)
        .map(|n| {
            let row = &traj[n - 2];
            row[1] - row[0]
        })
        .collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(linear_fit(&xs, &ys).expect("distinct abscissae").slope)
}

/// `ψ_a = u_a 1 + ξ_a` with `<f, ξ_a> = 0`.
pub fn decompose_psi(model: &HmmModel, a: usize, f: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    model.check_state(a)?;
    let k = model.k();
    if f.len() != k {
        return Err(Error::DimensionMismatch(format!("direction must have length {k}")));
    }
    let ones = DVector::from_element(k, 1.0);
    let f1 = f.dot(&ones);
    if f1.abs() <= 1e-12 * f.norm() * (k as f64).sqrt() {
        return Err(Error::DegenerateDirection);
    }
    let psi = model.p().column(a - 1).into_owned();
    let u = f.dot(&psi) / f1;
    let xi = psi - ones * u;
    Ok((u, xi))
}
