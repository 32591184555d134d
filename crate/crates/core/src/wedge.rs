//! Second exterior power of `R^k`.
//!
//! Differences of ratios such as `u_i/v_i - u_j/v_j` cancel catastrophically
//! once the two vectors align, which happens geometrically fast under a
//! product of positive matrices. Their numerators are the coordinates of
//! `u ∧ v`, and `(L u) ∧ (L v) = C₂(L) (u ∧ v)`, so carrying the wedge
//! through the second compound matrix keeps full relative precision.
//!
//! Coordinates are indexed by pairs `i < j` in lexicographic order.

use nalgebra::{DMatrix, DVector};

/// Number of coordinates of `Λ² R^k`.
pub fn dim(k: usize) -> usize {
    k * (k - 1) / 2
}

/// Index pairs `(i, j)`, `i < j`, in coordinate order.
pub fn pairs(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(dim(k));
    for i in 0..k {
        for j in i + 1..k {
            out.push((i, j));
        }
    }
    out
}

/// `(u ∧ v)_{ij} = u_i v_j - u_j v_i`.
pub fn wedge(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let ps = pairs(u.len());
    DVector::from_iterator(ps.len(), ps.iter().map(|&(i, j)| u[i] * v[j] - u[j] * v[i]))
}

/// Second compound matrix: the 2×2 minors of `l`.
pub fn compound2(l: &DMatrix<f64>) -> DMatrix<f64> {
    let ps = pairs(l.nrows());
    DMatrix::from_fn(ps.len(), ps.len(), |a, b| {
        let (i, j) = ps[a];
        let (r, s) = ps[b];
        l[(i, r)] * l[(j, s)] - l[(i, s)] * l[(j, r)]
    })
}

/// `<x, u> <y, v> - <y, u> <x, v>` written as `<x ∧ y, u ∧ v>`.
pub fn pairing(xy: &DVector<f64>, uv: &DVector<f64>) -> f64 {
    xy.dot(uv)
}
