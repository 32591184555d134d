//! Stationary sample paths of the hidden chain and its observations.
//!
//! # Generator contract
//!
//! Every path is driven by `rand_chacha::ChaCha12Rng` (rand_chacha 0.3),
//! seeded with `SeedableRng::seed_from_u64`. Uniforms are `rand 0.8`'s
//! standard `f64` (53 random bits). Each time step consumes exactly one
//! uniform for the observation and one for the next state, in that order,
//! so two models sharing a seed see the same uniforms.
//!
//! Independent tasks derive their seeds with [`derive_seed`], a SplitMix64
//! finalizer applied to `master + 0x9E3779B97F4A7C15 * (task + 1)`.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HmmModel;

pub type PathRng = ChaCha12Rng;

/// Seed of task `task` under master seed `master`.
pub fn derive_seed(master: u64, task: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(task.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_rng(seed: u64) -> PathRng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Inverse-CDF draw from a probability vector; returns a 0-based index.
fn categorical<'a>(probs: impl IntoIterator<Item = &'a f64>, u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &w) in probs.into_iter().enumerate() {
        if w > 0.0 {
            last_positive = j;
            cum += w;
            if u < cum {
                return j;
            }
        }
    }
    last_positive
}

/// A finite block of observation symbols. Element `j` sits at time
/// `origin + j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    symbols: Vec<usize>,
    origin: i64,
}

impl ObservationWindow {
    pub fn new(symbols: Vec<usize>, origin: i64) -> Self {
        Self { symbols, origin }
    }

    /// Window ending at time −1: `symbols[0]` is at time `-len`.
    pub fn past(symbols: Vec<usize>) -> Self {
        let origin = -(symbols.len() as i64);
        Self { symbols, origin }
    }

    /// Window starting at time 1.
    pub fn future(symbols: Vec<usize>) -> Self {
        Self { symbols, origin: 1 }
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Time index of the last element.
    pub fn end(&self) -> i64 {
        self.origin + self.symbols.len() as i64 - 1
    }

    /// Symbol at time `t`, if covered.
    pub fn at(&self, t: i64) -> Option<usize> {
        let j = t - self.origin;
        if j < 0 {
            return None;
        }
        self.symbols.get(j as usize).copied()
    }

    /// Window of the shifted sequence `σ z`, whose time-`t` value is `z_{t+1}`.
    pub fn shifted(&self) -> Self {
        Self {
            symbols: self.symbols.clone(),
            origin: self.origin - 1,
        }
    }

    /// Symbols `z_{-1}, z_{-2}, ...` down to the start of the window.
    ///
    /// Fails unless the window ends exactly at time −1.
    pub fn past_ordered(&self) -> Result<impl Iterator<Item = usize> + '_> {
        if self.end() != -1 {
            return Err(Error::InvalidArgument(format!(
                "past-ordered stream needs a window ending at time -1, this one ends at {}",
                self.end()
            )));
        }
        Ok(self.symbols.iter().rev().copied())
    }
}

/// A stationary realisation of `(X_t, Z_t)` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePath {
    pub x: Vec<usize>,
    pub z: Vec<usize>,
    pub seed: u64,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,z")?;
        for (t, (x, z)) in self.x.iter().zip(&self.z).enumerate() {
            writeln!(w, "{t},{x},{z}")?;
        }
        Ok(())
    }
}

/// Simulates `t_len` steps starting from the stationary law.
pub fn sample_path(model: &HmmModel, t_len: usize, seed: u64) -> Result<SamplePath> {
    if t_len == 0 {
        return Err(Error::InvalidArgument("path length must be at least 1".into()));
    }
    let mut rng = path_rng(seed);
    let mut x = Vec::with_capacity(t_len);
    let mut z = Vec::with_capacity(t_len);
    let p = model.p();
    let q = model.q();
    let mut state = categorical(model.pi().iter(), rng.gen::<f64>());
    for t in 0..t_len {
        x.push(state + 1);
        let obs = categorical(q.row(state).iter(), rng.gen::<f64>());
        z.push(obs + 1);
        if t + 1 < t_len {
            state = categorical(p.row(state).iter(), rng.gen::<f64>());
        }
    }
    Ok(SamplePath { x, z, seed })
}

/// The last `n` observations relabelled to times `-n..=-1`.
pub fn past_window(path: &SamplePath, n: usize) -> Result<ObservationWindow> {
    if n == 0 || n > path.len() {
        return Err(Error::WindowTooLong {
            requested: n,
            available: path.len(),
        });
    }
    Ok(ObservationWindow::past(path.z[path.len() - n..].to_vec()))
}

/// The first `n` observations relabelled to times `1..=n`.
pub fn future_window(path: &SamplePath, n: usize) -> Result<ObservationWindow> {
    if n == 0 || n > path.len() {
        return Err(Error::WindowTooLong {
            requested: n,
            available: path.len(),
        });
    }
    Ok(ObservationWindow::future(path.z[..n].to_vec()))
}

/// Empirical frequency of each 1-based symbol in `seq` over `alphabet`.
pub fn empirical_frequencies(seq: &[usize], alphabet: usize) -> DVector<f64> {
    let mut counts = DVector::zeros(alphabet);
    for &s in seq {
        counts[s - 1] += 1.0;
    }
    counts / seq.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{test_model, uniform_emission_model};

    #[test]
    fn same_seed_same_path() {
        let m = test_model();
        let a = sample_path(&m, 500, 7).unwrap();
        let b = sample_path(&m, 500, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_path(&m, 500, 8).unwrap();
        assert_ne!(a.z, c.z);
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_eq!(derive_seed(42, 0), derive_seed(42, 0));
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }

    #[test]
    fn uniform_emissions_give_fair_symbols() {
        let t = 100_000;
        let path = sample_path(&uniform_emission_model(), t, 11).unwrap();
        let f = empirical_frequencies(&path.z, 2);
        let bound = 3.0 * (0.25 / t as f64).sqrt();
        assert!((f[0] - 0.5).abs() < bound, "freq {}", f[0]);
    }

    #[test]
    fn state_frequency_matches_stationary_law() {
        // iid binomial sigma with a margin factor 5 for the chain's
        // autocorrelation (second eigenvalue 0.7)
        let t = 100_000;
        let path = sample_path(&test_model(), t, 12).unwrap();
        let f = empirical_frequencies(&path.x, 2);
        let sigma = 5.0 * ((2.0 / 9.0) / t as f64).sqrt();
        assert!((f[0] - 2.0 / 3.0).abs() < 3.0 * sigma, "freq {}", f[0]);
    }

    #[test]
    fn windows_and_their_time_labels() {
        let path = sample_path(&test_model(), 20, 3).unwrap();
        let w = past_window(&path, 20).unwrap();
        assert_eq!(w.origin(), -20);
        assert_eq!(w.symbols(), &path.z[..]);
        let w1 = past_window(&path, 1).unwrap();
        assert_eq!(w1.origin(), -1);
        assert_eq!(w1.at(-1), Some(path.z[19]));
        assert!(matches!(past_window(&path, 0), Err(Error::WindowTooLong { .. })));
        assert!(matches!(past_window(&path, 21), Err(Error::WindowTooLong { .. })));

        let f = future_window(&path, 5).unwrap();
        assert_eq!(f.origin(), 1);
        assert_eq!(f.at(1), Some(path.z[0]));
        assert_eq!(f.end(), 5);
        let s = f.shifted();
        assert_eq!(s.at(0), Some(path.z[0]));
    }

    #[test]
    fn past_ordered_stream_runs_backwards() {
        let w = ObservationWindow::past(vec![1, 2, 2, 1]);
        let v: Vec<usize> = w.past_ordered().unwrap().collect();
        assert_eq!(v, vec![1, 2, 2, 1].into_iter().rev().collect::<Vec<_>>());
        assert!(ObservationWindow::future(vec![1]).past_ordered().is_err());
    }

    #[test]
    fn csv_dump() {
        let path = sample_path(&test_model(), 3, 1).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,z\n0,"));
        assert_eq!(text.lines().count(), 4);
    }
}
