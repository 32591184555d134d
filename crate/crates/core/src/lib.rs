//! Exponential loss of memory of hidden Markov chains.
//!
//! The forgetting rate of the conditional law of the present observation
//! given the past equals the gap `λ₂ − λ₁` between the two top Lyapunov
//! exponents of the observation cocycle `L_z = p · diag(q(z|·))`. This crate
//! simulates such chains, estimates the exponents, measures the decay of
//! conditional differences with an exact oracle to check against, and
//! evaluates the explicit expansion available for binary chains with
//! flipped observations.

pub mod bounds;
pub mod cli;
pub mod cocycle;
pub mod error;
pub mod fixtures;
pub mod memloss;
pub mod model;
pub mod perturb2;
pub mod simulate;
pub mod stats;
pub mod wedge;

pub use bounds::{proposition_lower_bound, run_verification, verify_all, BoundsReport, VerifyPlan};
pub use cocycle::{expected_log_det, lyapunov_spectrum, observation_matrix, LyapunovEstimate};
pub use error::{Error, Result};
pub use memloss::{
    delta_bruteforce, delta_curve, delta_tilde_curve, estimate_rate, CurveKind, DecayCurve, RateEstimate,
    RateMethod, Triple,
};
pub use model::{build_model, check_hypotheses, read_model, HmmModel, HypothesisReport};
pub use perturb2::{build_perturb, lambda1_birkhoff, solve_h, PerturbModel, SolveMode};
pub use simulate::{past_window, sample_path, ObservationWindow, SamplePath};
