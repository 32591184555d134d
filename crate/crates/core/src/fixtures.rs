//! Reference models used throughout the tests and runnable examples.

use nalgebra::dmatrix;

use crate::model::{build_model, HmmModel};

/// Two-state chain `p = [[0.9, 0.1], [0.2, 0.8]]` observed through a binary
/// symmetric channel with flip probability `epsilon`.
pub fn binary_flip_model(epsilon: f64) -> HmmModel {
    build_model(
        &dmatrix![0.9, 0.1; 0.2, 0.8],
        &dmatrix![1.0 - epsilon, epsilon; epsilon, 1.0 - epsilon],
    )
    .expect("valid binary model")
}

/// The binary flip model at `epsilon = 0.1`.
pub fn test_model() -> HmmModel {
    binary_flip_model(0.1)
}

/// Same chain, observations independent of the hidden state.
pub fn uniform_emission_model() -> HmmModel {
    build_model(
        &dmatrix![0.9, 0.1; 0.2, 0.8],
        &dmatrix![0.5, 0.5; 0.5, 0.5],
    )
    .expect("valid model")
}
