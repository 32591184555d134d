//! Lyapunov spectrum of the observation cocycle, and the sum rule
//! `λ₁ + λ₂ = E ln |det L_z|`.

use hmm_memory::fixtures::test_model;
use hmm_memory::{expected_log_det, lyapunov_spectrum, sample_path};

fn main() -> hmm_memory::Result<()> {
    let model = test_model();
    let n = 1_000_000;
    let path = sample_path(&model, n, 1)?;
    let est = lyapunov_spectrum(&model, &path, 2, n)?;
    for (lam, se) in est.lambdas.iter().zip(&est.std_errors) {
        println!("lambda = {lam:.5} ± {se:.5}");
    }
    println!("gap    = {:.5} ± {:.5}", est.gap().unwrap(), est.gap_std_error().unwrap());
    let (sum, se) = est.sum();
    println!("sum    = {sum:.5} ± {se:.5}, expected log det = {:.5}", expected_log_det(&model));
    Ok(())
}
