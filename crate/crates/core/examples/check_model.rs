//! Validates a model and prints the quantities the forgetting bounds use.

use hmm_memory::model::{check_hypotheses, DEFAULT_RANK_TOL};
use hmm_memory::{build_model, proposition_lower_bound};
use nalgebra::dmatrix;

fn main() -> hmm_memory::Result<()> {
    let model = build_model(
        &dmatrix![0.9, 0.1; 0.2, 0.8],
        &dmatrix![0.9, 0.1; 0.1, 0.9],
    )?;
    println!("stationary law: {:?}", model.pi().as_slice());

    let report = check_hypotheses(&model, DEFAULT_RANK_TOL);
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("lower bound on the gap: {:.4}", proposition_lower_bound(&model)?);

    // Uniform emissions carry no information: the rank condition fails.
    let blind = build_model(&dmatrix![0.9, 0.1; 0.2, 0.8], &dmatrix![0.5, 0.5; 0.5, 0.5])?;
    println!("uniform emissions: h2 = {}", check_hypotheses(&blind, DEFAULT_RANK_TOL).h2_holds);
    Ok(())
}
