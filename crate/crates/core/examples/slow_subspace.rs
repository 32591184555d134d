//! The codimension-one slow subspace of the cocycle and the projective
//! contraction of positive vectors.

use hmm_memory::cocycle::{estimate_codim1_direction, fit_projective_decay, projective_ratio_curve};
use hmm_memory::fixtures::test_model;
use hmm_memory::model::{check_hypotheses, DEFAULT_RANK_TOL};
use hmm_memory::{past_window, sample_path};
use nalgebra::dvector;

fn main() -> hmm_memory::Result<()> {
    let model = test_model();
    let path = sample_path(&model, 200, 17)?;
    let window = past_window(&path, 200)?;

    let dir = estimate_codim1_direction(&model, &window)?;
    println!("normal f = {:?}", dir.f.as_slice());
    println!("slow vector = {:?} (mixed signs)", dir.v2_basis.column(0).as_slice());

    let curve = projective_ratio_curve(&model, &dvector![1.0, 0.5], &dvector![0.5, 1.0], &window)?;
    for p in curve.iter().step_by(10).take(6) {
        println!("n = {:3}  gamma = {:.6}  delta = {:.6}", p.n, p.gamma, p.delta);
    }
    let alpha = check_hypotheses(&model, DEFAULT_RANK_TOL).alpha;
    println!(
        "fitted decay {:.4}, contraction bound ln(alpha) = {:.4}",
        fit_projective_decay(&curve, 5, 50).unwrap(),
        alpha.ln()
    );
    Ok(())
}
