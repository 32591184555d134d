//! Draws a stationary path and compares observation frequencies with the
//! stationary marginal.

use hmm_memory::fixtures::test_model;
use hmm_memory::model::observation_marginal;
use hmm_memory::sample_path;
use hmm_memory::simulate::{empirical_frequencies, past_window};

fn main() -> hmm_memory::Result<()> {
    let model = test_model();
    let path = sample_path(&model, 100_000, 42)?;
    let freq = empirical_frequencies(&path.z, model.l());
    println!("empirical  {:?}", freq.as_slice());
    println!("stationary {:?}", observation_marginal(&model).as_slice());

    let window = past_window(&path, 5)?;
    println!("last five observations at times {}..=-1: {:?}", window.origin(), window.symbols());

    let mut head = Vec::new();
    sample_path(&model, 5, 42)?.write_csv(&mut head)?;
    print!("{}", String::from_utf8_lossy(&head));
    Ok(())
}
