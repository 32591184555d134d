//! Decay rates of every triple on one window against the window's own
//! finite-time Lyapunov gap.

use hmm_memory::bounds::{window_rates, RateWindow};
use hmm_memory::fixtures::test_model;
use hmm_memory::memloss::{best_rate, matched_gap};
use hmm_memory::{past_window, sample_path, CurveKind, RateMethod};

fn main() -> hmm_memory::Result<()> {
    let model = test_model();
    let n_max = 400;
    let path = sample_path(&model, n_max - 1, 2024)?;
    let window = past_window(&path, n_max - 1)?;
    for kind in [CurveKind::Delta, CurveKind::DeltaTilde] {
        let (_, (lo, hi), rates, skipped) =
            window_rates(&model, &window, kind, n_max, RateMethod::Regression, RateWindow::Half)?;
        println!("{kind:?}: fit over [{lo}, {hi}], {} triples identically zero", skipped.len());
        for r in &rates {
            println!("  {}  tau = {:.4}", r.triple, r.tau_hat);
        }
        let best = best_rate(&rates).unwrap();
        println!("  best {} at {:.4}, gap on this window {:.4}", best.triple, best.tau_hat, matched_gap(&model, &window, lo, hi)?);
    }
    Ok(())
}
