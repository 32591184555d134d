//! Binary chain observed through a channel that flips each symbol with
//! probability ε: the fixed point `h`, the eigenrelation and the top
//! exponent as a Birkhoff average.

use hmm_memory::perturb2::{binary_rate_bound, verify_eigenrelation, DEFAULT_DEPTH};
use hmm_memory::{build_perturb, lambda1_birkhoff, lyapunov_spectrum, sample_path, ObservationWindow, SolveMode};

fn main() -> hmm_memory::Result<()> {
    let pm = build_perturb(0.9, 0.2, 0.01)?;
    println!("beta = {}, D = {:.3e}, provable eps0 = {:.3e}", pm.beta, pm.d, pm.eps0);

    let hmm = pm.to_hmm()?;
    let path = sample_path(&hmm, DEFAULT_DEPTH + 2, 3)?;
    let rel = verify_eigenrelation(&pm, &ObservationWindow::future(path.z.clone()), DEFAULT_DEPTH, SolveMode::Empirical)?;
    println!(
        "h = {:.6}, contraction {:.3}, eigenrelation residual {:.2e}",
        rel.h.h_value, rel.h.contraction_estimate, rel.residual
    );

    let n = 200_000;
    let birk = lambda1_birkhoff(&pm, n, DEFAULT_DEPTH, 9)?;
    let long = sample_path(&hmm, n, 9)?;
    let qr = lyapunov_spectrum(&hmm, &long, 2, n)?;
    let bound = binary_rate_bound(&pm);
    println!("lambda1: Birkhoff {:.6} ± {:.1e}, QR {:.6}", birk.mean, birk.std_error, qr.lambdas[0]);
    println!("zeroth order {:.6}", pm.lambda1_zeroth_order());
    println!("lambda1 + lambda2 = {:.6}, exact {:.6}", qr.sum().0, bound.ledet);
    println!("gap to leading order {:.4}, QR gap {:.4}", bound.leading_term, qr.gap().unwrap());
    Ok(())
}
