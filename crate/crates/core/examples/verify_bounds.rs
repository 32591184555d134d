//! End-to-end check of the forgetting rates against the Lyapunov gap and
//! its closed-form lower bound on twenty independent windows.

use hmm_memory::fixtures::test_model;
use hmm_memory::{run_verification, VerifyPlan};

fn main() -> hmm_memory::Result<()> {
    let model = test_model();
    let v = run_verification(&model, &VerifyPlan::new(1))?;
    let r = &v.report;
    println!("gap {:.4} ± {:.4}, lower bound {:.4}", r.lyap_gap, r.lyap_gap_std_error, r.prop_lower_bound);
    println!("sum rule residual {:.2e} (se {:.2e})", r.det_identity_residual, r.det_identity_std_error);
    println!("rates above gap + tol: {}", r.theorem1_violations.len());
    println!(
        "best rate within tol of the window gap on {:.0}% of windows ({:.0}% against the long-run gap)",
        100.0 * r.theorem2_fraction,
        100.0 * r.theorem2_fraction_global
    );
    println!("passed: {}", r.passed());
    Ok(())
}
