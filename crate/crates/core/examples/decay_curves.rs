//! Conditional differences `Δ_{a,b,c}[n]` along one window, checked against
//! exact enumeration for small `n`.

use hmm_memory::fixtures::test_model;
use hmm_memory::memloss::all_triples;
use hmm_memory::{delta_bruteforce, delta_curve, past_window, sample_path, CurveKind, Triple};

fn main() -> hmm_memory::Result<()> {
    let model = test_model();
    let path = sample_path(&model, 200, 5)?;
    let window = past_window(&path, 199)?;
    let curves = delta_curve(&model, &window, &all_triples(&model, CurveKind::Delta), 200)?;

    let c = curves.iter().find(|c| c.triple == Triple(1, 1, 2)).unwrap();
    for p in c.points.iter().filter(|p| p.n % 25 == 0 || p.n <= 3) {
        println!("n = {:3}  delta = {:+.3e}  ln|delta| = {:8.3}", p.n, p.value, p.log_abs);
    }
    for n in [1, 5, 10] {
        let exact = delta_bruteforce(&model, &window, 1, 1, 2, n)?;
        println!("n = {n:2}: recursion {:+.15e}, enumeration {:+.15e}", c.points[n - 1].value, exact);
    }
    Ok(())
}
