// The matrix weight `Σ_{r,t} = Π (I − w_l b(t_l, x_l))` along a path: the
// cocycle identity, its inverse, the norm bound and the series expansion.

use mie::feynman_kac::SigmaPropagator;
use mie::generator::NodeStateField;
use mie::verify::{check_sigma, Tolerance};
use mie::TimeGrid;
use nalgebra::DMatrix;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = TimeGrid::build_uniform(2.0, 8, None)?;
    let b = NodeStateField::PerState(vec![
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, -0.3]),
    ]);
    let sp = SigmaPropagator::new(&grid, b.clone(), 2)?;
    let path = [0, 1, 1, 0, 0, 1, 0, 1];
    let at = |l: usize| path[l];

    let whole = sp.product(0, 8, at)?;
    let split = sp.product(0, 3, at)?.value * sp.product(3, 8, at)?.value;
    println!(
        "|Σ_0,8| = {:.4} <= {:.4}",
        whole.value.norm(),
        whole.norm_bound
    );
    println!("cocycle gap {:.1e}", (split - &whole.value).norm());
    let inv = sp.inverse(0, 8, at)?;
    println!(
        "inverse gap {:.1e}",
        (&whole.value * inv - DMatrix::identity(2, 2)).norm()
    );
    for order in [2, 4, 8] {
        let s = sp.series(0, 8, at, order)?;
        println!(
            "series order {order}: gap {:.2e}, tail bound {:.2e}, term bounds hold: {}",
            (&s.value - &whole.value).norm(),
            s.tail_bound,
            s.bounds_hold()
        );
    }

    let report = check_sigma(&grid, &b, 2, 500, 1, Tolerance::default())?;
    println!(
        "{} over {} checks: passed = {}",
        report.name, report.checked, report.passed
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
