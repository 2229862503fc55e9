// Picard iteration on the scalar Riccati equation `u' = −u²`, `u(1) = 1/2`,
// whose solution is `u(t) = 1/(1 + t)`. The error halves with the step size.

use mie::solver::{picard_solve, residual};
use mie::{Domain, DriverEvaluation, Generator, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let f = Generator::make_power(vec![0.0, 0.0, -1.0], Domain::all(1))?;
    let mut last = None;
    for n in [250, 500, 1000, 2000] {
        let chain = MarkovChainModel::identity(1, n)?;
        let grid = TimeGrid::build_uniform(1.0, n, None)?;
        let (u, report) = picard_solve(
            &chain,
            &grid,
            &f,
            array![[0.5]].view(),
            &PicardOptions::default(),
        )?;
        assert!(report.converged);
        let err = (u.scalar(0, 0) - 1.0).abs();
        let res = residual(&chain, &grid, &f, &u, DriverEvaluation::Propagated)?;
        let res = res.iter().cloned().fold(0.0, f64::max);
        print!(
            "N = {n:>4}  u(0) = {:.6}  error = {err:.3e}  iterations = {}",
            u.scalar(0, 0),
            report.iterations
        );
        if let Some(prev) = last {
            print!("  ratio = {:.2}", prev / err);
        }
        println!("  residual = {res:.1e}");
        if report.contraction_tail_excess().is_some_and(|e| e > 0.0) {
            return Err("increments exceed the contraction tail".into());
        }
        last = Some(err);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
