// A driver measure with density: `μ(ds) = 2s ds` on `[0, 1]`. The grid
// carries left-point weights, so `u' = −2t u` has `u(0) = e^{1} u(1)`
// in the limit.

use mie::solver::picard_solve;
use mie::{Domain, Generator, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for n in [100, 200, 400, 800] {
        let grid = TimeGrid::build_uniform(1.0, n, Some(&|t| 2.0 * t))?;
        let chain = MarkovChainModel::identity(1, n)?;
        // u(t) = g − ∫_t^1 f(u) μ(ds) with f(w) = −w
        let f = Generator::make_power(vec![0.0, -1.0], Domain::all(1))?;
        let (u, _) = picard_solve(
            &chain,
            &grid,
            &f,
            array![[1.0]].view(),
            &PicardOptions::default(),
        )?;
        println!(
            "N = {n:>3}: total mass {:.5}, u(0) = {:.6}, error {:.2e}",
            grid.total_mass(),
            u.scalar(0, 0),
            (u.scalar(0, 0) - 1f64.exp()).abs()
        );
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
