// Branching mechanism `f(w) = b w + c w² + d w^α + Σ m (e^{−uw} − 1 + uw)`
// as a driver. The stable part is checked against its integral form, then
// the log-Laplace equation is solved on `[0, ∞)`.

use mie::generator::{mechanism_kernel_check, BranchingMechanism, NodeStateField};
use mie::solver::solve_1d_global;
use mie::{Generator, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for (d, alpha, w) in [(1.0, 1.2, 0.5), (2.0, 1.5, 1.0), (1.0, 1.8, 4.0)] {
        let c = mechanism_kernel_check(d, alpha, w, 64)?;
        println!(
            "d = {d}, α = {alpha}, w = {w}: closed form {:.8}, quadrature {:.8}, error {:.1e}",
            c.closed_form, c.quadrature, c.abs_error
        );
    }

    let n = 500;
    let grid = TimeGrid::build_uniform(1.0, n, None)?;
    let chain = MarkovChainModel::homogeneous(array![[0.9, 0.1], [0.2, 0.8]], n)?;
    let mech = BranchingMechanism::new(
        NodeStateField::PerState(vec![0.1, 0.3]),
        NodeStateField::Constant(0.5),
    )
    .with_stable(NodeStateField::Constant(0.3), 1.5)
    .with_kernel(vec![(0.5, 1.0), (2.0, 0.25)]);
    let f = Generator::make_branching(mech)?;
    let g = array![[1.0], [0.25]];
    let (u, report) = solve_1d_global(&chain, &grid, &f, g.view(), 20, &PicardOptions::default())?;
    println!(
        "log-Laplace u(0, ·) = ({:.5}, {:.5}) after {} Picard iterations",
        u.scalar(0, 0),
        u.scalar(0, 1),
        report.iterations
    );
    assert!(u.values().iter().all(|v| *v >= 0.0));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
