// Two-dimensional linear system `f = c [[0, δ], [ε, 0]] w` in closed form:
// hyperbolic functions when `δε > 0`, trigonometric ones when `δε < 0`.

use mie::feynman_kac::{coshsinh_example, coshsinh_matrix, linear_solve_backward};
use mie::generator::NodeStateField;
use mie::{MarkovChainModel, TimeGrid};
use nalgebra::DVector;
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 4000;
    let grid = TimeGrid::build_uniform(1.0, n, None)?;
    let chain = MarkovChainModel::identity(1, n)?;
    let c = NodeStateField::Constant(1.0);
    let u = coshsinh_example(&chain, &grid, &c, 1.0, 1.0, array![[1.0, 0.0]].view())?;
    println!(
        "u(0) = ({:.6}, {:.6}), (cosh 1, −sinh 1) = ({:.6}, {:.6})",
        u.at(0, 0)[0],
        u.at(0, 0)[1],
        1f64.cosh(),
        -1f64.sinh()
    );

    // state-dependent rate on a two-state chain, both signs of δε
    let chain = MarkovChainModel::homogeneous(array![[0.99, 0.01], [0.02, 0.98]], n)?;
    let c = NodeStateField::PerState(vec![1.0, 0.5]);
    let g = array![[1.0, 0.0], [0.0, 1.0]];
    for (delta, eps) in [(2.0, 0.5), (1.0, -1.0)] {
        let closed = coshsinh_example(&chain, &grid, &c, delta, eps, g.view())?;
        let zero = NodeStateField::Constant(DVector::zeros(2));
        let rec = linear_solve_backward(
            &chain,
            &grid,
            &zero,
            &coshsinh_matrix(&c, delta, eps),
            g.view(),
        )?;
        println!(
            "δ = {delta}, ε = {eps}: closed form vs recursion {:.2e}",
            closed.sup_distance(&rec)
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
