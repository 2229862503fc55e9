// Local existence horizon: how far back from `T` the explicit construction
// provably stays within `β` of the propagated terminal data.

use mie::solver::{epsilon_stepper, local_horizon};
use mie::{Compact, Domain, Generator, MarkovChainModel, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = TimeGrid::build_uniform(1.0, 1000, None)?;
    let chain = MarkovChainModel::homogeneous(array![[0.8, 0.2], [0.3, 0.7]], 1000)?;
    // f(w) = −w² with the μ-bound a = sup_K w²
    let f = Generator::make_power(vec![0.0, 0.0, -1.0], Domain::all(1))?
        .with_mu_bound(|_, _, k: &Compact| k.max_norm().powi(2));
    let g = array![[2.0], [1.0]];
    let h = local_horizon(&chain, &grid, &f, g.view(), Some(1.0))?;
    println!(
        "alpha = {:.4}, beta = {}, start node {}",
        h.alpha, h.beta, h.start_index
    );
    println!(
        "neighbourhood [{:.3}, {:.3}]",
        h.neighbourhood.lower[0], h.neighbourhood.upper[0]
    );

    // the stepper on [T − α, T] stays inside the neighbourhood
    let marks = vec![0, h.start_index, grid.steps()];
    let u = epsilon_stepper(&chain, &grid, &f, g.view(), &marks)?;
    for j in h.start_index..=grid.steps() {
        for x in 0..2 {
            let v = u.scalar(j, x);
            assert!(h.neighbourhood.lower[0] - 1e-9 <= v && v <= h.neighbourhood.upper[0] + 1e-9);
        }
    }
    println!(
        "u(T − α, ·) = ({:.4}, {:.4})",
        u.scalar(h.start_index, 0),
        u.scalar(h.start_index, 1)
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
