// Growth bounds for a computed solution: the two-sided bound from
// `|f| ≤ a + b|w|`, the one-sided bound above a lower endpoint, and the
// lower boundary estimate when `f` pushes towards the interior.

use mie::generator::NodeStateField;
use mie::solver::{epsilon_stepper, picard_solve};
use mie::verify::{check_boundary_lower, check_growth, check_one_sided_growth, Tolerance};
use mie::{Compact, Domain, Generator, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 50;
    let grid = TimeGrid::build_uniform(1.0, n, None)?;
    let chain = MarkovChainModel::homogeneous(array![[0.5, 0.5], [0.25, 0.75]], n)?;
    let tol = Tolerance::default();

    // |0.3 + sin w − 0.5 w| ≤ 1.3 + 0.5|w|
    let f = Generator::scalar(Domain::all(1), |_, _, w| 0.3 + w.sin() - 0.5 * w)
        .with_lipschitz(|_, _, _: &Compact| 1.5);
    let g = array![[1.0], [-2.0]];
    let (u, _) = picard_solve(&chain, &grid, &f, g.view(), &PicardOptions::default())?;
    let growth = check_growth(
        &chain,
        &grid,
        &f,
        &u,
        &[vec![1.0], vec![-2.0]],
        &NodeStateField::Constant(1.3),
        &NodeStateField::Constant(0.5),
        tol,
    )?;
    println!(
        "{}: passed = {}, worst slack {:.3e}",
        growth.name, growth.passed, growth.worst_slack
    );

    // f(w) = −w on [0, ∞): u − 0 ≥ ... bounded through f ≥ −|w|
    let f = Generator::make_power(vec![0.0, -1.0], Domain::nonnegative())?;
    let g = array![[0.5], [2.0]];
    let (u, _) = picard_solve(&chain, &grid, &f, g.view(), &PicardOptions::default())?;
    let one_sided = check_one_sided_growth(
        &chain,
        &grid,
        &f,
        &u,
        &[0.5, 2.0],
        &NodeStateField::Constant(0.0),
        &NodeStateField::Constant(1.0),
        tol,
    )?;
    println!(
        "{}: passed = {}, worst slack {:.3e}",
        one_sided.name, one_sided.passed, one_sided.worst_slack
    );

    // f(w) = w on [0, ∞) has f(0) = 0 and difference quotient 1
    let f = Generator::make_power(vec![0.0, 1.0], Domain::nonnegative())?;
    let every: Vec<usize> = (0..=n).collect();
    let u = epsilon_stepper(&chain, &grid, &f, g.view(), &every)?;
    let lower = check_boundary_lower(
        &chain,
        &grid,
        &f,
        &u,
        &[0.5, 2.0],
        &NodeStateField::Constant(1.0),
        tol,
    )?;
    println!(
        "{}: passed = {}, checked {} points",
        lower.name, lower.passed, lower.checked
    );
    if !(growth.passed && one_sided.passed && lower.passed) {
        return Err("a growth bound failed".into());
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
