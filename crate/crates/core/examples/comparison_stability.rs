// Comparison and stability between two solutions: a larger driver with
// smaller terminal data gives a smaller solution, and the sup-distance is
// controlled by the data gap.

use mie::solver::picard_solve;
use mie::verify::{check_comparison, check_stability, Tolerance};
use mie::{Domain, Generator, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 100;
    let grid = TimeGrid::build_uniform(1.0, n, None)?;
    let chain = MarkovChainModel::homogeneous(
        array![[0.6, 0.4, 0.0], [0.3, 0.4, 0.3], [0.0, 0.4, 0.6]],
        n,
    )?;
    let f = Generator::make_power(vec![0.0, 0.5, -0.5], Domain::all(1))?;
    let f_tilde = Generator::make_power(vec![0.2, 0.5, -0.5], Domain::all(1))?;
    let g = [1.0, 0.5, 0.0];
    let g_tilde = [0.9, 0.5, -0.1];
    let col = |v: &[f64; 3]| array![[v[0]], [v[1]], [v[2]]];
    let opts = PicardOptions::default();
    let (u, _) = picard_solve(&chain, &grid, &f, col(&g).view(), &opts)?;
    let (ut, _) = picard_solve(&chain, &grid, &f_tilde, col(&g_tilde).view(), &opts)?;

    let cmp = check_comparison(
        &chain,
        &grid,
        &f,
        &g,
        &u,
        &f_tilde,
        &g_tilde,
        &ut,
        Tolerance::default(),
    )?;
    println!(
        "{}: passed = {}, u(0, ·) − ũ(0, ·) = {:?}",
        cmp.name,
        cmp.passed,
        (0..3)
            .map(|x| format!("{:.4}", u.scalar(0, x) - ut.scalar(0, x)))
            .collect::<Vec<_>>()
    );

    // same driver, perturbed terminal data
    let (us, _) = picard_solve(&chain, &grid, &f, col(&g_tilde).view(), &opts)?;
    let stab = check_stability(&chain, &grid, &f, &u, &us, Tolerance::default())?;
    println!(
        "{}: passed = {}, sup |u − ũ| = {:.4}",
        stab.name,
        stab.passed,
        u.sup_distance(&us)
    );
    if !(cmp.passed && stab.passed) {
        return Err("comparison or stability failed".into());
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
