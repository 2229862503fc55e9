// Global solver on an interval domain. The terminal data is clipped into
// the interior at levels `2^{−n}`, each level is solved with the driver
// extended to the closed interval, and the levels settle down.

use mie::solver::solve_1d_global;
use mie::{Domain, Generator, Interval, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = TimeGrid::build_uniform(1.0, 400, None)?;
    let chain = MarkovChainModel::homogeneous(
        array![
            [0.995, 0.005, 0.0],
            [0.0025, 0.995, 0.0025],
            [0.0, 0.005, 0.995]
        ],
        400,
    )?;

    // logistic driver f(w) = w(1 − w) on [0, 1]: the endpoints are absorbing
    let unit = Domain::interval(Interval::new(0.0, 1.0, true, true)?);
    let logistic = Generator::scalar(unit, |_, _, w| w * (1.0 - w));
    let g = array![[0.0], [0.5], [1.0]];
    let (u, report) = solve_1d_global(
        &chain,
        &grid,
        &logistic,
        g.view(),
        20,
        &PicardOptions::default(),
    )?;
    println!(
        "logistic: u(0, ·) = {:?}",
        u.slice(0)
            .iter()
            .map(|v| format!("{v:.5}"))
            .collect::<Vec<_>>()
    );
    println!(
        "clip differences: {:?}",
        report
            .clip_differences
            .iter()
            .map(|d| format!("{d:.1e}"))
            .collect::<Vec<_>>()
    );
    assert!(u.values().iter().all(|v| (0.0..=1.0).contains(v)));

    // f(w) = w² on [0, ∞) with g ≡ 1: u(t) = 1/(2 − t)
    let f = Generator::make_power(vec![0.0, 0.0, 1.0], Domain::nonnegative())?;
    let one = MarkovChainModel::identity(1, 400)?;
    let (u, _) = solve_1d_global(
        &one,
        &grid,
        &f,
        array![[1.0]].view(),
        20,
        &PicardOptions::default(),
    )?;
    println!("w² on [0, ∞): u(0) = {:.5}, exact 0.5", u.scalar(0, 0));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
