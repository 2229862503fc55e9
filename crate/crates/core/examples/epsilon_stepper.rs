// Stepping on a coarse macro mesh: inside each macro step the driver is
// frozen at the previous macro value. Refining the macro mesh recovers the
// Picard solution.

use mie::solver::{epsilon_stepper, picard_solve};
use mie::{Domain, Generator, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 512;
    let grid = TimeGrid::build_uniform(1.0, n, None)?;
    let chain = MarkovChainModel::homogeneous(array![[0.7, 0.3], [0.4, 0.6]], n)?;
    let f = Generator::make_power(vec![0.2, -1.0, -0.5], Domain::all(1))?;
    let g = array![[1.0], [0.2]];
    let (exact, _) = picard_solve(&chain, &grid, &f, g.view(), &PicardOptions::default())?;
    for macro_steps in [2, 4, 8, 16, 32, n] {
        let marks: Vec<usize> = (0..=macro_steps).map(|i| i * n / macro_steps).collect();
        let u = epsilon_stepper(&chain, &grid, &f, g.view(), &marks)?;
        println!(
            "{macro_steps:>4} macro steps: sup |u − picard| = {:.3e}",
            u.sup_distance(&exact)
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
