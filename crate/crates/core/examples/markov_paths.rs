// A time-inhomogeneous chain: exact expectations by backward products,
// seeded path sampling, and the lift to a chain on path prefixes.

use mie::MarkovChainModel;
use ndarray::{array, Array2};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let steps = 4;
    let mats: Vec<Array2<f64>> = (0..steps)
        .map(|j| {
            let p = 0.2 + 0.15 * j as f64;
            array![[1.0 - p, p, 0.0], [0.1, 0.8, 0.1], [0.0, p, 1.0 - p]]
        })
        .collect();
    let chain = MarkovChainModel::new(mats)?;
    let phi = array![[0.0], [1.0], [4.0]];
    let exact = chain.expectation(0, steps, phi.view())?;
    println!("E_0,x[φ(X_4)] = {:?}", exact.column(0).to_vec());

    let paths = chain.sample_paths(0, 0, 20_000, 42)?;
    let mean = paths
        .iter()
        .map(|p| phi[[p.state_at(steps), 0]])
        .sum::<f64>()
        / paths.len() as f64;
    println!(
        "20000 sampled paths from state 0: mean {mean:.4} vs exact {:.4}",
        exact[[0, 0]]
    );

    let lift = chain.path_lift(1 << 20)?;
    let prefix = [0, 1, 1];
    let code = lift.encode(&prefix);
    println!(
        "path prefix {prefix:?} has code {code}, decoded {:?}",
        lift.decode(code)
    );

    // a path functional: the number of visits to state 1 before T
    let size = lift.chain.state_count();
    let visits = Array2::from_shape_fn((size, 1), |(c, _)| {
        lift.decode(c)[..steps].iter().filter(|&&x| x == 1).count() as f64
    });
    let lifted = lift.chain.expectation(0, steps, visits.view())?;
    let sampled = paths
        .iter()
        .map(|p| (0..steps).filter(|&j| p.state_at(j) == 1).count() as f64)
        .sum::<f64>()
        / paths.len() as f64;
    println!(
        "expected visits to state 1 from state 0: {:.4} on {size} lifted states, {sampled:.4} sampled",
        lifted[[lift.encode(&[0]), 0]]
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
