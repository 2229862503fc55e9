// Markovian Gronwall inequality: a nonnegative field below its own
// integral right-hand side is below the exponential bound.

use mie::generator::NodeStateField;
use mie::verify::{check_gronwall, Tolerance};
use mie::{MarkovChainModel, SolutionField, TimeGrid};
use ndarray::{array, s, Array3};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 20;
    let grid = TimeGrid::build_uniform(1.0, n, None)?;
    let chain = MarkovChainModel::homogeneous(array![[0.7, 0.3], [0.1, 0.9]], n)?;
    let (a, b) = (0.4, 1.5);
    let h = [1.0, 0.2];
    // v solves its premise with equality: v(j) = P v(j+1) + w (a + b P v(j+1)) up to a 10% cut
    let mut v = Array3::zeros((n + 1, 2, 1));
    v.slice_mut(s![n, .., 0]).assign(&array![h[0], h[1]]);
    let mut rhs = array![[h[0]], [h[1]]];
    for j in (0..n).rev() {
        let pv = chain.step(j, v.slice(s![j + 1, .., ..]));
        rhs = chain.step(j, rhs.view()) + &pv.mapv(|p| grid.weight(j) * (a + b * p));
        v.slice_mut(s![j, .., ..]).assign(&rhs.mapv(|t| 0.9 * t));
    }
    let v = SolutionField::new(grid.clone(), 0, v)?;
    let report = check_gronwall(
        &chain,
        &grid,
        &v,
        &h,
        &NodeStateField::Constant(a),
        &NodeStateField::Constant(b),
        Tolerance::default(),
    )?;
    println!(
        "{}: passed = {}, {} points, worst slack {:.3e}",
        report.name, report.passed, report.checked, report.worst_slack
    );
    if let Some(w) = report.interior {
        println!(
            "tightest interior point: node {}, state {}, v = {:.4}, bound {:.4}",
            w.node, w.state, w.quantity, w.bound
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
