// Linear drivers `f = a + b w` solved four ways: the exact product
// recursion, the truncated series with its tail bound, the commuting
// exponential weight and Monte Carlo over sampled paths.

use mie::feynman_kac::{fk_solve, FkMode};
use mie::generator::NodeStateField;
use mie::{MarkovChainModel, TimeGrid};
use nalgebra::{DMatrix, DVector};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 40;
    let grid = TimeGrid::build_uniform(1.0, n, None)?;
    let chain = MarkovChainModel::homogeneous(
        array![[0.6, 0.4, 0.0], [0.2, 0.6, 0.2], [0.0, 0.5, 0.5]],
        n,
    )?;
    // b is diagonal per state, so all b-values commute
    let a = NodeStateField::PerState(vec![
        DVector::from_vec(vec![0.1, 0.0]),
        DVector::from_vec(vec![0.0, -0.2]),
        DVector::from_vec(vec![0.3, 0.1]),
    ]);
    let b = NodeStateField::PerState(vec![
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.3])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.2])),
        DMatrix::from_diagonal(&DVector::from_vec(vec![-0.4, 0.8])),
    ]);
    let g = array![[1.0, 0.5], [-1.0, 2.0], [0.0, 1.0]];

    let product = fk_solve(&chain, &grid, &a, &b, g.view(), FkMode::Product)?.field;
    println!("product  u(0, 0) = {:?}", product.at(0, 0).to_vec());
    for order in [1, 2, 4, 8] {
        let s = fk_solve(&chain, &grid, &a, &b, g.view(), FkMode::Series { order })?;
        let tail = s.tail_bound.unwrap();
        let gap = s.field.sup_distance(&product);
        println!("series order {order}: sup gap {gap:.2e} <= tail bound {tail:.2e}");
        assert!(gap <= tail);
    }
    let exp = fk_solve(&chain, &grid, &a, &b, g.view(), FkMode::Exp)?.field;
    println!(
        "exp      sup gap to product {:.2e} (first order in the step)",
        exp.sup_distance(&product)
    );
    let mc = fk_solve(
        &chain,
        &grid,
        &a,
        &b,
        g.view(),
        FkMode::Mc {
            paths: 4000,
            seed: 7,
        },
    )?;
    let se = mc.stderr.unwrap();
    println!(
        "mc       u(0, 0) = {:?} ± {:?}",
        mc.field
            .at(0, 0)
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>(),
        se.at(0, 0)
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
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
