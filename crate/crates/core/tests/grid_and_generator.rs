use approx::assert_relative_eq;
use mie::generator::{BranchingMechanism, NodeStateField};
use mie::{Compact, Domain, Generator, Interval, TimeGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #[test]
    fn nodes_are_found_again(horizon in 0.01f64..100.0, steps in 1usize..500) {
        let grid = TimeGrid::build_uniform(horizon, steps, None).unwrap();
        for (j, t) in grid.nodes().iter().enumerate() {
            prop_assert_eq!(grid.index_of(*t), Some(j));
        }
        prop_assert_eq!(grid.node(steps), horizon);
        prop_assert!(grid.index_of(horizon * 0.5 + horizon / steps as f64 * 0.37).is_none() || steps == 1);
    }

    #[test]
    fn weights_approximate_the_density(steps in 50usize..400, c in 0.1f64..3.0) {
        let density = move |t: f64| c * t * t;
        let grid = TimeGrid::build_uniform(2.0, steps, Some(&density)).unwrap();
        let exact = c * 8.0 / 3.0;
        // left-point rule on an increasing density: below the integral by O(1/N)
        prop_assert!(grid.total_mass() <= exact);
        prop_assert!(exact - grid.total_mass() <= 2.0 * c * 4.0 * 2.0 / steps as f64);
    }

    #[test]
    fn affine_generator_evaluates_a_plus_bw(a in prop::collection::vec(-5.0f64..5.0, 2), b in prop::collection::vec(-5.0f64..5.0, 4), w in prop::collection::vec(-5.0f64..5.0, 2)) {
        let av = DVector::from_vec(a.clone());
        let bm = DMatrix::from_row_slice(2, 2, &b);
        let f = Generator::make_affine(NodeStateField::Constant(av.clone()), NodeStateField::Constant(bm.clone())).unwrap();
        let got = f.evaluate(0, 0, &w).unwrap();
        let want = av + bm * DVector::from_vec(w);
        prop_assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn interval_distance_is_consistent(lo in -10.0f64..0.0, width in 0.1f64..10.0, x in -20.0f64..20.0) {
        let d = Domain::interval(Interval::new(lo, lo + width, true, false).unwrap());
        let dist = d.distance_to_boundary(&[x]);
        if d.contains(&[x]) {
            prop_assert!((dist - (x - lo).min(lo + width - x)).abs() < 1e-12);
        } else {
            prop_assert!(x < lo || x >= lo + width);
        }
    }

    #[test]
    fn branching_mechanism_is_monotone_and_convex(w in 0.0f64..20.0, h in 0.001f64..1.0) {
        let m = BranchingMechanism::new(NodeStateField::Constant(0.3), NodeStateField::Constant(0.2))
            .with_stable(NodeStateField::Constant(1.0), 1.4)
            .with_kernel(vec![(0.5, 1.0), (3.0, 0.2)]);
        let f = Generator::make_branching(m).unwrap();
        let v = |x: f64| f.evaluate(0, 0, &[x]).unwrap()[0];
        prop_assert!(v(w + h) >= v(w));
        prop_assert!(v(w + 2.0 * h) - 2.0 * v(w + h) + v(w) >= -1e-9 * (1.0 + v(w + 2.0 * h)));
    }
}

#[test]
fn evaluation_outside_the_closed_domain_is_an_error() {
    let f = Generator::make_power(vec![1.0, 2.0], Domain::positive()).unwrap();
    assert!(matches!(
        f.evaluate(0, 0, &[-1.0]),
        Err(mie::Error::DomainExit { .. })
    ));
    assert!(f.evaluate(0, 0, &[0.0, 1.0]).is_err());
    assert_relative_eq!(f.evaluate(0, 0, &[0.0]).unwrap()[0], 1.0);
    assert_relative_eq!(f.evaluate(0, 0, &[2.0]).unwrap()[0], 5.0);
}

#[test]
fn compact_hull_and_lattice() {
    let pts = [vec![0.0, 1.0], vec![2.0, -1.0], vec![1.0, 0.5]];
    let hull = Compact::hull(pts.iter().map(|p| p.as_slice())).unwrap();
    assert_eq!(hull.lower, vec![0.0, -1.0]);
    assert_eq!(hull.upper, vec![2.0, 1.0]);
    assert_eq!(hull.lattice(3).len(), 9);
    let line = Compact::interval(0.5, 2.0).unwrap().inflate(1.0);
    let clipped = line.intersect(&Domain::nonnegative());
    assert_eq!((clipped.lower[0], clipped.upper[0]), (0.0, 3.0));
}

#[test]
fn field_shapes_are_checked() {
    let f: NodeStateField<f64> = NodeStateField::PerNode(vec![vec![1.0, 2.0]; 3]);
    assert!(f.check_shape(3, 2).is_ok());
    assert!(f.check_shape(4, 2).is_err());
    assert!(f.check_shape(3, 3).is_err());
    assert_eq!(*f.at(2, 1), 2.0);
    let g: NodeStateField<f64> = NodeStateField::PerState(vec![1.0]);
    assert!(g.check_shape(5, 2).is_err());
}
