//! Discretisation of the time interval `[0, T]` together with the measure `μ`.
//!
//! A [`TimeGrid`] stores the nodes `t_0 = 0 < … < t_N = T` and one nonnegative
//! weight per step, `weights[j] ≈ μ([t_j, t_{j+1}))`. Integrals against `μ` use
//! the left-point rule, so the integrand is sampled at `t_j` for step `j`.
//!
//! Grid weights approximate an atomless measure; every identity that needs
//! atomlessness only holds up to `O(Δt)` and is checked under refinement.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    /// Uniform nodes `t_j = jT/N` with left-point weights `(T/N)·density(t_j)`.
    ///
    /// Without a density the weights are those of Lebesgue measure.
    pub fn build_uniform(
        horizon: f64,
        steps: usize,
        density: Option<&dyn Fn(f64) -> f64>,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("step count must be at least 1"));
        }
        let h = horizon / steps as f64;
        let mut nodes: Vec<f64> = (0..=steps).map(|j| j as f64 * h).collect();
        nodes[steps] = horizon;
        let mut weights = Vec::with_capacity(steps);
        for &t in &nodes[..steps] {
            let rho = match density {
                Some(d) => d(t),
                None => 1.0,
            };
            if !(rho >= 0.0) || !rho.is_finite() {
                return Err(Error::invalid(format!(
                    "density must be nonnegative and finite, got {rho} at t = {t}"
                )));
            }
            weights.push(h * rho);
        }
        Self::from_parts(nodes, weights)
    }

    /// Grid with explicit (possibly nonuniform) nodes and weights.
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("a grid needs at least two nodes"));
        }
        if weights.len() + 1 != nodes.len() {
            return Err(Error::invalid(format!(
                "expected {} weights for {} nodes, got {}",
                nodes.len() - 1,
                nodes.len(),
                weights.len()
            )));
        }
        if nodes[0] != 0.0 {
            return Err(Error::invalid("first node must be 0"));
        }
        if nodes
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(Error::invalid(
                "nodes must be finite and strictly increasing",
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be nonnegative and finite"));
        }
        Ok(TimeGrid { nodes, weights })
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.steps()]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Left-point quadrature `Σ_{j=j_from}^{j_to-1} weights[j]·values[j]`.
    ///
    /// `values` holds one row per node (at least `j_to` rows) and one column
    /// per component.
    pub fn integrate(
        &self,
        values: ArrayView2<'_, f64>,
        j_from: usize,
        j_to: usize,
    ) -> Result<Array1<f64>> {
        if j_from > j_to || j_to > self.steps() {
            return Err(Error::invalid(format!(
                "integration range {j_from}..{j_to} outside 0..={}",
                self.steps()
            )));
        }
        if values.nrows() < j_to {
            return Err(Error::invalid(format!(
                "values cover {} nodes, range needs {j_to}",
                values.nrows()
            )));
        }
        let mut acc = Array1::zeros(values.ncols());
        for j in j_from..j_to {
            acc.scaled_add(self.weights[j], &values.row(j));
        }
        Ok(acc)
    }

    /// Index of the node equal to `t` up to rounding, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.horizon().max(1.0);
        self.nodes.iter().position(|&s| (s - t).abs() <= tol)
    }
}

/// Density of `μ` with respect to Lebesgue measure, as written in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    Named(NamedDensity),
    /// One density value per step, sampled at the left node.
    Table(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedDensity {
    Lebesgue,
    Linear,
}

/// `[grid]` section of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySpec>,
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        match &self.density {
            None | Some(DensitySpec::Named(NamedDensity::Lebesgue)) => {
                TimeGrid::build_uniform(self.horizon, self.steps, None)
            }
            Some(DensitySpec::Named(NamedDensity::Linear)) => {
                TimeGrid::build_uniform(self.horizon, self.steps, Some(&|t| t))
            }
            Some(DensitySpec::Table(table)) => {
                if table.len() != self.steps {
                    return Err(Error::Config(format!(
                        "density table has {} entries, grid has {} steps",
                        table.len(),
                        self.steps
                    )));
                }
                let base = TimeGrid::build_uniform(self.horizon, self.steps, None)?;
                let weights = base.weights.iter().zip(table).map(|(w, d)| w * d).collect();
                TimeGrid::from_parts(base.nodes, weights)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn uniform_lebesgue_nodes_and_weights() {
        let g = TimeGrid::build_uniform(1.0, 4, None).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.weights(), &[0.25; 4]);
    }

    #[test]
    fn constant_density_scales_weights() {
        let g = TimeGrid::build_uniform(1.0, 2, Some(&|_| 2.0)).unwrap();
        assert_eq!(g.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn linear_density_mass_is_left_point_sum() {
        let g = TimeGrid::build_uniform(1.0, 1000, Some(&|t| t)).unwrap();
        // Σ_{j<N} (j/N)(1/N) = (N-1)/(2N)
        assert!((g.total_mass() - 0.4995).abs() < 1e-12);
        assert!((g.total_mass() - 0.5).abs() <= 1.0 / 1000.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            TimeGrid::build_uniform(0.0, 4, None),
            Err(Error::InvalidArgument(_))
        ));
        assert!(TimeGrid::build_uniform(-1.0, 4, None).is_err());
        assert!(TimeGrid::build_uniform(1.0, 0, None).is_err());
        assert!(TimeGrid::build_uniform(1.0, 2, Some(&|_| -1.0)).is_err());
        assert!(TimeGrid::from_parts(vec![0.0, 0.5, 0.4], vec![0.5, 0.5]).is_err());
        assert!(TimeGrid::from_parts(vec![0.1, 0.5], vec![0.5]).is_err());
        assert!(TimeGrid::from_parts(vec![0.0, 0.5], vec![-0.5]).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = TimeGrid::build_uniform(1.0, 4, None).unwrap();
        let zeros = Array2::<f64>::zeros((5, 2));
        assert_eq!(
            g.integrate(zeros.view(), 0, 4).unwrap().to_vec(),
            vec![0.0, 0.0]
        );
        let ones = Array2::<f64>::ones((5, 1));
        assert_eq!(g.integrate(ones.view(), 0, 4).unwrap()[0], 1.0);
        assert_eq!(g.integrate(ones.view(), 2, 2).unwrap()[0], 0.0);
        assert!(g.integrate(ones.view(), 3, 2).is_err());
        assert!(g.integrate(ones.view(), 0, 5).is_err());

        let n = 1000;
        let g = TimeGrid::build_uniform(1.0, n, None).unwrap();
        let sq = Array2::from_shape_fn((n + 1, 1), |(j, _)| g.node(j).powi(2));
        let v = g.integrate(sq.view(), 0, n).unwrap()[0];
        // (N-1)(2N-1)/(6N²)
        let exact_left = (n as f64 - 1.0) * (2.0 * n as f64 - 1.0) / (6.0 * (n * n) as f64);
        assert!((v - exact_left).abs() < 1e-12);
        assert!((v - 0.3328).abs() < 1e-4);
        // Lipschitz constant of t² on [0,1] is 2: error ≤ 2·T²/(2N)
        assert!((v - 1.0 / 3.0).abs() <= 2.0 / (2.0 * n as f64));
    }

    #[test]
    fn spec_roundtrip_through_toml() {
        let spec: GridSpec = toml::from_str("T = 2.0\nsteps = 4\ndensity = \"linear\"").unwrap();
        assert_eq!(spec.density, Some(DensitySpec::Named(NamedDensity::Linear)));
        let g = spec.build().unwrap();
        assert_eq!(g.weights(), &[0.0, 0.25, 0.5, 0.75]);
        let spec: GridSpec = toml::from_str("T = 1.0\nsteps = 2\ndensity = [1.0, 3.0]").unwrap();
        assert_eq!(spec.build().unwrap().weights(), &[0.5, 1.5]);
        let bad: GridSpec = toml::from_str("T = 1.0\nsteps = 3\ndensity = [1.0]").unwrap();
        assert!(bad.build().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn integrate_is_additive_and_linear(
                vals in proptest::collection::vec(-10.0f64..10.0, 13),
                other in proptest::collection::vec(-10.0f64..10.0, 13),
                c in -3.0f64..3.0,
                a in 0usize..=12, b in 0usize..=12, d in 0usize..=12,
            ) {
                let g = TimeGrid::build_uniform(1.5, 12, Some(&|t| 1.0 + t)).unwrap();
                let mut idx = [a, b, d];
                idx.sort();
                let [a, b, d] = idx;
                let v = Array2::from_shape_vec((13, 1), vals).unwrap();
                let w = Array2::from_shape_vec((13, 1), other).unwrap();
                // additivity holds exactly when the partial sums are accumulated in order
                let mut running = 0.0;
                for j in a..b { running += g.weight(j) * v[[j, 0]]; }
                prop_assert_eq!(g.integrate(v.view(), a, b).unwrap()[0], running);
                let left = g.integrate(v.view(), a, b).unwrap()[0];
                let right = g.integrate(v.view(), b, d).unwrap()[0];
                let whole = g.integrate(v.view(), a, d).unwrap()[0];
                prop_assert!((left + right - whole).abs() <= 1e-12 * (1.0 + whole.abs()));
                let comb = &v * c + &w;
                let lhs = g.integrate(comb.view(), a, d).unwrap()[0];
                let rhs = c * whole + g.integrate(w.view(), a, d).unwrap()[0];
                prop_assert!((lhs - rhs).abs() <= 1e-10);
            }
        }
    }
}
