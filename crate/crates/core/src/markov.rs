//! Time-inhomogeneous finite-state Markov chains.
//!
//! A [`MarkovChainModel`] holds one row-stochastic matrix per grid step:
//! `P_j[x][y]` is the probability of moving from state `x` at node `j` to
//! state `y` at node `j + 1`. Expectations `E_{t_j,x}[φ(X_{t_m})]` are exact
//! products of these matrices; Monte Carlo sampling is only a cross-check.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Default cap on the number of history states built by [`MarkovChainModel::path_lift`].
pub const DEFAULT_LIFT_BUDGET: u128 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainModel {
    states: usize,
    transitions: Vec<Array2<f64>>,
}

/// One realisation of the chain started at `(start_index, states[0])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSample {
    pub start_index: usize,
    pub states: Vec<usize>,
    pub seed: u64,
}

impl PathSample {
    /// State occupied at absolute node `j`.
    pub fn state_at(&self, j: usize) -> usize {
        self.states[j - self.start_index]
    }
}

impl MarkovChainModel {
    pub fn new(transitions: Vec<Array2<f64>>) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or_else(|| Error::invalid("a chain needs at least one transition matrix"))?;
        let states = first.nrows();
        if states == 0 {
            return Err(Error::invalid("state count must be positive"));
        }
        for (j, p) in transitions.iter().enumerate() {
            if p.nrows() != states || p.ncols() != states {
                return Err(Error::invalid(format!(
                    "transition {j} has shape {:?}, expected {states}x{states}",
                    p.shape()
                )));
            }
            for (x, row) in p.rows().into_iter().enumerate() {
                if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::invalid(format!(
                        "transition {j}, row {x} has a negative or non-finite entry"
                    )));
                }
                let s: f64 = row.sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::invalid(format!(
                        "transition {j}, row {x} sums to {s}, not 1"
                    )));
                }
            }
        }
        Ok(MarkovChainModel {
            states,
            transitions,
        })
    }

    pub fn identity(states: usize, steps: usize) -> Result<Self> {
        Self::homogeneous(Array2::eye(states), steps)
    }

    /// Every step jumps to a uniformly chosen state.
    pub fn uniform(states: usize, steps: usize) -> Result<Self> {
        if states == 0 {
            return Err(Error::invalid("state count must be positive"));
        }
        Self::homogeneous(
            Array2::from_elem((states, states), 1.0 / states as f64),
            steps,
        )
    }

    pub fn homogeneous(p: Array2<f64>, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("step count must be at least 1"));
        }
        Self::new(vec![p; steps])
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn steps(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition(&self, j: usize) -> &Array2<f64> {
        &self.transitions[j]
    }

    /// One-step expectation `(P_j φ)(x) = Σ_y P_j[x][y] φ(y)`.
    pub fn step(&self, j: usize, phi: ArrayView2<'_, f64>) -> Array2<f64> {
        self.transitions[j].dot(&phi)
    }

    /// `E_{t_{j_from},x}[φ(X_{t_{j_to}})]` for every `x`, computed as
    /// `(P_{j_from} ⋯ P_{j_to-1}) φ`. `phi` has one row per state.
    pub fn expectation(
        &self,
        j_from: usize,
        j_to: usize,
        phi: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        if j_from > j_to || j_to > self.steps() {
            return Err(Error::invalid(format!(
                "expectation range {j_from}..{j_to} outside 0..={}",
                self.steps()
            )));
        }
        if phi.nrows() != self.states {
            return Err(Error::invalid(format!(
                "phi has {} rows, chain has {} states",
                phi.nrows(),
                self.states
            )));
        }
        let mut acc = phi.to_owned();
        for j in (j_from..j_to).rev() {
            acc = self.step(j, acc.view());
        }
        Ok(acc)
    }

    /// `count` independent paths from `(j_from, x)`; path `i` uses ChaCha
    /// stream `i` of the given seed, so results do not depend on scheduling.
    pub fn sample_paths(
        &self,
        j_from: usize,
        x: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<PathSample>> {
        if x >= self.states {
            return Err(Error::invalid(format!(
                "state {x} out of range for {} states",
                self.states
            )));
        }
        if j_from > self.steps() {
            return Err(Error::invalid(format!(
                "start node {j_from} beyond the horizon"
            )));
        }
        if count == 0 {
            return Err(Error::invalid("path count must be at least 1"));
        }
        let cumulative: Vec<Array2<f64>> = self.transitions[j_from..]
            .iter()
            .map(|p| {
                let mut c = p.clone();
                for mut row in c.rows_mut() {
                    let mut s = 0.0;
                    for v in row.iter_mut() {
                        s += *v;
                        *v = s;
                    }
                }
                c
            })
            .collect();
        let paths = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mut states = Vec::with_capacity(cumulative.len() + 1);
                let mut cur = x;
                states.push(cur);
                for c in &cumulative {
                    let u: f64 = rng.gen();
                    let row = c.row(cur);
                    cur = row.iter().position(|&s| u < s).unwrap_or_else(|| {
                        // rounding left the last cumulative entry just below 1
                        row.iter().rposition(|_| true).unwrap()
                    });
                    states.push(cur);
                }
                PathSample {
                    start_index: j_from,
                    states,
                    seed,
                }
            })
            .collect();
        Ok(paths)
    }

    /// Chain on histories: at node `j` the lifted state is the visited prefix
    /// `(x_0, …, x_j)`.
    ///
    /// Histories are encoded as full-length words padded with their last
    /// entry, so one state space serves every node.
    pub fn path_lift(&self, budget: u128) -> Result<PathLift> {
        let base = self.states as u128;
        let len = self.steps() as u32 + 1;
        let required = base.checked_pow(len).unwrap_or(u128::MAX);
        if required > budget {
            return Err(Error::Capacity { required, budget });
        }
        let size = required as usize;
        let mut lift = PathLift {
            base: self.states,
            steps: self.steps(),
            chain: MarkovChainModel {
                states: size,
                transitions: Vec::with_capacity(self.steps()),
            },
        };
        for (j, p) in self.transitions.iter().enumerate() {
            let mut lifted = Array2::zeros((size, size));
            for h in 0..size {
                let mut prefix = lift.decode(h);
                prefix.truncate(j + 2);
                let last = prefix[j];
                for y in 0..self.states {
                    prefix[j + 1] = y;
                    lifted[[h, lift.encode(&prefix)]] += p[[last, y]];
                }
            }
            lift.chain.transitions.push(lifted);
        }
        Ok(lift)
    }
}

/// Result of [`MarkovChainModel::path_lift`].
#[derive(Debug, Clone)]
pub struct PathLift {
    pub chain: MarkovChainModel,
    base: usize,
    steps: usize,
}

impl PathLift {
    /// Lifted state of a prefix `(x_0, …, x_j)`.
    pub fn encode(&self, prefix: &[usize]) -> usize {
        assert!(!prefix.is_empty() && prefix.len() <= self.steps + 1);
        let last = *prefix.last().unwrap();
        let mut code = 0usize;
        for i in 0..=self.steps {
            let digit = prefix.get(i).copied().unwrap_or(last);
            code = code * self.base + digit;
        }
        code
    }

    /// Full padded word of a lifted state.
    pub fn decode(&self, mut code: usize) -> Vec<usize> {
        let mut word = vec![0; self.steps + 1];
        for slot in word.iter_mut().rev() {
            *slot = code % self.base;
            code /= self.base;
        }
        word
    }

    /// Current base-chain coordinate of a lifted state at node `j`.
    pub fn coordinate(&self, code: usize, j: usize) -> usize {
        self.decode(code)[j]
    }
}

/// `[chain]` section of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub states: usize,
    pub transitions: TransitionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionSpec {
    Named(NamedTransitions),
    /// One matrix used at every step.
    Matrix(Vec<Vec<f64>>),
    /// One matrix per step.
    PerStep(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedTransitions {
    Identity,
    Uniform,
}

fn matrix_from_rows(rows: &[Vec<f64>], states: usize) -> Result<Array2<f64>> {
    if rows.len() != states || rows.iter().any(|r| r.len() != states) {
        return Err(Error::Config(format!(
            "transition matrix must be {states}x{states}"
        )));
    }
    Ok(Array2::from_shape_fn((states, states), |(i, j)| rows[i][j]))
}

impl ChainSpec {
    pub fn build(&self, steps: usize) -> Result<MarkovChainModel> {
        let chain = match &self.transitions {
            TransitionSpec::Named(NamedTransitions::Identity) => {
                MarkovChainModel::identity(self.states, steps)
            }
            TransitionSpec::Named(NamedTransitions::Uniform) => {
                MarkovChainModel::uniform(self.states, steps)
            }
            TransitionSpec::Matrix(rows) => {
                MarkovChainModel::homogeneous(matrix_from_rows(rows, self.states)?, steps)
            }
            TransitionSpec::PerStep(mats) => {
                if mats.len() != steps {
                    return Err(Error::Config(format!(
                        "{} transition matrices for {steps} grid steps",
                        mats.len()
                    )));
                }
                let ms = mats
                    .iter()
                    .map(|m| matrix_from_rows(m, self.states))
                    .collect::<Result<Vec<_>>>()?;
                MarkovChainModel::new(ms)
            }
        };
        chain.map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })
    }
}
