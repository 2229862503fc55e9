//! Solvers for the discretised terminal-value problem
//!
//! ```text
//! u(t_j, x) = E_{t_j,x}[g(X_T)] − E_{t_j,x}[ Σ_{l ≥ j} w_l f(t_l, X_{t_l}, ·) ]
//! ```
//!
//! on a [`TimeGrid`] driven by a [`MarkovChainModel`].
//!
//! The driver inside the step `[t_l, t_{l+1})` is evaluated either at the
//! propagated value `E_{t_l,x}[u(t_{l+1}, ·)]` ([`DriverEvaluation::Propagated`],
//! the default) or at the slice value `u(t_l, x)` ([`DriverEvaluation::Slice`]).
//! The propagated form is explicit: its fixed point coincides with the affine
//! backward recursion and with [`epsilon_stepper`] on every node.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{dist, lipschitz_profile, norm, Compact, Generator, Interval};
use crate::markov::MarkovChainModel;
use crate::timegrid::TimeGrid;

/// Values `u[j][x] ∈ ℝᵏ` on the nodes `start..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    grid: TimeGrid,
    start: usize,
    values: Array3<f64>,
}

impl SolutionField {
    /// Field on `start..=N`; `values` has shape `(N + 1 − start, states, k)`.
    pub fn new(grid: TimeGrid, start: usize, values: Array3<f64>) -> Result<Self> {
        if start > grid.steps() || values.shape()[0] != grid.steps() + 1 - start {
            return Err(Error::invalid(format!(
                "field with {} slices does not cover nodes {start}..={}",
                values.shape()[0],
                grid.steps()
            )));
        }
        Ok(SolutionField {
            grid,
            start,
            values,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// First node covered by the field.
    pub fn start_index(&self) -> usize {
        self.start
    }

    pub fn states(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    /// `u(t_j, x)`.
    pub fn at(&self, j: usize, x: usize) -> ArrayView1<'_, f64> {
        self.values.slice(s![j - self.start, x, ..])
    }

    /// Scalar shortcut for `k = 1`.
    pub fn scalar(&self, j: usize, x: usize) -> f64 {
        self.values[[j - self.start, x, 0]]
    }

    /// Slice `u(t_j, ·)` with one row per state.
    pub fn slice(&self, j: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![j - self.start, .., ..])
    }

    /// `sup_{j,x} |u(t_j,x)|`.
    pub fn sup_norm(&self) -> f64 {
        self.points().map(norm).fold(0.0, f64::max)
    }

    /// `sup |u − v|` over the nodes covered by both fields.
    pub fn sup_distance(&self, other: &SolutionField) -> f64 {
        let start = self.start.max(other.start);
        let mut best = 0.0f64;
        for j in start..=self.grid.steps() {
            for x in 0..self.states() {
                let a = self.at(j, x);
                let b = other.at(j, x);
                best = best.max(dist(a.as_slice().unwrap(), b.as_slice().unwrap()));
            }
        }
        best
    }

    fn points(&self) -> impl Iterator<Item = &[f64]> {
        let k = self.dim();
        self.values.as_slice().unwrap().chunks(k)
    }

    /// Bounding box of all values.
    pub fn hull(&self) -> Compact {
        Compact::hull(self.points()).expect("fields are never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverEvaluation {
    /// `f` at `E_{t_j,x}[u(t_{j+1}, ·)]`.
    #[default]
    Propagated,
    /// `f` at `u(t_j, x)`.
    Slice,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: f64,
    pub evaluation: DriverEvaluation,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            max_iter: 500,
            tol: 1e-10,
            damping: 1.0,
            evaluation: DriverEvaluation::Propagated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlowupTrigger {
    Boundary,
    Growth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub node_time: f64,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRecord {
    pub t_minus_estimate: f64,
    pub halt_index: usize,
    pub trigger: BlowupTrigger,
    /// Per-node `min_x min{dist(u, ∂D), 1/(1 + |u|)}`, from `T` backwards.
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the last Picard increment.
    pub final_residual: f64,
    /// Sup of the defect field of the returned solution.
    pub defect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blowup: Option<BlowupRecord>,
    /// `sup |u_{n+1} − u_n|` for every completed iteration.
    pub increments: Vec<f64>,
    /// `Λ = Σ_j w_j λ_j` over the bounding box of all iterates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_mass: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub lipschitz_estimated: bool,
    /// Sup-differences between successive clipping levels.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub clip_differences: Vec<f64>,
    pub sup_norm: f64,
    pub damping: f64,
}

impl SolveReport {
    /// Largest excess of an increment over `(Λⁿ/n!)·sup|u_1 − u_0|`.
    ///
    /// Nonpositive when the contraction tail bound holds; `None` without a
    /// Lipschitz mass or for damped runs. A floating-point floor of
    /// `1e-13·(1 + sup|u|)` is granted to every increment.
    pub fn contraction_tail_excess(&self) -> Option<f64> {
        let lam = self.lipschitz_mass?;
        if self.damping != 1.0 || self.increments.is_empty() {
            return None;
        }
        let first = self.increments[0];
        let floor = 1e-13 * (1.0 + self.sup_norm);
        let mut coeff = 1.0;
        let mut worst = f64::NEG_INFINITY;
        for (n, inc) in self.increments.iter().enumerate() {
            if n > 0 {
                coeff *= lam / n as f64;
            }
            worst = worst.max(inc - coeff * first - floor);
        }
        Some(worst)
    }
}

fn check_instance(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    g: ArrayView2<'_, f64>,
) -> Result<()> {
    if chain.steps() != grid.steps() {
        return Err(Error::invalid(format!(
            "chain has {} steps, grid has {}",
            chain.steps(),
            grid.steps()
        )));
    }
    if g.nrows() != chain.state_count() || g.ncols() != gen.dim() {
        return Err(Error::invalid(format!(
            "terminal data has shape {:?}, expected {}x{}",
            g.shape(),
            chain.state_count(),
            gen.dim()
        )));
    }
    Ok(())
}

fn row(a: &Array2<f64>, x: usize) -> &[f64] {
    let k = a.ncols();
    &a.as_slice().unwrap()[x * k..(x + 1) * k]
}

/// `E_{t_j,·}[g(X_T)]` for every node, as a field.
pub fn propagate_terminal(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    g: ArrayView2<'_, f64>,
) -> SolutionField {
    let n = grid.steps();
    let (states, k) = g.dim();
    let mut values = Array3::zeros((n + 1, states, k));
    values.slice_mut(s![n, .., ..]).assign(&g);
    for j in (0..n).rev() {
        let next = chain.step(j, values.slice(s![j + 1, .., ..]));
        values.slice_mut(s![j, .., ..]).assign(&next);
    }
    SolutionField {
        grid: grid.clone(),
        start: 0,
        values,
    }
}

/// One application of the Picard map `Ψ(u) = E[g] − E[Σ w f(·, u)]`.
fn picard_map(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    base: &SolutionField,
    prev: &SolutionField,
    evaluation: DriverEvaluation,
) -> Result<Array3<f64>> {
    let n = grid.steps();
    let (states, k) = (prev.states(), prev.dim());
    let mut out = Array3::zeros((n + 1, states, k));
    out.slice_mut(s![n, .., ..]).assign(&base.slice(n));
    let mut acc = Array2::<f64>::zeros((states, k));
    let mut fval = vec![0.0; k];
    for j in (0..n).rev() {
        acc = chain.step(j, acc.view());
        let propagated;
        let points: ArrayView2<'_, f64> = match evaluation {
            DriverEvaluation::Slice => prev.slice(j),
            DriverEvaluation::Propagated => {
                propagated = chain.step(j, prev.slice(j + 1));
                propagated.view()
            }
        };
        let w = grid.weight(j);
        for x in 0..states {
            let z = points.row(x);
            let z = z.as_slice().unwrap();
            if !gen.domain().contains_closure(z) {
                return Err(Error::DomainExit {
                    node: j,
                    state: x,
                    value: z.to_vec(),
                });
            }
            gen.eval_into(j, x, z, &mut fval);
            for i in 0..k {
                acc[[x, i]] += w * fval[i];
            }
        }
        let mut slot = out.slice_mut(s![j, .., ..]);
        slot.assign(&base.slice(j));
        slot -= &acc;
    }
    Ok(out)
}

/// Global Picard iteration `u_0 = E[g]`, `u_n = Ψ(u_{n−1})` until the
/// sup-norm increment drops below `opts.tol`.
///
/// Non-convergence is reported through `converged = false`; a driver
/// evaluation outside the domain is an error.
pub fn picard_solve(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    g: ArrayView2<'_, f64>,
    opts: &PicardOptions,
) -> Result<(SolutionField, SolveReport)> {
    check_instance(chain, grid, gen, g)?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::invalid(format!(
            "damping {} outside (0, 1]",
            opts.damping
        )));
    }
    for x in 0..g.nrows() {
        let gx = g.row(x);
        if !gen.domain().contains(gx.as_slice().unwrap()) {
            return Err(Error::DomainExit {
                node: grid.steps(),
                state: x,
                value: gx.to_vec(),
            });
        }
    }
    let base = propagate_terminal(chain, grid, g);
    let mut current = base.clone();
    let mut hull = current.hull();
    let mut report = SolveReport {
        damping: opts.damping,
        ..Default::default()
    };
    for _ in 0..opts.max_iter {
        let mut next = picard_map(chain, grid, gen, &base, &current, opts.evaluation)?;
        if opts.damping != 1.0 {
            next = &next * opts.damping + &(current.values() * (1.0 - opts.damping));
        }
        let next = SolutionField {
            grid: grid.clone(),
            start: 0,
            values: next,
        };
        if next.values.iter().any(|v| !v.is_finite()) {
            break;
        }
        let inc = next.sup_distance(&current);
        let h = next.hull();
        for i in 0..hull.dim() {
            hull.lower[i] = hull.lower[i].min(h.lower[i]);
            hull.upper[i] = hull.upper[i].max(h.upper[i]);
        }
        report.increments.push(inc);
        report.iterations += 1;
        report.final_residual = inc;
        current = next;
        if inc <= opts.tol {
            report.converged = true;
            break;
        }
    }
    if let Ok((profile, estimated)) =
        lipschitz_profile(gen, &hull, grid.steps(), chain.state_count())
    {
        report.lipschitz_mass = Some(profile.iter().zip(grid.weights()).map(|(l, w)| l * w).sum());
        report.lipschitz_estimated = estimated;
    }
    report.defect = residual(chain, grid, gen, &current, opts.evaluation)?
        .iter()
        .copied()
        .fold(0.0, f64::max);
    report.sup_norm = current.sup_norm();
    Ok((current, report))
}

/// Explicit stepping over the macro intervals `t_n < ⋯ < t_0 = T`:
/// on `[t_i, t_{i−1}]`
///
/// ```text
/// u_i(r, x) = E_{r,x}[u_{i−1}(t_{i−1}, ·)] − E_{r,x}[ Σ_{l} w_l f(t_l, X_l, E_{t_l,X_l}[u_{i−1}(t_{i−1}, ·)]) ]
/// ```
///
/// `macro_nodes` are node indices and must contain `0` and `N`.
pub fn epsilon_stepper(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    g: ArrayView2<'_, f64>,
    macro_nodes: &[usize],
) -> Result<SolutionField> {
    check_instance(chain, grid, gen, g)?;
    let n = grid.steps();
    let mut marks = macro_nodes.to_vec();
    marks.sort_unstable();
    marks.dedup();
    if marks.first() != Some(&0) || marks.last() != Some(&n) {
        return Err(Error::invalid("macro nodes must include 0 and N"));
    }
    let (states, k) = g.dim();
    let mut values = Array3::zeros((n + 1, states, k));
    values.slice_mut(s![n, .., ..]).assign(&g);
    let mut fval = vec![0.0; k];
    for win in marks.windows(2).rev() {
        let (lo, hi) = (win[0], win[1]);
        let mut prop = values.slice(s![hi, .., ..]).to_owned();
        let mut acc = Array2::<f64>::zeros((states, k));
        for j in (lo..hi).rev() {
            prop = chain.step(j, prop.view());
            acc = chain.step(j, acc.view());
            let w = grid.weight(j);
            for x in 0..states {
                let z = row(&prop, x);
                if !gen.domain().contains_closure(z) {
                    return Err(Error::DomainExit {
                        node: j,
                        state: x,
                        value: z.to_vec(),
                    });
                }
                gen.eval_into(j, x, z, &mut fval);
                for i in 0..k {
                    acc[[x, i]] += w * fval[i];
                }
            }
            let mut slot = values.slice_mut(s![j, .., ..]);
            slot.assign(&prop);
            slot -= &acc;
        }
    }
    SolutionField::new(grid.clone(), 0, values)
}

/// Signed one-step defect `E_{t_j,x}[u(t_{j+1})] − u(t_j,x) − w_j f(t_j, x, z)`,
/// with `z` chosen by `evaluation`. Shape `(N + 1 − start, states, k)`; the
/// terminal slice is zero.
pub fn signed_residual(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
    evaluation: DriverEvaluation,
) -> Result<Array3<f64>> {
    let n = grid.steps();
    let (states, k) = (u.states(), u.dim());
    let mut out = Array3::zeros((n + 1 - u.start, states, k));
    let mut fval = vec![0.0; k];
    for j in u.start..n {
        let prop = chain.step(j, u.slice(j + 1));
        let w = grid.weight(j);
        for x in 0..states {
            let own = u.at(j, x);
            let z = match evaluation {
                DriverEvaluation::Propagated => row(&prop, x).to_vec(),
                DriverEvaluation::Slice => own.to_vec(),
            };
            gen.eval_into(j, x, &z, &mut fval);
            for i in 0..k {
                out[[j - u.start, x, i]] = prop[[x, i]] - own[i] - w * fval[i];
            }
        }
    }
    Ok(out)
}

/// Norm of the one-step defect for every node pair `(t_j, t_{j+1})`, one row
/// per node from `u.start_index()` (terminal row zero), one column per state.
pub fn residual(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
    evaluation: DriverEvaluation,
) -> Result<Array2<f64>> {
    let signed = signed_residual(chain, grid, gen, u, evaluation)?;
    let (rows, states, _) = signed.dim();
    Ok(Array2::from_shape_fn((rows, states), |(r, x)| {
        norm(signed.slice(s![r, x, ..]).as_slice().unwrap())
    }))
}

/// Two-time defect `E_{r,x}[u(t, X_t)] − u(r,x) − E_{r,x}[Σ_{l=r}^{t−1} w_l f(t_l, X_l, u(t_l, X_l))]`
/// for node indices `r ≤ t`, computed directly (slice evaluation).
pub fn defect_between(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
    r: usize,
    t: usize,
) -> Result<Array2<f64>> {
    if r < u.start || r > t || t > grid.steps() {
        return Err(Error::invalid(format!(
            "node pair ({r}, {t}) outside the field"
        )));
    }
    let (states, k) = (u.states(), u.dim());
    let mut integrand = Array2::<f64>::zeros((states, k));
    let mut fval = vec![0.0; k];
    for l in (r..t).rev() {
        let mut own = Array2::zeros((states, k));
        for x in 0..states {
            gen.eval_into(l, x, u.at(l, x).as_slice().unwrap(), &mut fval);
            for i in 0..k {
                own[[x, i]] = grid.weight(l) * fval[i];
            }
        }
        integrand = if l + 1 < t {
            chain.step(l, integrand.view()) + own
        } else {
            own
        };
    }
    let ahead = chain.expectation(r, t, u.slice(t))?;
    Ok(ahead - u.slice(r) - integrand)
}

/// Condition-(B) statistic `min{dist(w, ∂D), 1/(1 + |w|)}` and which term is smaller.
fn blowup_statistic(gen: &Generator, w: &[f64]) -> (f64, BlowupTrigger) {
    let d = gen.domain().distance_to_boundary(w);
    let growth = 1.0 / (1.0 + norm(w));
    if d < growth {
        (d, BlowupTrigger::Boundary)
    } else {
        (growth, BlowupTrigger::Growth)
    }
}

/// Marches the explicit recursion backward from `T` and halts at the first
/// node where the condition-(B) statistic drops below `threshold` or the
/// iterate leaves `D`.
///
/// The returned field covers the nodes after the halting node. Without a halt
/// the whole grid is covered and `blowup` is `None`.
pub fn march_with_blowup_monitor(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    g: ArrayView2<'_, f64>,
    threshold: f64,
) -> Result<(SolutionField, SolveReport)> {
    check_instance(chain, grid, gen, g)?;
    if !(threshold > 0.0) {
        return Err(Error::invalid("blow-up threshold must be positive"));
    }
    for x in 0..g.nrows() {
        let gx = g.row(x);
        let gx = gx.as_slice().unwrap();
        if !gen.domain().contains(gx) || gen.domain().distance_to_boundary(gx) <= 0.0 {
            return Err(Error::precondition(format!(
                "terminal value {gx:?} at state {x} is not in the interior of the domain"
            )));
        }
    }
    let n = grid.steps();
    let (states, k) = g.dim();
    let mut values = Array3::zeros((n + 1, states, k));
    values.slice_mut(s![n, .., ..]).assign(&g);
    let slice_stat = |slice: &Array2<f64>| {
        (0..states)
            .map(|x| blowup_statistic(gen, row(slice, x)))
            .fold((f64::INFINITY, BlowupTrigger::Growth), |a, b| {
                if b.0 < a.0 {
                    b
                } else {
                    a
                }
            })
    };
    let mut trace = vec![TracePoint {
        node_time: grid.node(n),
        statistic: slice_stat(&g.to_owned()).0,
    }];
    let mut halt: Option<(usize, BlowupTrigger)> = None;
    let mut fval = vec![0.0; k];
    for j in (0..n).rev() {
        let prop = chain.step(j, values.slice(s![j + 1, .., ..]));
        let w = grid.weight(j);
        let mut next = prop.clone();
        let mut exited = false;
        for x in 0..states {
            let z = row(&prop, x);
            if !gen.domain().contains_closure(z) {
                exited = true;
                break;
            }
            gen.eval_into(j, x, z, &mut fval);
            for i in 0..k {
                next[[x, i]] -= w * fval[i];
            }
        }
        if exited {
            halt = Some((j, BlowupTrigger::Boundary));
            break;
        }
        if next.iter().any(|v| !v.is_finite()) {
            halt = Some((j, BlowupTrigger::Growth));
            break;
        }
        let outside = (0..states).any(|x| !gen.domain().contains(row(&next, x)));
        let (stat, trigger) = slice_stat(&next);
        trace.push(TracePoint {
            node_time: grid.node(j),
            statistic: if outside { 0.0 } else { stat },
        });
        if outside {
            halt = Some((j, BlowupTrigger::Boundary));
            break;
        }
        if stat < threshold {
            halt = Some((j, trigger));
            break;
        }
        values.slice_mut(s![j, .., ..]).assign(&next);
    }
    let mut report = SolveReport {
        damping: 1.0,
        iterations: 1,
        ..Default::default()
    };
    let start = match halt {
        Some((j, trigger)) => {
            report.blowup = Some(BlowupRecord {
                t_minus_estimate: grid.node(j),
                halt_index: j,
                trigger,
                trace,
            });
            j + 1
        }
        None => {
            report.converged = true;
            0
        }
    };
    let field = SolutionField::new(
        grid.clone(),
        start,
        values.slice(s![start.., .., ..]).to_owned(),
    )?;
    report.sup_norm = field.sup_norm();
    report.defect = residual(chain, grid, gen, &field, DriverEvaluation::Propagated)?
        .iter()
        .copied()
        .fold(0.0, f64::max);
    Ok((field, report))
}

/// Condition-(B) trace of a field, from `T` backwards.
pub fn blowup_trace(gen: &Generator, u: &SolutionField) -> Vec<TracePoint> {
    (u.start..=u.grid.steps())
        .rev()
        .map(|j| TracePoint {
            node_time: u.grid.node(j),
            statistic: (0..u.states())
                .map(|x| blowup_statistic(gen, u.at(j, x).as_slice().unwrap()).0)
                .fold(f64::INFINITY, f64::min),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipRule {
    /// Both endpoints finite: push `g` into `[d̲ + (d̄ − d̲)2^{−n}, d̄ − (d̄ − d̲)2^{−n}]`.
    TwoSided,
    /// Only `d̲` finite: `g ∨ (d̲ + 2^{−n})`.
    Lower,
    /// Only `d̄` finite: `g ∧ (d̄ − 2^{−n})`.
    Upper,
    /// `D = ℝ`: no clipping.
    None,
}

/// Terminal data pushed away from the finite endpoints at scale `2^{−level}`.
pub fn clip_terminal(iv: &Interval, g: &[f64], level: u32) -> (ClipRule, Vec<f64>) {
    let scale = 0.5f64.powi(level as i32);
    let (lo, hi) = (iv.lower, iv.upper);
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => {
            let width = hi - lo;
            let (a, b) = (lo + width * scale, hi - width * scale);
            (
                ClipRule::TwoSided,
                g.iter().map(|v| v.max(a).min(b)).collect(),
            )
        }
        (true, false) => (
            ClipRule::Lower,
            g.iter().map(|v| v.max(lo + scale)).collect(),
        ),
        (false, true) => (
            ClipRule::Upper,
            g.iter().map(|v| v.min(hi - scale)).collect(),
        ),
        (false, false) => (ClipRule::None, g.to_vec()),
    }
}

/// Tolerance for the endpoint sign conditions of the one-dimensional solver.
const SIGN_TOL: f64 = 1e-12;

fn endpoint_value(gen: &Generator, j: usize, x: usize, end: f64, inward: f64) -> f64 {
    let mut out = [0.0];
    gen.eval_into(j, x, &[end], &mut out);
    if out[0].is_finite() {
        return out[0];
    }
    gen.eval_into(j, x, &[end + inward * 1e-9 * end.abs().max(1.0)], &mut out);
    out[0]
}

/// Global solver on an interval domain (`k = 1`).
///
/// Solves with the clipped terminal data `g_n`, `n = 1..=clip_depth`, using
/// the continuous extension of `f` to the closed interval, and stops early
/// once successive levels differ by less than `opts.tol`. The report lists
/// the per-level sup-differences.
pub fn solve_1d_global(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    g: ArrayView2<'_, f64>,
    clip_depth: u32,
    opts: &PicardOptions,
) -> Result<(SolutionField, SolveReport)> {
    check_instance(chain, grid, gen, g)?;
    if gen.dim() != 1 {
        return Err(Error::invalid("the one-dimensional solver needs k = 1"));
    }
    if clip_depth == 0 {
        return Err(Error::invalid("clip depth must be positive"));
    }
    let iv = gen.domain().intervals()[0];
    let states = chain.state_count();
    for j in 0..grid.steps() {
        for x in 0..states {
            if iv.lower.is_finite() {
                let v = endpoint_value(gen, j, x, iv.lower, 1.0);
                if !(v <= SIGN_TOL) {
                    return Err(Error::precondition(format!(
                        "f(t_{j}, {x}, {}) = {v} must be <= 0 at the lower endpoint",
                        iv.lower
                    )));
                }
            }
            if iv.upper.is_finite() {
                let v = endpoint_value(gen, j, x, iv.upper, -1.0);
                if !(v >= -SIGN_TOL) {
                    return Err(Error::precondition(format!(
                        "f(t_{j}, {x}, {}) = {v} must be >= 0 at the upper endpoint",
                        iv.upper
                    )));
                }
            }
        }
    }
    let gvals: Vec<f64> = g.iter().copied().collect();
    if gvals.iter().any(|v| !(*v >= iv.lower && *v <= iv.upper)) {
        return Err(Error::DomainExit {
            node: grid.steps(),
            state: gvals
                .iter()
                .position(|v| !(*v >= iv.lower && *v <= iv.upper))
                .unwrap(),
            value: gvals.clone(),
        });
    }
    let extended = gen.extended_to_closure();
    let mut previous: Option<SolutionField> = None;
    let mut diffs = Vec::new();
    let mut last_report = SolveReport::default();
    for level in 1..=clip_depth {
        let (_, clipped) = clip_terminal(&iv, &gvals, level);
        let gn = Array2::from_shape_vec((states, 1), clipped).unwrap();
        let (field, report) = picard_solve(chain, grid, &extended, gn.view(), opts)?;
        if !report.converged {
            let mut report = report;
            if gen.domain().contains(gn.as_slice().unwrap()) {
                let (_, monitored) =
                    march_with_blowup_monitor(chain, grid, gen, gn.view(), opts.tol.max(1e-12))?;
                report.blowup = monitored.blowup;
            }
            report.clip_differences = diffs;
            return Ok((field, report));
        }
        let done = match &previous {
            Some(prev) => {
                let d = field.sup_distance(prev);
                diffs.push(d);
                d < opts.tol
            }
            None => false,
        };
        previous = Some(field);
        last_report = report;
        if done {
            break;
        }
    }
    let mut field = previous.expect("at least one level is solved");
    for v in field.values.iter_mut() {
        if *v < iv.lower || *v > iv.upper {
            if *v < iv.lower - 1e-9 || *v > iv.upper + 1e-9 {
                return Err(Error::DomainExit {
                    node: 0,
                    state: 0,
                    value: vec![*v],
                });
            }
            *v = v.clamp(iv.lower, iv.upper);
        }
    }
    last_report.clip_differences = diffs;
    last_report.defect = residual(chain, grid, &extended, &field, opts.evaluation)?
        .iter()
        .copied()
        .fold(0.0, f64::max);
    Ok((field, last_report))
}

/// Horizon on which the explicit construction stays within `β` of the
/// propagated terminal data.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalHorizon {
    pub alpha: f64,
    pub beta: f64,
    /// Node `j*` with `t_{j*} = T − α`.
    pub start_index: usize,
    /// Box containing the closed `β`-neighbourhood of `{E_{r,x}[g(X_T)]}`.
    pub neighbourhood: Compact,
}

/// `β` defaults to half the distance of the propagated terminal data from
/// `∂D` (or `1` when that distance is infinite); `α` is the largest
/// grid-aligned horizon with `E_{r,x}[Σ_{l≥j} w_l a(t_l, X_l)] ≤ β` on
/// `[T − α, T]`, where `a` is the generator's `μ`-bound on the neighbourhood.
pub fn local_horizon(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    g: ArrayView2<'_, f64>,
    beta: Option<f64>,
) -> Result<LocalHorizon> {
    check_instance(chain, grid, gen, g)?;
    if !gen.has_mu_bound() {
        return Err(Error::precondition(
            "local horizon needs a mu-bound on the generator",
        ));
    }
    for x in 0..g.nrows() {
        let gx = g.row(x);
        let gx = gx.as_slice().unwrap();
        if !gen.domain().contains(gx) || gen.domain().distance_to_boundary(gx) <= 0.0 {
            return Err(Error::precondition(format!(
                "terminal value {gx:?} at state {x} touches the boundary"
            )));
        }
    }
    let expected = propagate_terminal(chain, grid, g);
    let hull_distance = expected
        .points()
        .map(|p| gen.domain().distance_to_boundary(p))
        .fold(f64::INFINITY, f64::min);
    let cap = hull_distance / 2.0;
    let beta = match beta {
        Some(b) if !(b > 0.0) || b > cap => {
            return Err(Error::invalid(format!("beta = {b} must lie in (0, {cap}]")))
        }
        Some(b) => b,
        None if cap.is_finite() => cap,
        None => 1.0,
    };
    let neighbourhood = expected.hull().inflate(beta);
    let n = grid.steps();
    let states = chain.state_count();
    let mut acc = Array2::<f64>::zeros((states, 1));
    let mut start = n;
    for j in (0..n).rev() {
        acc = chain.step(j, acc.view());
        for x in 0..states {
            acc[[x, 0]] += grid.weight(j) * gen.mu_bound_at(j, x, &neighbourhood).unwrap();
        }
        if acc.iter().any(|v| *v > beta) {
            break;
        }
        start = j;
    }
    if start == n {
        return Err(Error::precondition(
            "no grid-aligned horizon satisfies the local bound; refine the grid",
        ));
    }
    Ok(LocalHorizon {
        alpha: grid.horizon() - grid.node(start),
        beta,
        start_index: start,
        neighbourhood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{BranchingMechanism, Domain, ScalarField};
    use ndarray::array;

    fn single(n: usize) -> (MarkovChainModel, TimeGrid) {
        (
            MarkovChainModel::identity(1, n).unwrap(),
            TimeGrid::build_uniform(1.0, n, None).unwrap(),
        )
    }

    fn power(coeffs: Vec<f64>) -> Generator {
        Generator::make_power(coeffs, Domain::all(1)).unwrap()
    }

    #[test]
    fn zero_driver_is_pure_expectation() {
        let (chain, grid) = single(10);
        let (u, rep) = picard_solve(
            &chain,
            &grid,
            &Generator::zero(1),
            array![[5.0]].view(),
            &PicardOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!(u.values().iter().all(|v| *v == 5.0));

        let chain = MarkovChainModel::homogeneous(array![[0.3, 0.7], [0.6, 0.4]], 5).unwrap();
        let grid = TimeGrid::build_uniform(1.0, 5, None).unwrap();
        let g = array![[1.0], [-2.0]];
        let (u, _) = picard_solve(
            &chain,
            &grid,
            &Generator::zero(1),
            g.view(),
            &PicardOptions::default(),
        )
        .unwrap();
        for j in 0..=5 {
            let e = chain.expectation(j, 5, g.view()).unwrap();
            assert_eq!(u.slice(j), e.view());
        }
    }

    #[test]
    fn riccati_oracles() {
        let (chain, grid) = single(2000);
        let opts = PicardOptions::default();
        let (u, rep) = picard_solve(
            &chain,
            &grid,
            &power(vec![0.0, 0.0, -1.0]),
            array![[0.5]].view(),
            &opts,
        )
        .unwrap();
        assert!(rep.converged);
        assert!((u.scalar(0, 0) - 1.0).abs() < 2e-3, "{}", u.scalar(0, 0));
        let (u, _) = picard_solve(
            &chain,
            &grid,
            &power(vec![0.0, 0.0, 1.0]),
            array![[1.0]].view(),
            &opts,
        )
        .unwrap();
        assert!((u.scalar(0, 0) - 0.5).abs() < 2e-3);
    }

    #[test]
    fn slice_evaluation_converges_to_its_own_fixed_point() {
        let (chain, grid) = single(400);
        let opts = PicardOptions {
            evaluation: DriverEvaluation::Slice,
            ..Default::default()
        };
        let f = power(vec![0.0, 0.0, -1.0]);
        let (u, rep) = picard_solve(&chain, &grid, &f, array![[0.5]].view(), &opts).unwrap();
        assert!(rep.converged);
        assert!((u.scalar(0, 0) - 1.0).abs() < 1e-2);
        let res = residual(&chain, &grid, &f, &u, DriverEvaluation::Slice).unwrap();
        let lam = rep.lipschitz_mass.unwrap();
        assert!(res.iter().all(|r| *r <= opts.tol * (1.0 + lam)));
    }

    #[test]
    fn domain_exit_is_an_error() {
        let (chain, grid) = single(100);
        let f = Generator::make_power(vec![1.0], Domain::positive()).unwrap();
        let err = picard_solve(
            &chain,
            &grid,
            &f,
            array![[0.3]].view(),
            &PicardOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DomainExit { .. }), "{err:?}");
        assert!(picard_solve(
            &chain,
            &grid,
            &f,
            array![[-0.3]].view(),
            &PicardOptions::default()
        )
        .is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let (chain, grid) = single(100);
        let opts = PicardOptions {
            max_iter: 3,
            ..Default::default()
        };
        let (_, rep) = picard_solve(
            &chain,
            &grid,
            &power(vec![0.0, 0.0, -1.0]),
            array![[0.5]].view(),
            &opts,
        )
        .unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(rep.final_residual > opts.tol);
    }

    #[test]
    fn damping_still_converges() {
        let (chain, grid) = single(200);
        let opts = PicardOptions {
            damping: 0.5,
            ..Default::default()
        };
        let f = power(vec![0.0, 0.0, 1.0]);
        let (u, rep) = picard_solve(&chain, &grid, &f, array![[1.0]].view(), &opts).unwrap();
        let (v, _) = picard_solve(
            &chain,
            &grid,
            &f,
            array![[1.0]].view(),
            &PicardOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!(rep.contraction_tail_excess().is_none());
        assert!(u.sup_distance(&v) < 1e-8);
        assert!(picard_solve(
            &chain,
            &grid,
            &f,
            array![[1.0]].view(),
            &PicardOptions {
                damping: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn stepper_matches_picard_for_zero_driver() {
        let chain = MarkovChainModel::homogeneous(array![[0.3, 0.7], [0.6, 0.4]], 8).unwrap();
        let grid = TimeGrid::build_uniform(2.0, 8, None).unwrap();
        let g = array![[1.0, 2.0], [-3.0, 0.5]];
        let z = Generator::zero(2);
        let a = epsilon_stepper(&chain, &grid, &z, g.view(), &[0, 3, 8]).unwrap();
        let (b, _) = picard_solve(&chain, &grid, &z, g.view(), &PicardOptions::default()).unwrap();
        assert!(a.sup_distance(&b) <= 1e-14);
        assert!(epsilon_stepper(&chain, &grid, &z, g.view(), &[3, 8]).is_err());
    }

    #[test]
    fn stepper_error_shrinks_with_macro_mesh() {
        let (chain, grid) = single(2000);
        let f = power(vec![0.0, 0.0, -1.0]);
        let (b, _) = picard_solve(
            &chain,
            &grid,
            &f,
            array![[0.5]].view(),
            &PicardOptions::default(),
        )
        .unwrap();
        let errs: Vec<f64> = [10usize, 20, 40]
            .iter()
            .map(|m| {
                let marks: Vec<usize> = (0..=*m).map(|i| i * 2000 / m).collect();
                epsilon_stepper(&chain, &grid, &f, array![[0.5]].view(), &marks)
                    .unwrap()
                    .sup_distance(&b)
            })
            .collect();
        assert!(errs[0] < 0.1);
        assert!(errs.windows(2).all(|e| e[1] < 0.6 * e[0]), "{errs:?}");
    }

    #[test]
    fn residual_examples() {
        let (chain, grid) = single(50);
        let f = power(vec![0.0, 0.0, 1.0]);
        let (u, rep) = picard_solve(
            &chain,
            &grid,
            &f,
            array![[1.0]].view(),
            &PicardOptions::default(),
        )
        .unwrap();
        let r = residual(&chain, &grid, &f, &u, DriverEvaluation::Propagated).unwrap();
        assert!(r.iter().all(|v| *v <= 1e-10));
        assert_eq!(r.dim(), (51, 1));
        assert!(rep.defect <= 1e-10);

        let mut values = u.values().clone();
        values[[20, 0, 0]] += 0.1;
        let bumped = SolutionField::new(grid.clone(), 0, values).unwrap();
        let lam = 2.0 * u.sup_norm() + 0.2;
        for mode in [DriverEvaluation::Propagated, DriverEvaluation::Slice] {
            let r = residual(&chain, &grid, &f, &bumped, mode).unwrap();
            assert!(r[[20, 0]] >= 0.1 - grid.weight(20) * lam * 0.1);
        }

        let chain = MarkovChainModel::uniform(3, 6).unwrap();
        let grid = TimeGrid::build_uniform(1.0, 6, None).unwrap();
        let e = propagate_terminal(&chain, &grid, array![[1.0], [2.0], [4.0]].view());
        for mode in [DriverEvaluation::Propagated, DriverEvaluation::Slice] {
            let r = residual(&chain, &grid, &Generator::zero(1), &e, mode).unwrap();
            assert!(r.iter().all(|v| *v <= 1e-15));
        }
    }

    #[test]
    fn one_step_defects_compose() {
        let chain = MarkovChainModel::homogeneous(array![[0.2, 0.8], [0.5, 0.5]], 7).unwrap();
        let grid = TimeGrid::build_uniform(1.0, 7, None).unwrap();
        let f = power(vec![0.3, -0.5, 0.25]);
        // arbitrary field, not a solution
        let values =
            Array3::from_shape_fn((8, 2, 1), |(j, x, _)| (j as f64 * 0.37 + x as f64).sin());
        let u = SolutionField::new(grid.clone(), 0, values).unwrap();
        let one = signed_residual(&chain, &grid, &f, &u, DriverEvaluation::Slice).unwrap();
        let (r, t) = (1, 6);
        let direct = defect_between(&chain, &grid, &f, &u, r, t).unwrap();
        let mut composed = Array2::<f64>::zeros((2, 1));
        for l in r..t {
            let e = one.slice(s![l, .., ..]).to_owned();
            composed = composed + chain.expectation(r, l, e.view()).unwrap();
        }
        for (a, b) in direct.iter().zip(composed.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn blowup_examples() {
        let (chain, grid) = single(200);
        let (u, rep) = march_with_blowup_monitor(
            &chain,
            &grid,
            &Generator::zero(1),
            array![[1.0]].view(),
            1e-2,
        )
        .unwrap();
        assert!(rep.blowup.is_none() && rep.converged);
        assert_eq!(u.start_index(), 0);

        let (chain, grid) = single(4000);
        let (u, rep) = march_with_blowup_monitor(
            &chain,
            &grid,
            &power(vec![0.0, 0.0, -1.0]),
            array![[2.0]].view(),
            1e-2,
        )
        .unwrap();
        let b = rep.blowup.unwrap();
        assert_eq!(b.trigger, BlowupTrigger::Growth);
        assert!(
            (b.t_minus_estimate - 0.5).abs() <= 0.01,
            "{}",
            b.t_minus_estimate
        );
        assert_eq!(u.start_index(), b.halt_index + 1);

        let f = Generator::make_power(vec![1.0], Domain::positive()).unwrap();
        let (_, rep) =
            march_with_blowup_monitor(&chain, &grid, &f, array![[0.3]].view(), 1e-2).unwrap();
        let b = rep.blowup.unwrap();
        assert_eq!(b.trigger, BlowupTrigger::Boundary);
        assert!(
            (b.t_minus_estimate - 0.7).abs() <= 0.01,
            "{}",
            b.t_minus_estimate
        );
        assert!(b.trace.windows(2).all(|w| w[0].node_time > w[1].node_time));

        assert!(march_with_blowup_monitor(&chain, &grid, &f, array![[0.3]].view(), 0.0).is_err());
        let nn = Generator::make_power(vec![1.0], Domain::nonnegative()).unwrap();
        assert!(matches!(
            march_with_blowup_monitor(&chain, &grid, &nn, array![[0.0]].view(), 1e-2),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn one_dimensional_examples() {
        let (chain, grid) = single(2000);
        let sq = Generator::make_branching(BranchingMechanism::new(
            ScalarField::Constant(0.0),
            ScalarField::Constant(1.0),
        ))
        .unwrap();
        let (u, rep) = solve_1d_global(
            &chain,
            &grid,
            &sq,
            array![[1.0]].view(),
            20,
            &PicardOptions::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!((u.scalar(0, 0) - 0.5).abs() < 2e-3);
        assert!(u.values().iter().all(|v| *v > 0.0 && *v <= 1.0));

        let logistic = Generator::make_power(
            vec![0.0, 1.0, -1.0],
            Domain::interval(Interval::new(0.0, 1.0, true, true).unwrap()),
        )
        .unwrap();
        let (u, _) = solve_1d_global(
            &chain,
            &grid,
            &logistic,
            array![[0.5]].view(),
            20,
            &PicardOptions::default(),
        )
        .unwrap();
        // u' = u(1 − u) backwards from u(1) = 1/2
        let exact = 1.0 / (1.0 + 1f64.exp());
        assert!((u.scalar(0, 0) - exact).abs() < 2e-3, "{}", u.scalar(0, 0));
        assert!(u.values().iter().all(|v| (0.0..=1.0).contains(v)));

        let (u, _) = solve_1d_global(
            &chain,
            &grid,
            &sq,
            array![[0.0]].view(),
            20,
            &PicardOptions::default(),
        )
        .unwrap();
        assert!(u.values().iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn one_dimensional_sign_conditions() {
        let (chain, grid) = single(50);
        let bad_low = Generator::make_power(vec![0.5], Domain::nonnegative()).unwrap();
        assert!(matches!(
            solve_1d_global(
                &chain,
                &grid,
                &bad_low,
                array![[1.0]].view(),
                5,
                &PicardOptions::default()
            ),
            Err(Error::Precondition(_))
        ));
        let bad_high = Generator::make_power(
            vec![-0.5, 0.0],
            Domain::interval(Interval::new(f64::NEG_INFINITY, 1.0, false, true).unwrap()),
        )
        .unwrap();
        assert!(matches!(
            solve_1d_global(
                &chain,
                &grid,
                &bad_high,
                array![[0.0]].view(),
                5,
                &PicardOptions::default()
            ),
            Err(Error::Precondition(_))
        ));
        assert!(solve_1d_global(
            &chain,
            &grid,
            &Generator::zero(2),
            array![[0.0, 0.0]].view(),
            5,
            &PicardOptions::default()
        )
        .is_err());
    }

    #[test]
    fn clip_rules() {
        let both = Interval::new(0.0, 2.0, false, false).unwrap();
        assert_eq!(
            clip_terminal(&both, &[0.0, 1.0, 2.0], 2).1,
            vec![0.5, 1.0, 1.5]
        );
        let low = Interval::new(1.0, f64::INFINITY, true, false).unwrap();
        assert_eq!(clip_terminal(&low, &[1.0, 3.0], 1).1, vec![1.5, 3.0]);
        let high = Interval::new(f64::NEG_INFINITY, 0.0, false, false).unwrap();
        assert_eq!(clip_terminal(&high, &[0.0, -3.0], 3).1, vec![-0.125, -3.0]);
        assert_eq!(
            clip_terminal(&Interval::real_line(), &[7.0], 3).0,
            ClipRule::None
        );
    }

    #[test]
    fn local_horizon_examples() {
        let (chain, grid) = single(1000);
        let h = local_horizon(
            &chain,
            &grid,
            &Generator::zero(1),
            array![[1.0]].view(),
            None,
        )
        .unwrap();
        assert_eq!(h.alpha, 1.0);
        assert_eq!(h.start_index, 0);
        assert!(h.beta > 0.0);

        let h = local_horizon(
            &chain,
            &grid,
            &power(vec![0.0, 0.0, -1.0]),
            array![[2.0]].view(),
            Some(1.0),
        )
        .unwrap();
        assert!(
            h.alpha <= 1.0 / 9.0 && h.alpha > 1.0 / 9.0 - 1e-3,
            "{}",
            h.alpha
        );

        let pos = Generator::make_power(vec![0.0, 0.0, -1.0], Domain::positive()).unwrap();
        let h = local_horizon(&chain, &grid, &pos, array![[0.1]].view(), None).unwrap();
        assert!(h.beta <= 0.05 + 1e-15);
        assert!(local_horizon(&chain, &grid, &pos, array![[0.1]].view(), Some(0.2)).is_err());
        let nn = Generator::make_power(vec![0.0, 1.0], Domain::nonnegative()).unwrap();
        assert!(matches!(
            local_horizon(&chain, &grid, &nn, array![[0.0]].view(), None),
            Err(Error::Precondition(_))
        ));
        let bare = Generator::scalar(Domain::all(1), |_, _, w| w);
        assert!(local_horizon(&chain, &grid, &bare, array![[1.0]].view(), None).is_err());
    }
}
