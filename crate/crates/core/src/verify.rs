//! Checkers for the comparison, stability and growth inequalities on grid
//! fields.
//!
//! Every bound has the form `E_{t_j,x}[e^{Σ_{l≥j} w_l ρ_l}(h(X_T) + Σ_{l≥j} m_l)]`
//! and is computed exactly by the backward recursion
//!
//! ```text
//! Q(N) = 1,  Q(j) = e^{w_j ρ_j} P_j Q(j+1)
//! V(N) = h,  V(j) = e^{w_j ρ_j} (P_j V(j+1) + m_j P_j Q(j+1))
//! ```
//!
//! Premises are stated with the driver at the propagated value
//! `E_{t_j,x}[u(t_{j+1}, ·)]`. One-step scheme defects of the checked fields
//! enter the bounds as source terms, so the bounds also hold for fields that
//! solve the scheme only approximately. Points whose premise fails are
//! skipped together with every point from which they can be reached.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feynman_kac::SigmaPropagator;
use crate::generator::{lipschitz_profile, norm, Generator, MatrixField, ScalarField};
use crate::markov::MarkovChainModel;
use crate::solver::{signed_residual, DriverEvaluation, SolutionField};
use crate::timegrid::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-9,
            rel: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub node: usize,
    pub state: usize,
    pub quantity: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// `min (bound − quantity + rel·|bound|)` over the checked points.
    pub worst_slack: f64,
    pub witness: Option<Witness>,
    /// Point before the terminal node with the smallest relative gap
    /// `(bound − quantity)/|bound|`, for bounds that are tracked this way.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interior: Option<Witness>,
    pub checked: usize,
    /// Points excluded because their premise fails.
    pub skipped: usize,
}

struct Tally {
    tol: Tolerance,
    worst: f64,
    witness: Option<Witness>,
    terminal: Option<usize>,
    interior: Option<(f64, Witness)>,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn new(tol: Tolerance) -> Self {
        Tally {
            tol,
            worst: f64::INFINITY,
            witness: None,
            terminal: None,
            interior: None,
            checked: 0,
            skipped: 0,
        }
    }

    /// Also track the tightest point strictly before node `n`.
    fn interior_before(mut self, n: usize) -> Self {
        self.terminal = Some(n);
        self
    }

    fn record(&mut self, node: usize, state: usize, quantity: f64, bound: f64) {
        self.checked += 1;
        let slack = bound - quantity + self.tol.rel * bound.abs();
        let here = Witness {
            node,
            state,
            quantity,
            bound,
        };
        if slack < self.worst || slack.is_nan() {
            self.worst = slack;
            self.witness = Some(here);
        }
        if self.terminal.is_some_and(|n| node < n) && bound != 0.0 {
            let gap = (bound - quantity) / bound.abs();
            if self.interior.is_none_or(|(g, _)| gap < g) {
                self.interior = Some((gap, here));
            }
        }
    }

    fn finish(self, name: &str) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            passed: self.worst >= -self.tol.abs,
            worst_slack: self.worst,
            witness: self.witness,
            interior: self.interior.map(|(_, w)| w),
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

fn check_grid(chain: &MarkovChainModel, grid: &TimeGrid, fields: &[&SolutionField]) -> Result<()> {
    if chain.steps() != grid.steps() {
        return Err(Error::invalid(
            "chain and grid disagree on the number of steps",
        ));
    }
    for f in fields {
        if f.grid() != grid || f.states() != chain.state_count() {
            return Err(Error::invalid(
                "field does not live on the given grid and chain",
            ));
        }
    }
    Ok(())
}

fn step_vec(chain: &MarkovChainModel, j: usize, v: &Array1<f64>) -> Array1<f64> {
    chain.transition(j).dot(v)
}

/// `E_{t_j,x}[e^{Σ w ρ}(h + Σ m)]` for all nodes; `m` already carries the weight.
fn weighted_bound(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    rate: impl Fn(usize, usize) -> f64,
    terminal: &[f64],
    source: impl Fn(usize, usize) -> f64,
) -> Array2<f64> {
    let n = grid.steps();
    let states = chain.state_count();
    let mut out = Array2::zeros((n + 1, states));
    let mut v = Array1::from(terminal.to_vec());
    let mut q = Array1::<f64>::ones(states);
    out.row_mut(n).assign(&v);
    for j in (0..n).rev() {
        let pv = step_vec(chain, j, &v);
        let pq = step_vec(chain, j, &q);
        for x in 0..states {
            let e = (grid.weight(j) * rate(j, x)).exp();
            v[x] = e * (pv[x] + source(j, x) * pq[x]);
            q[x] = e * pq[x];
        }
        out.row_mut(j).assign(&v);
    }
    out
}

/// Marks every point from which a marked point is reachable.
fn taint(chain: &MarkovChainModel, bad: &mut Array2<bool>) {
    let n = bad.nrows() - 1;
    for j in (0..n).rev() {
        let p = chain.transition(j);
        for x in 0..bad.ncols() {
            if !bad[[j, x]] && (0..bad.ncols()).any(|y| p[[x, y]] > 0.0 && bad[[j + 1, y]]) {
                bad[[j, x]] = true;
            }
        }
    }
}

/// Norms of the propagated one-step defects, `(N + 1) × S`, zero outside the field.
fn defect_norms(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
) -> Result<Array2<f64>> {
    let signed = signed_residual(chain, grid, gen, u, DriverEvaluation::Propagated)?;
    let mut out = Array2::zeros((grid.steps() + 1, u.states()));
    for j in u.start_index()..grid.steps() {
        for x in 0..u.states() {
            let r = signed.slice(ndarray::s![j - u.start_index(), x, ..]);
            out[[j, x]] = norm(r.as_slice().unwrap());
        }
    }
    Ok(out)
}

/// Driver evaluation points `E_{t_j,x}[u(t_{j+1}, ·)]`.
fn propagated_points(chain: &MarkovChainModel, u: &SolutionField) -> Vec<(usize, usize, Vec<f64>)> {
    let mut out = Vec::new();
    for j in u.start_index()..u.grid().steps() {
        let prop = chain.step(j, u.slice(j + 1));
        for x in 0..u.states() {
            out.push((j, x, prop.row(x).to_vec()));
        }
    }
    out
}

fn lattice_points(u: &[&SolutionField], domain_clip: &Generator) -> Vec<Vec<f64>> {
    let mut hull = u[0].hull();
    for f in &u[1..] {
        let h = f.hull();
        for i in 0..hull.dim() {
            hull.lower[i] = hull.lower[i].min(h.lower[i]);
            hull.upper[i] = hull.upper[i].max(h.upper[i]);
        }
    }
    let hull = hull.intersect(domain_clip.domain());
    let per_axis = match hull.dim() {
        1 => 17,
        k => (289f64.powf(1.0 / k as f64).floor() as usize).max(2),
    };
    hull.lattice(per_axis)
        .into_iter()
        .filter(|w| domain_clip.domain().contains_closure(w))
        .collect()
}

fn premise_tol(tol: Tolerance, scale: f64) -> f64 {
    tol.abs + tol.rel * scale.abs()
}

fn check_nonnegative(name: &str, it: impl IntoIterator<Item = f64>) -> Result<()> {
    if it.into_iter().any(|v| !(v >= 0.0)) {
        return Err(Error::invalid(format!("{name} must be nonnegative")));
    }
    Ok(())
}

fn check_scalar(u: &SolutionField) -> Result<()> {
    if u.dim() != 1 {
        return Err(Error::invalid("this checker needs k = 1"));
    }
    Ok(())
}

/// Markovian Gronwall inequality. Premise at `(t_j, x)`:
/// `v(t_j,x) ≤ E[h(X_T)] + E[Σ_{l≥j} w_l (a_l + b_l E_{t_l,X_l}[v(t_{l+1},·)])]`;
/// conclusion `v ≤ E[e^{Σ w b}(h + Σ w a)]`.
pub fn check_gronwall(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    v: &SolutionField,
    h: &[f64],
    a: &ScalarField,
    b: &ScalarField,
    tol: Tolerance,
) -> Result<CheckResult> {
    check_grid(chain, grid, &[v])?;
    check_scalar(v)?;
    let (n, states) = (grid.steps(), chain.state_count());
    a.check_shape(n, states)?;
    b.check_shape(n, states)?;
    if h.len() != states {
        return Err(Error::invalid("h needs one value per state"));
    }
    check_nonnegative("v", v.values().iter().copied())?;
    check_nonnegative("h", h.iter().copied())?;
    check_nonnegative("a", a.values().copied())?;
    check_nonnegative("b", b.values().copied())?;
    let start = v.start_index();
    let mut rhs = Array1::from(h.to_vec());
    let mut bad = Array2::from_elem((n + 1, states), false);
    for x in 0..states {
        bad[[n, x]] = v.scalar(n, x) > h[x] + premise_tol(tol, h[x]);
    }
    for j in (start..n).rev() {
        let pv = step_vec(chain, j, &v.slice(j + 1).column(0).to_owned());
        let mut next = step_vec(chain, j, &rhs);
        for x in 0..states {
            next[x] += grid.weight(j) * (a.at(j, x) + b.at(j, x) * pv[x]);
            bad[[j, x]] = v.scalar(j, x) > next[x] + premise_tol(tol, next[x]);
        }
        rhs = next;
    }
    taint(chain, &mut bad);
    let bound = weighted_bound(
        chain,
        grid,
        |j, x| *b.at(j, x),
        h,
        |j, x| grid.weight(j) * a.at(j, x),
    );
    let mut tally = Tally::new(tol).interior_before(n);
    for j in start..=n {
        for x in 0..states {
            if bad[[j, x]] {
                tally.skipped += 1;
            } else {
                tally.record(j, x, v.scalar(j, x), bound[[j, x]]);
            }
        }
    }
    Ok(tally.finish("gronwall"))
}

/// Samples `test(j, x, w)` on the driver evaluation points of `fields` and
/// on a lattice over their hull; returns the first violation.
fn sample_premise(
    chain: &MarkovChainModel,
    gen: &Generator,
    fields: &[&SolutionField],
    mut test: impl FnMut(usize, usize, &[f64]) -> bool,
) -> Option<(usize, usize, Vec<f64>)> {
    for f in fields {
        for (j, x, w) in propagated_points(chain, f) {
            if gen.domain().contains_closure(&w) && !test(j, x, &w) {
                return Some((j, x, w));
            }
        }
    }
    let lattice = lattice_points(fields, gen);
    let start = fields.iter().map(|f| f.start_index()).max().unwrap_or(0);
    for j in start..chain.steps() {
        for x in 0..chain.state_count() {
            for w in &lattice {
                if !test(j, x, w) {
                    return Some((j, x, w.clone()));
                }
            }
        }
    }
    None
}

/// Growth estimate `|u| ≤ E[e^{Σ w b}(|g| + Σ w a)]` for an affine bound
/// `|f(t, x, w)| ≤ a(t, x) + b(t, x)|w|`, which is sampled first.
#[allow(clippy::too_many_arguments)]
pub fn check_growth(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
    g: &[Vec<f64>],
    a: &ScalarField,
    b: &ScalarField,
    tol: Tolerance,
) -> Result<CheckResult> {
    check_grid(chain, grid, &[u])?;
    let (n, states) = (grid.steps(), chain.state_count());
    a.check_shape(n, states)?;
    b.check_shape(n, states)?;
    check_nonnegative("a", a.values().copied())?;
    check_nonnegative("b", b.values().copied())?;
    if g.len() != states || g.iter().any(|v| v.len() != u.dim()) {
        return Err(Error::invalid("g must give one k-vector per state"));
    }
    let mut fval = vec![0.0; u.dim()];
    if let Some((j, x, w)) = sample_premise(chain, gen, &[u], |j, x, w| {
        gen.eval_into(j, x, w, &mut fval);
        let lim = a.at(j, x) + b.at(j, x) * norm(w);
        norm(&fval) <= lim + premise_tol(tol, lim)
    }) {
        return Err(Error::precondition(format!(
            "|f| <= a + b|w| fails at node {j}, state {x}, w = {w:?}"
        )));
    }
    let defects = defect_norms(chain, grid, gen, u)?;
    let h: Vec<f64> = (0..states)
        .map(|x| {
            let end: Vec<f64> = u.at(n, x).to_vec();
            let diff: Vec<f64> = end.iter().zip(&g[x]).map(|(p, q)| p - q).collect();
            norm(&g[x]) + norm(&diff)
        })
        .collect();
    let bound = weighted_bound(
        chain,
        grid,
        |j, x| *b.at(j, x),
        &h,
        |j, x| grid.weight(j) * a.at(j, x) + defects[[j, x]],
    );
    let mut tally = Tally::new(tol).interior_before(n);
    for j in u.start_index()..=n {
        for x in 0..states {
            tally.record(j, x, norm(u.at(j, x).as_slice().unwrap()), bound[[j, x]]);
        }
    }
    Ok(tally.finish("growth"))
}

fn lower_endpoint(gen: &Generator) -> Result<f64> {
    if gen.dim() != 1 {
        return Err(Error::invalid("this checker needs k = 1"));
    }
    let lo = gen.domain().intervals()[0].lower;
    if !lo.is_finite() {
        return Err(Error::invalid("the domain has no finite lower endpoint"));
    }
    Ok(lo)
}

/// One-sided growth `u − d̲ ≤ E[e^{Σ w b}(g − d̲ + Σ w (a + b|d̲|))]` for
/// `f ≥ −a − b|w|` on a domain with finite lower endpoint `d̲`.
#[allow(clippy::too_many_arguments)]
pub fn check_one_sided_growth(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
    g: &[f64],
    a: &ScalarField,
    b: &ScalarField,
    tol: Tolerance,
) -> Result<CheckResult> {
    check_grid(chain, grid, &[u])?;
    check_scalar(u)?;
    let lo = lower_endpoint(gen)?;
    let (n, states) = (grid.steps(), chain.state_count());
    a.check_shape(n, states)?;
    b.check_shape(n, states)?;
    check_nonnegative("a", a.values().copied())?;
    check_nonnegative("b", b.values().copied())?;
    if g.len() != states {
        return Err(Error::invalid("g needs one value per state"));
    }
    if u.values().iter().any(|v| !(*v >= lo)) {
        return Err(Error::invalid(
            "field leaves the domain below its lower endpoint",
        ));
    }
    let mut fval = [0.0];
    if let Some((j, x, w)) = sample_premise(chain, gen, &[u], |j, x, w| {
        gen.eval_into(j, x, w, &mut fval);
        let lim = -a.at(j, x) - b.at(j, x) * w[0].abs();
        fval[0] >= lim - premise_tol(tol, lim)
    }) {
        return Err(Error::precondition(format!(
            "f >= -a - b|w| fails at node {j}, state {x}, w = {w:?}"
        )));
    }
    let defects = defect_norms(chain, grid, gen, u)?;
    let h: Vec<f64> = (0..states)
        .map(|x| g[x] - lo + (u.scalar(n, x) - g[x]).max(0.0))
        .collect();
    let bound = weighted_bound(
        chain,
        grid,
        |j, x| *b.at(j, x),
        &h,
        |j, x| grid.weight(j) * (a.at(j, x) + b.at(j, x) * lo.abs()) + defects[[j, x]],
    );
    let mut tally = Tally::new(tol).interior_before(n);
    for j in u.start_index()..=n {
        for x in 0..states {
            tally.record(j, x, u.scalar(j, x) - lo, bound[[j, x]]);
        }
    }
    Ok(tally.finish("one_sided_growth"))
}

/// Boundary estimate `u − d̲ ≥ c_j (E_{t_j,x}[g(X_T)] − d̲)` with
/// `c_j = Π_{l≥j} (1 − w_l n̄_l)`, `n̄_l = max_x n̄(t_l, x)`.
///
/// Premise at a step: `f(t_j, x, d̲) ≤ 0`, `w_j n̄(t_j, x) ≤ 1` and the
/// difference quotient `(f(v) − f(d̲))/(v − d̲)` at the propagated value is at
/// most `n̄(t_j, x)`.
pub fn check_boundary_lower(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
    g: &[f64],
    nbar: &ScalarField,
    tol: Tolerance,
) -> Result<CheckResult> {
    check_grid(chain, grid, &[u])?;
    check_scalar(u)?;
    let lo = lower_endpoint(gen)?;
    let (n, states) = (grid.steps(), chain.state_count());
    nbar.check_shape(n, states)?;
    check_nonnegative("n", nbar.values().copied())?;
    if g.len() != states || g.iter().any(|v| !(*v >= lo)) {
        return Err(Error::invalid(
            "g needs one value >= the lower endpoint per state",
        ));
    }
    if u.values().iter().any(|v| !(*v >= lo)) {
        return Err(Error::invalid(
            "field leaves the domain below its lower endpoint",
        ));
    }
    let start = u.start_index();
    let mut bad = Array2::from_elem((n + 1, states), false);
    let mut fval = [0.0];
    for (j, x, w) in propagated_points(chain, u) {
        let wgt = grid.weight(j);
        let nb = *nbar.at(j, x);
        gen.eval_into(j, x, &[lo], &mut fval);
        let at_lo = fval[0];
        let mut ok = at_lo <= tol.abs && wgt * nb <= 1.0;
        if ok && w[0] > lo {
            gen.eval_into(j, x, &w, &mut fval);
            let quotient = (fval[0] - at_lo) / (w[0] - lo);
            ok = quotient <= nb + premise_tol(tol, nb);
        }
        bad[[j, x]] = !ok;
    }
    taint(chain, &mut bad);
    let defects = defect_norms(chain, grid, gen, u)?;
    // D(N) = (g − u(T))⁺, D(j) = P D(j+1) + |defect|
    let gaps: Vec<f64> = (0..states)
        .map(|x| (g[x] - u.scalar(n, x)).max(0.0))
        .collect();
    let acc = weighted_bound(chain, grid, |_, _| 0.0, &gaps, |j, x| defects[[j, x]]);
    let mut expected = Array1::from(g.to_vec());
    let mut c = 1.0;
    let mut tally = Tally::new(tol);
    for j in (start..=n).rev() {
        if j < n {
            expected = step_vec(chain, j, &expected);
            let nmax = (0..states).map(|x| *nbar.at(j, x)).fold(0.0, f64::max);
            c *= (1.0 - grid.weight(j) * nmax).max(0.0);
        }
        for x in 0..states {
            if bad[[j, x]] {
                tally.skipped += 1;
                continue;
            }
            let lower = c * (expected[x] - lo) - acc[[j, x]];
            // quantity ≤ bound form: lower − (u − d̲) ≤ 0
            tally.record(j, x, lower - (u.scalar(j, x) - lo), 0.0);
        }
    }
    Ok(tally.finish("boundary_lower"))
}

/// Comparison: `f ≤ f̃` (sampled) and `g ≥ g̃` imply `u ≥ ũ`.
///
/// Needs `w_j λ_j ≤ 1` for the Lipschitz constant of `f` on the hull of
/// both fields; steps violating it are skipped. Scheme defects of both
/// fields are accumulated as `D(j) = (1 + w_j λ_j) P_j D(j+1) + |e_j| + |ẽ_j|`
/// and the check is `ũ − u ≤ D`.
#[allow(clippy::too_many_arguments)]
pub fn check_comparison(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    f: &Generator,
    g: &[f64],
    u: &SolutionField,
    f_tilde: &Generator,
    g_tilde: &[f64],
    u_tilde: &SolutionField,
    tol: Tolerance,
) -> Result<CheckResult> {
    check_grid(chain, grid, &[u, u_tilde])?;
    check_scalar(u)?;
    check_scalar(u_tilde)?;
    let (n, states) = (grid.steps(), chain.state_count());
    if g.len() != states || g_tilde.len() != states {
        return Err(Error::invalid("terminal data needs one value per state"));
    }
    if let Some(x) = (0..states).find(|&x| g[x] < g_tilde[x]) {
        return Err(Error::precondition(format!("g < g~ at state {x}")));
    }
    let (mut fa, mut fb) = ([0.0], [0.0]);
    if let Some((j, x, w)) = sample_premise(chain, f, &[u, u_tilde], |j, x, w| {
        f.eval_into(j, x, w, &mut fa);
        f_tilde.eval_into(j, x, w, &mut fb);
        fa[0] <= fb[0] + premise_tol(tol, fb[0])
    }) {
        return Err(Error::precondition(format!(
            "f <= f~ fails at node {j}, state {x}, w = {w:?}"
        )));
    }
    let start = u.start_index().max(u_tilde.start_index());
    let mut hull = u.hull();
    let other = u_tilde.hull();
    hull.lower[0] = hull.lower[0].min(other.lower[0]);
    hull.upper[0] = hull.upper[0].max(other.upper[0]);
    let (lambda, _) = lipschitz_profile(f, &hull, n, states)?;
    let mut bad = Array2::from_elem((n + 1, states), false);
    for (j, lam) in lambda.iter().enumerate().take(n).skip(start) {
        if grid.weight(j) * lam > 1.0 {
            bad.row_mut(j).fill(true);
        }
    }
    taint(chain, &mut bad);
    let e = defect_norms(chain, grid, f, u)?;
    let et = defect_norms(chain, grid, f_tilde, u_tilde)?;
    let mut terminal = vec![0.0; states];
    for x in 0..states {
        terminal[x] =
            (u_tilde.scalar(n, x) - g_tilde[x]).max(0.0) + (g[x] - u.scalar(n, x)).max(0.0);
    }
    let mut d = Array1::from(terminal);
    let mut tally = Tally::new(tol);
    for j in (start..=n).rev() {
        if j < n {
            let pd = step_vec(chain, j, &d);
            for x in 0..states {
                d[x] = (1.0 + grid.weight(j) * lambda[j]) * pd[x] + e[[j, x]] + et[[j, x]];
            }
        }
        for x in 0..states {
            if bad[[j, x]] {
                tally.skipped += 1;
            } else {
                tally.record(j, x, u_tilde.scalar(j, x) - u.scalar(j, x), d[x]);
            }
        }
    }
    Ok(tally.finish("comparison"))
}

/// Stability: `|u − ũ| ≤ E[e^{Σ w λ}(|g − g̃| + Σ (|e| + |ẽ|))]` where `e`, `ẽ`
/// are the one-step scheme defects and `λ` is the Lipschitz profile of `f`
/// on the hull of both fields and their propagated values.
pub fn check_stability(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    gen: &Generator,
    u: &SolutionField,
    u_tilde: &SolutionField,
    tol: Tolerance,
) -> Result<CheckResult> {
    check_grid(chain, grid, &[u, u_tilde])?;
    let (n, states) = (grid.steps(), chain.state_count());
    if u.dim() != gen.dim() || u_tilde.dim() != gen.dim() {
        return Err(Error::invalid(
            "field dimension does not match the generator",
        ));
    }
    let start = u.start_index().max(u_tilde.start_index());
    let mut hull = u.hull();
    let other = u_tilde.hull();
    for i in 0..hull.dim() {
        hull.lower[i] = hull.lower[i].min(other.lower[i]);
        hull.upper[i] = hull.upper[i].max(other.upper[i]);
    }
    let (lambda, _) = lipschitz_profile(gen, &hull, n, states)?;
    let e = defect_norms(chain, grid, gen, u)?;
    let et = defect_norms(chain, grid, gen, u_tilde)?;
    let h: Vec<f64> = (0..states)
        .map(|x| {
            let a = u.at(n, x);
            let b = u_tilde.at(n, x);
            norm(
                &a.iter()
                    .zip(b.iter())
                    .map(|(p, q)| p - q)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let bound = weighted_bound(
        chain,
        grid,
        |j, _| lambda[j],
        &h,
        |j, x| e[[j, x]] + et[[j, x]],
    );
    let mut tally = Tally::new(tol).interior_before(n);
    for j in start..=n {
        for x in 0..states {
            let d: Vec<f64> = u
                .at(j, x)
                .iter()
                .zip(u_tilde.at(j, x).iter())
                .map(|(p, q)| p - q)
                .collect();
            tally.record(j, x, norm(&d), bound[[j, x]]);
        }
    }
    Ok(tally.finish("stability"))
}

/// Identities of `Σ` along `samples` random state sequences: `Σ_{r,r} = I`,
/// the cocycle `Σ_{r,s} Σ_{s,t} = Σ_{r,t}`, `Σ_{r,t} Σ_{r,t}⁻¹ = I` and the
/// norm bound `|Σ_{r,t}| ≤ √k e^{Σ w |b|}`.
pub fn check_sigma(
    grid: &TimeGrid,
    b: &MatrixField,
    states: usize,
    samples: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<CheckResult> {
    let sp = SigmaPropagator::new(grid, b.clone(), states)?;
    let n = grid.steps();
    let k = sp.dim();
    let eye = DMatrix::<f64>::identity(k, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new(tol);
    for _ in 0..samples {
        let path: Vec<usize> = (0..n.max(1)).map(|_| rng.gen_range(0..states)).collect();
        let at = |l: usize| path[l];
        let mut cut = [
            rng.gen_range(0..=n),
            rng.gen_range(0..=n),
            rng.gen_range(0..=n),
        ];
        cut.sort_unstable();
        let [r, s, t] = cut;
        let x = if r < n { path[r] } else { 0 };
        let id = sp.product(r, r, at)?;
        tally.record(r, x, (&id.value - &eye).norm(), 0.0);
        let whole = sp.product(r, t, at)?;
        let left = sp.product(r, s, at)?;
        let right = sp.product(s, t, at)?;
        let scale = whole.norm_bound;
        tally.record(
            r,
            x,
            (&left.value * &right.value - &whole.value).norm(),
            1e-10 * scale,
        );
        tally.record(r, x, whole.value.norm(), whole.norm_bound);
        if whole.invertible {
            let inv = sp.inverse(r, t, at)?;
            tally.record(
                r,
                x,
                (&whole.value * inv - &eye).norm(),
                1e-10 * scale * scale,
            );
        } else {
            tally.skipped += 1;
        }
    }
    Ok(tally.finish("sigma"))
}
