//! Linear drivers `f(t, x, w) = a(t, x) + b(t, x) w` and the multiplicative
//! functional `Σ_{r,t} = Π_{r ≤ l < t} (I − w_l b(t_l, X_l))`.
//!
//! With this functional the solution of the terminal-value problem is
//!
//! ```text
//! u(t_j, x) = E_{t_j,x}[Σ_{j,N} g(X_T)] − E_{t_j,x}[ Σ_{l ≥ j} w_l Σ_{j,l} a(t_l, X_l) ]
//! ```
//!
//! and the backward recursion `V(j) = (I − w_j b_j) P_j V(j+1) − w_j a_j`
//! computes it exactly.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{MatrixField, ScalarField, VectorField};
use crate::markov::MarkovChainModel;
use crate::solver::SolutionField;
use crate::timegrid::TimeGrid;

/// Matrix exponential by scaling and squaring of a degree-18 Taylor polynomial.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|c| a.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for i in 1..=18 {
        term = &term * &scaled / i as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn commutator_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * b - b * a).norm()
}

/// Relative tolerance of the commutation check.
const COMMUTE_TOL: f64 = 1e-12;

fn check_commuting<'a>(mats: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Result<()> {
    let mut distinct: Vec<&DMatrix<f64>> = Vec::new();
    for m in mats {
        if !distinct.contains(&m) {
            distinct.push(m);
        }
    }
    for (i, a) in distinct.iter().enumerate() {
        for b in &distinct[i + 1..] {
            let c = commutator_norm(a, b);
            if c > COMMUTE_TOL * (1.0 + a.norm() * b.norm()) {
                return Err(Error::precondition(format!(
                    "b-values do not commute (|[b1, b2]| = {c:e}): b1 = {a:?}, b2 = {b:?}"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaProduct {
    pub value: DMatrix<f64>,
    /// Every factor `I − w_l b_l` is invertible.
    pub invertible: bool,
    /// `√k · exp(Σ w_l |b_l|_F)`.
    pub norm_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSeries {
    /// `Σ_{n ≤ order} Σ⁽ⁿ⁾`.
    pub value: DMatrix<f64>,
    /// Frobenius norms of the terms `Σ⁽⁰⁾, …, Σ⁽ᵒʳᵈᵉʳ⁾`.
    pub term_norms: Vec<f64>,
    /// `√k Λⁿ / n!` with `Λ = Σ w_l |b_l|_F`.
    pub term_bounds: Vec<f64>,
    /// `√k e^Λ Λ^{order+1} / (order+1)!`, bounding the truncation error.
    pub tail_bound: f64,
}

impl SigmaSeries {
    pub fn bounds_hold(&self) -> bool {
        self.term_norms
            .iter()
            .zip(&self.term_bounds)
            .all(|(n, b)| *n <= b * (1.0 + 1e-12) + 1e-14)
    }
}

/// `Σ` along explicit state sequences for a fixed `b`-field.
#[derive(Debug, Clone)]
pub struct SigmaPropagator {
    weights: Vec<f64>,
    b: MatrixField,
    k: usize,
}

impl SigmaPropagator {
    pub fn new(grid: &TimeGrid, b: MatrixField, states: usize) -> Result<Self> {
        b.check_shape(grid.steps(), states)?;
        let k = b.at(0, 0).nrows();
        if b.values().any(|m| m.nrows() != k || m.ncols() != k) {
            return Err(Error::invalid(
                "b-field entries must be square matrices of one size",
            ));
        }
        Ok(SigmaPropagator {
            weights: grid.weights().to_vec(),
            b,
            k,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `I − w_j b(t_j, x)`.
    pub fn factor(&self, j: usize, x: usize) -> DMatrix<f64> {
        DMatrix::identity(self.k, self.k) - self.b.at(j, x) * self.weights[j]
    }

    fn check_range(&self, r: usize, t: usize) -> Result<()> {
        if r > t || t > self.weights.len() {
            return Err(Error::invalid(format!(
                "node range {r}..{t} outside the grid"
            )));
        }
        Ok(())
    }

    /// `Λ = Σ_{r ≤ l < t} w_l |b(t_l, x_l)|_F`.
    pub fn mass(&self, r: usize, t: usize, path: impl Fn(usize) -> usize) -> f64 {
        (r..t)
            .map(|l| self.weights[l] * self.b.at(l, path(l)).norm())
            .sum()
    }

    /// `Σ_{r,t}` along the states `path(l)`, `r ≤ l < t`.
    pub fn product(
        &self,
        r: usize,
        t: usize,
        path: impl Fn(usize) -> usize,
    ) -> Result<SigmaProduct> {
        self.check_range(r, t)?;
        let mut value = DMatrix::identity(self.k, self.k);
        let mut invertible = true;
        for l in r..t {
            let f = self.factor(l, path(l));
            invertible &= f.clone().lu().is_invertible();
            value *= f;
        }
        let norm_bound = (self.k as f64).sqrt() * self.mass(r, t, &path).exp();
        Ok(SigmaProduct {
            value,
            invertible,
            norm_bound,
        })
    }

    /// `Σ_{r,t}⁻¹`; an error if a factor is singular.
    pub fn inverse(
        &self,
        r: usize,
        t: usize,
        path: impl Fn(usize) -> usize,
    ) -> Result<DMatrix<f64>> {
        self.check_range(r, t)?;
        let mut value = DMatrix::identity(self.k, self.k);
        for l in r..t {
            let inv = self.factor(l, path(l)).try_inverse().ok_or_else(|| {
                Error::precondition(format!(
                    "I - w b is singular at node {l}, state {}",
                    path(l)
                ))
            })?;
            value = inv * value;
        }
        Ok(value)
    }

    /// Expansion `Σ = Σ_n Σ⁽ⁿ⁾`, where `Σ⁽ⁿ⁾` collects the ordered products
    /// of `n` factors `−w_l b_l`. With `order ≥ t − r` the sum is exact.
    pub fn series(
        &self,
        r: usize,
        t: usize,
        path: impl Fn(usize) -> usize,
        order: usize,
    ) -> Result<SigmaSeries> {
        self.check_range(r, t)?;
        let k = self.k;
        let mut terms = vec![DMatrix::<f64>::zeros(k, k); order + 1];
        terms[0] = DMatrix::identity(k, k);
        for l in r..t {
            let step = self.b.at(l, path(l)) * (-self.weights[l]);
            for n in (1..=order).rev() {
                let add = &terms[n - 1] * &step;
                terms[n] += add;
            }
        }
        let lam = self.mass(r, t, &path);
        let root = (k as f64).sqrt();
        let mut coeff = root;
        let mut term_bounds = Vec::with_capacity(order + 1);
        for n in 0..=order {
            if n > 0 {
                coeff *= lam / n as f64;
            }
            term_bounds.push(coeff);
        }
        let tail_bound = coeff * lam / (order + 1) as f64 * lam.exp();
        let term_norms = terms.iter().map(|m| m.norm()).collect();
        let value = terms.into_iter().fold(DMatrix::zeros(k, k), |a, m| a + m);
        Ok(SigmaSeries {
            value,
            term_norms,
            term_bounds,
            tail_bound,
        })
    }

    /// `exp(−Σ w_l b_l)`; requires the `b`-values along the path to commute.
    pub fn commuting_exponential(
        &self,
        r: usize,
        t: usize,
        path: impl Fn(usize) -> usize,
    ) -> Result<DMatrix<f64>> {
        self.check_range(r, t)?;
        let mats: Vec<&DMatrix<f64>> = (r..t).map(|l| self.b.at(l, path(l))).collect();
        check_commuting(mats.iter().copied())?;
        let mut sum = DMatrix::zeros(self.k, self.k);
        for (l, m) in (r..t).zip(&mats) {
            sum += *m * self.weights[l];
        }
        Ok(expm(&(-sum)))
    }
}

fn check_linear(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &VectorField,
    b: &MatrixField,
    g: ArrayView2<'_, f64>,
) -> Result<usize> {
    if chain.steps() != grid.steps() {
        return Err(Error::invalid(
            "chain and grid disagree on the number of steps",
        ));
    }
    let states = chain.state_count();
    a.check_shape(grid.steps(), states)?;
    b.check_shape(grid.steps(), states)?;
    let k = g.ncols();
    if g.nrows() != states
        || a.values().any(|v| v.len() != k)
        || b.values().any(|m| m.nrows() != k || m.ncols() != k)
    {
        return Err(Error::invalid(format!(
            "a, b and g must have dimension {k} over {states} states"
        )));
    }
    Ok(k)
}

fn to_dvector(a: &Array2<f64>, x: usize) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.row(x).iter().copied())
}

/// Backward recursion `V(j) = M_j P_j V(j+1) − w_j a_j` with a per-node
/// factor `M_j(x)`.
fn factor_recursion(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &VectorField,
    g: ArrayView2<'_, f64>,
    factor: impl Fn(usize, usize) -> DMatrix<f64>,
) -> Result<SolutionField> {
    let n = grid.steps();
    let (states, k) = g.dim();
    let mut values = Array3::zeros((n + 1, states, k));
    values.slice_mut(s![n, .., ..]).assign(&g);
    for j in (0..n).rev() {
        let prop = chain.step(j, values.slice(s![j + 1, .., ..]));
        let w = grid.weight(j);
        for x in 0..states {
            let v = factor(j, x) * to_dvector(&prop, x) - a.at(j, x) * w;
            for i in 0..k {
                values[[j, x, i]] = v[i];
            }
        }
    }
    SolutionField::new(grid.clone(), 0, values)
}

/// Exact solution of the linear problem on the grid (product form of `Σ`).
pub fn linear_solve_backward(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &VectorField,
    b: &MatrixField,
    g: ArrayView2<'_, f64>,
) -> Result<SolutionField> {
    let k = check_linear(chain, grid, a, b, g)?;
    factor_recursion(chain, grid, a, g, |j, x| {
        DMatrix::identity(k, k) - b.at(j, x) * grid.weight(j)
    })
}

/// Scalar Feynman–Kac representation with the continuous weight
/// `exp(−Σ w_l b_l)`:
/// `u = E[e^{−Σ w b} g] − E[Σ_l w_l e^{−Σ_{i<l} w_i b_i} a_l]`.
pub fn scalar_fk(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &ScalarField,
    b: &ScalarField,
    g: ArrayView2<'_, f64>,
) -> Result<SolutionField> {
    if g.ncols() != 1 {
        return Err(Error::invalid("scalar Feynman-Kac needs k = 1"));
    }
    let a = a.map(|v| DVector::from_element(1, *v));
    let b = b.map(|v| DMatrix::from_element(1, 1, *v));
    exponential_solve_backward(chain, grid, &a, &b, g)
}

/// Backward recursion with factors `exp(−w_j b_j)`. All `b`-values must
/// commute so that the path products equal `exp(−Σ w b)`.
pub fn exponential_solve_backward(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &VectorField,
    b: &MatrixField,
    g: ArrayView2<'_, f64>,
) -> Result<SolutionField> {
    check_linear(chain, grid, a, b, g)?;
    check_commuting(b.values())?;
    factor_recursion(chain, grid, a, g, |j, x| {
        expm(&(b.at(j, x) * -grid.weight(j)))
    })
}

/// Truncated series `Σ ≈ Σ_{n ≤ order} Σ⁽ⁿ⁾` evaluated by the order-by-order
/// recursions; returns the field and a uniform bound on the truncation error.
pub fn series_solve_backward(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &VectorField,
    b: &MatrixField,
    g: ArrayView2<'_, f64>,
    order: usize,
) -> Result<(SolutionField, f64)> {
    let k = check_linear(chain, grid, a, b, g)?;
    let n = grid.steps();
    let states = chain.state_count();
    // V⁽ᵐ⁾ − W⁽ᵐ⁾ for every order, one node slice at a time
    let mut cur: Vec<Array2<f64>> = (0..=order)
        .map(|m| {
            if m == 0 {
                g.to_owned()
            } else {
                Array2::zeros((states, k))
            }
        })
        .collect();
    let mut values = Array3::zeros((n + 1, states, k));
    values.slice_mut(s![n, .., ..]).assign(&g);
    for j in (0..n).rev() {
        let w = grid.weight(j);
        let prop: Vec<Array2<f64>> = cur.iter().map(|c| chain.step(j, c.view())).collect();
        for m in 0..=order {
            let mut next = prop[m].clone();
            for x in 0..states {
                let mut add = DVector::zeros(k);
                if m == 0 {
                    add -= a.at(j, x) * w;
                } else {
                    add -= b.at(j, x) * to_dvector(&prop[m - 1], x) * w;
                }
                for i in 0..k {
                    next[[x, i]] += add[i];
                }
            }
            cur[m] = next;
        }
        let total = cur
            .iter()
            .fold(Array2::zeros((states, k)), |acc, c| acc + c);
        values.slice_mut(s![j, .., ..]).assign(&total);
    }
    let lam: f64 = (0..n)
        .map(|j| grid.weight(j) * (0..states).map(|x| b.at(j, x).norm()).fold(0.0, f64::max))
        .sum();
    let g_sup = g
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let a_mass: f64 = (0..n)
        .map(|j| grid.weight(j) * (0..states).map(|x| a.at(j, x).norm()).fold(0.0, f64::max))
        .sum();
    let mut tail = (k as f64).sqrt() * lam.exp();
    for i in 1..=order + 1 {
        tail *= lam / i as f64;
    }
    Ok((
        SolutionField::new(grid.clone(), 0, values)?,
        tail * (g_sup + a_mass),
    ))
}

/// Monte Carlo estimate of the Feynman–Kac representation with per-point
/// standard errors.
pub fn monte_carlo_solve(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &VectorField,
    b: &MatrixField,
    g: ArrayView2<'_, f64>,
    paths: usize,
    seed: u64,
) -> Result<(SolutionField, SolutionField)> {
    let k = check_linear(chain, grid, a, b, g)?;
    if paths < 2 {
        return Err(Error::invalid("Monte Carlo needs at least two paths"));
    }
    let n = grid.steps();
    let states = chain.state_count();
    let points: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..states).map(move |x| (j, x)))
        .collect();
    // per-step factors I − w b and increments w a
    let factors: Vec<Vec<DMatrix<f64>>> = (0..n)
        .map(|l| {
            (0..states)
                .map(|y| DMatrix::identity(k, k) - b.at(l, y) * grid.weight(l))
                .collect()
        })
        .collect();
    let incs: Vec<Vec<DVector<f64>>> = (0..n)
        .map(|l| (0..states).map(|y| a.at(l, y) * grid.weight(l)).collect())
        .collect();
    let terminal: Vec<DVector<f64>> = (0..states)
        .map(|y| DVector::from_iterator(k, g.row(y).iter().copied()))
        .collect();
    let estimates: Vec<(Vec<f64>, Vec<f64>)> = points
        .par_iter()
        .map(|&(j, x)| {
            let point_seed = {
                use rand::RngCore;
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream((j * states + x) as u64 + 1);
                r.next_u64()
            };
            let mut sum = vec![0.0; k];
            let mut sq = vec![0.0; k];
            let mut sigma = DMatrix::<f64>::zeros(k, k);
            let mut tmp = DMatrix::<f64>::zeros(k, k);
            let mut acc = DVector::<f64>::zeros(k);
            let mut val = DVector::<f64>::zeros(k);
            for path in chain.sample_paths(j, x, paths, point_seed)? {
                sigma.fill_with_identity();
                acc.fill(0.0);
                for l in j..n {
                    let y = path.state_at(l);
                    acc.gemv(1.0, &sigma, &incs[l][y], 1.0);
                    sigma.mul_to(&factors[l][y], &mut tmp);
                    std::mem::swap(&mut sigma, &mut tmp);
                }
                val.gemv(1.0, &sigma, &terminal[path.state_at(n)], 0.0);
                val -= &acc;
                for i in 0..k {
                    sum[i] += val[i];
                    sq[i] += val[i] * val[i];
                }
            }
            let m = paths as f64;
            let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
            let se = sq
                .iter()
                .zip(&mean)
                .map(|(q, mu)| ((q / m - mu * mu).max(0.0) * m / (m - 1.0) / m).sqrt())
                .collect();
            Ok((mean, se))
        })
        .collect::<Result<_>>()?;
    let mut mean = Array3::zeros((n + 1, states, k));
    let mut err = Array3::zeros((n + 1, states, k));
    mean.slice_mut(s![n, .., ..]).assign(&g);
    for (&(j, x), (m, e)) in points.iter().zip(estimates) {
        for i in 0..k {
            mean[[j, x, i]] = m[i];
            err[[j, x, i]] = e[i];
        }
    }
    Ok((
        SolutionField::new(grid.clone(), 0, mean)?,
        SolutionField::new(grid.clone(), 0, err)?,
    ))
}

/// How [`fk_solve`] evaluates `Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FkMode {
    Product,
    Series { order: usize },
    Exp,
    Mc { paths: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkSolution {
    pub field: SolutionField,
    /// Truncation bound (series mode).
    pub tail_bound: Option<f64>,
    /// Standard errors (Monte Carlo mode).
    pub stderr: Option<SolutionField>,
}

pub fn fk_solve(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    a: &VectorField,
    b: &MatrixField,
    g: ArrayView2<'_, f64>,
    mode: FkMode,
) -> Result<FkSolution> {
    let plain = |field| FkSolution {
        field,
        tail_bound: None,
        stderr: None,
    };
    Ok(match mode {
        FkMode::Product => plain(linear_solve_backward(chain, grid, a, b, g)?),
        FkMode::Exp => plain(exponential_solve_backward(chain, grid, a, b, g)?),
        FkMode::Series { order } => {
            let (field, tail) = series_solve_backward(chain, grid, a, b, g, order)?;
            FkSolution {
                field,
                tail_bound: Some(tail),
                stderr: None,
            }
        }
        FkMode::Mc { paths, seed } => {
            let (field, err) = monte_carlo_solve(chain, grid, a, b, g, paths, seed)?;
            FkSolution {
                field,
                tail_bound: None,
                stderr: Some(err),
            }
        }
    })
}

/// `b = c · [[0, δ], [ε, 0]]`.
pub fn coshsinh_matrix(c: &ScalarField, delta: f64, eps: f64) -> MatrixField {
    c.map(|v| DMatrix::from_row_slice(2, 2, &[0.0, delta * v, eps * v, 0.0]))
}

/// Closed form of the two-dimensional system `f(t, x, w) = c(t, x) [[0, δ], [ε, 0]] w`
/// through `θ = Σ_l w_l c(t_l, X_l)` and `κ = √|δε|`:
///
/// ```text
/// δε > 0:  u₁ = E[cosh(κθ) g₁] − (κ/ε) E[sinh(κθ) g₂],  u₂ = −(κ/δ) E[sinh(κθ) g₁] + E[cosh(κθ) g₂]
/// δε < 0:  u₁ = E[cos(κθ) g₁] + (κ/ε) E[sin(κθ) g₂],    u₂ = (κ/δ) E[sin(κθ) g₁] + E[cos(κθ) g₂]
/// ```
pub fn coshsinh_example(
    chain: &MarkovChainModel,
    grid: &TimeGrid,
    c: &ScalarField,
    delta: f64,
    eps: f64,
    g: ArrayView2<'_, f64>,
) -> Result<SolutionField> {
    let states = chain.state_count();
    c.check_shape(grid.steps(), states)?;
    if g.dim() != (states, 2) {
        return Err(Error::invalid(
            "cosh/sinh example needs g with two components",
        ));
    }
    if !(delta * eps != 0.0) || !delta.is_finite() || !eps.is_finite() {
        return Err(Error::invalid(
            "cosh/sinh example needs finite delta, eps with delta*eps != 0",
        ));
    }
    let n = grid.steps();
    let kappa = (delta * eps).abs().sqrt();
    // E_{j,x}[e^{zθ_j} g(X_T)] for every node
    let moment = |z: Complex64| {
        let mut out = Array3::<Complex64>::zeros((n + 1, states, 2));
        out.slice_mut(s![n, .., ..])
            .assign(&g.mapv(Complex64::from));
        for j in (0..n).rev() {
            let p = chain.transition(j);
            for x in 0..states {
                let weight = (z * grid.weight(j) * *c.at(j, x)).exp();
                for i in 0..2 {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for y in 0..states {
                        acc += out[[j + 1, y, i]] * p[[x, y]];
                    }
                    out[[j, x, i]] = weight * acc;
                }
            }
        }
        out
    };
    let (even, odd, sign) = if delta * eps > 0.0 {
        let plus = moment(Complex64::new(kappa, 0.0));
        let minus = moment(Complex64::new(-kappa, 0.0));
        (
            (&plus + &minus).mapv(|v| v.re / 2.0),
            (&plus - &minus).mapv(|v| v.re / 2.0),
            -1.0,
        )
    } else {
        let rot = moment(Complex64::new(0.0, kappa));
        (rot.mapv(|v| v.re), rot.mapv(|v| v.im), 1.0)
    };
    let mut values = Array3::zeros((n + 1, states, 2));
    for j in 0..=n {
        for x in 0..states {
            values[[j, x, 0]] = even[[j, x, 0]] + sign * kappa / eps * odd[[j, x, 1]];
            values[[j, x, 1]] = sign * kappa / delta * odd[[j, x, 0]] + even[[j, x, 1]];
        }
    }
    SolutionField::new(grid.clone(), 0, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn expm_examples() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&z), DMatrix::identity(3, 3));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0, 10.0]));
        let e = expm(&d);
        for (i, v) in [1.0f64, -2.0, 10.0].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() <= 1e-13 * v.exp());
        }
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = expm(&rot);
        assert!((e[(0, 0)] - 1f64.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn zero_b_reduces_to_expectation() {
        let chain = MarkovChainModel::homogeneous(array![[0.3, 0.7], [0.6, 0.4]], 6).unwrap();
        let grid = TimeGrid::build_uniform(1.0, 6, None).unwrap();
        let g = array![[1.0], [3.0]];
        let a = VectorField::Constant(DVector::zeros(1));
        let b = MatrixField::Constant(DMatrix::zeros(1, 1));
        let u = linear_solve_backward(&chain, &grid, &a, &b, g.view()).unwrap();
        for j in 0..=6 {
            assert_eq!(
                u.slice(j),
                chain.expectation(j, 6, g.view()).unwrap().view()
            );
        }
    }

    #[test]
    fn constant_b_single_state() {
        let chain = MarkovChainModel::identity(1, 1000).unwrap();
        let grid = TimeGrid::build_uniform(1.0, 1000, None).unwrap();
        let a = ScalarField::Constant(0.0);
        let b = ScalarField::Constant(2.0);
        let u = scalar_fk(&chain, &grid, &a, &b, array![[3.0]].view()).unwrap();
        assert!((u.scalar(0, 0) - 3.0 * (-2f64).exp()).abs() < 1e-12);
        let prod = linear_solve_backward(
            &chain,
            &grid,
            &a.map(|v| DVector::from_element(1, *v)),
            &b.map(|v| DMatrix::from_element(1, 1, *v)),
            array![[3.0]].view(),
        )
        .unwrap();
        assert!((prod.scalar(0, 0) - 3.0 * 0.998f64.powi(1000)).abs() < 1e-12);
    }

    #[test]
    fn sigma_identities() {
        let grid = TimeGrid::build_uniform(1.0, 5, None).unwrap();
        let b = MatrixField::PerState(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -3.0, 0.5]),
        ]);
        let sp = SigmaPropagator::new(&grid, b, 2).unwrap();
        let path = |l: usize| l % 2;
        let id = sp.product(2, 2, path).unwrap();
        assert_eq!(id.value, DMatrix::identity(2, 2));
        let full = sp.product(0, 5, path).unwrap();
        let split = sp.product(0, 3, path).unwrap().value * sp.product(3, 5, path).unwrap().value;
        assert!((&full.value - split).norm() < 1e-14);
        assert!(full.invertible);
        assert!(full.value.norm() <= full.norm_bound);
        let inv = sp.inverse(0, 5, path).unwrap();
        assert!((&full.value * inv - DMatrix::identity(2, 2)).norm() < 1e-13);
        let series = sp.series(0, 5, path, 5).unwrap();
        assert!((&series.value - &full.value).norm() < 1e-14);
        assert!(series.bounds_hold());
        let short = sp.series(0, 5, path, 2).unwrap();
        assert!((&short.value - &full.value).norm() <= short.tail_bound);
        assert!(sp.commuting_exponential(0, 5, path).is_err());
        assert!(sp.commuting_exponential(0, 5, |_| 0).is_ok());
    }

    #[test]
    fn singular_factor() {
        let grid = TimeGrid::build_uniform(1.0, 2, None).unwrap();
        let b = MatrixField::Constant(DMatrix::from_element(1, 1, 2.0));
        let sp = SigmaPropagator::new(&grid, b, 1).unwrap();
        assert!(!sp.product(0, 2, |_| 0).unwrap().invertible);
        assert!(matches!(
            sp.inverse(0, 2, |_| 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn modes_agree() {
        let chain = MarkovChainModel::homogeneous(
            array![[0.5, 0.25, 0.25], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]],
            8,
        )
        .unwrap();
        let grid = TimeGrid::build_uniform(1.0, 8, None).unwrap();
        let a = VectorField::PerState(vec![
            DVector::from_vec(vec![0.1, 0.0]),
            DVector::from_vec(vec![-0.2, 0.3]),
            DVector::from_vec(vec![0.0, 1.0]),
        ]);
        let b = MatrixField::PerState(vec![
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.2]),
            DMatrix::from_row_slice(2, 2, &[-0.3, 0.0, 0.4, 0.1]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.2, 0.0]),
        ]);
        let g = array![[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]];
        let exact = linear_solve_backward(&chain, &grid, &a, &b, g.view()).unwrap();
        let full = fk_solve(&chain, &grid, &a, &b, g.view(), FkMode::Series { order: 8 }).unwrap();
        assert!(full.field.sup_distance(&exact) < 1e-13);
        let cut = fk_solve(&chain, &grid, &a, &b, g.view(), FkMode::Series { order: 2 }).unwrap();
        assert!(cut.field.sup_distance(&exact) <= cut.tail_bound.unwrap());
        assert!(cut.field.sup_distance(&exact) > 0.0);
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
        )
        .unwrap();
        let se = mc.stderr.unwrap();
        for j in 0..8 {
            for x in 0..3 {
                for i in 0..2 {
                    let d = (mc.field.at(j, x)[i] - exact.at(j, x)[i]).abs();
                    assert!(d <= 5.0 * se.at(j, x)[i] + 1e-12, "{j} {x} {i}: {d}");
                }
            }
        }
        assert!(fk_solve(&chain, &grid, &a, &b, g.view(), FkMode::Exp).is_err());
    }

    #[test]
    fn coshsinh_matches_matrix_exponential() {
        let chain = MarkovChainModel::homogeneous(array![[0.6, 0.4], [0.2, 0.8]], 12).unwrap();
        let grid = TimeGrid::build_uniform(1.0, 12, None).unwrap();
        let c = ScalarField::PerState(vec![1.0, -0.5]);
        let g = array![[1.0, 0.5], [-0.25, 2.0]];
        let zero = VectorField::Constant(DVector::zeros(2));
        for (delta, eps) in [(1.0, -1.0), (2.0, 0.5), (-0.3, 1.5), (-1.0, -2.0)] {
            let u = coshsinh_example(&chain, &grid, &c, delta, eps, g.view()).unwrap();
            let b = coshsinh_matrix(&c, delta, eps);
            let v = exponential_solve_backward(&chain, &grid, &zero, &b, g.view()).unwrap();
            assert!(
                u.sup_distance(&v) < 1e-12,
                "{delta} {eps}: {}",
                u.sup_distance(&v)
            );
        }
        let single = MarkovChainModel::identity(1, 4).unwrap();
        let grid = TimeGrid::build_uniform(1.0, 4, None).unwrap();
        let u = coshsinh_example(
            &single,
            &grid,
            &ScalarField::Constant(1.0),
            1.0,
            -1.0,
            array![[1.0, 0.0]].view(),
        )
        .unwrap();
        assert!((u.at(0, 0)[0] - 1f64.cos()).abs() < 1e-14);
        assert!((u.at(0, 0)[1] - 1f64.sin()).abs() < 1e-14);
        assert!(coshsinh_example(
            &single,
            &grid,
            &ScalarField::Constant(1.0),
            0.0,
            1.0,
            array![[1.0, 0.0]].view()
        )
        .is_err());
    }
}
