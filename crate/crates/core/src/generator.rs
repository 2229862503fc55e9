//! Drivers `f(t, x, w)` of the integral equation together with their domain
//! `D ⊂ ℝᵏ` and regularity metadata.
//!
//! Time enters only through the grid: a [`Generator`] is evaluated at a node
//! index `j`, a state `x` and a point `w`. Two optional callbacks carry the
//! regularity data used by the solvers and checkers:
//!
//! * `mu_bound(j, x, K)`: some `a(t_j, x)` with `|f(t_j, x, w)| ≤ a` on the box `K`,
//! * `lipschitz(j, x, K)`: some `λ(t_j, x)` with `|f(w) − f(w')| ≤ λ |w − w'|` on `K`.
//!
//! Built-in families fill both callbacks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One coordinate of a box domain. Bounds may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
}

impl Interval {
    pub fn new(lower: f64, upper: f64, lower_closed: bool, upper_closed: bool) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || !(lower < upper) {
            return Err(Error::invalid(format!(
                "interval [{lower}, {upper}] has empty interior"
            )));
        }
        Ok(Interval {
            lower,
            upper,
            lower_closed: lower_closed && lower.is_finite(),
            upper_closed: upper_closed && upper.is_finite(),
        })
    }

    pub fn real_line() -> Self {
        Interval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            lower_closed: false,
            upper_closed: false,
        }
    }

    fn contains(&self, w: f64) -> bool {
        let lo = if self.lower_closed {
            w >= self.lower
        } else {
            w > self.lower
        };
        let hi = if self.upper_closed {
            w <= self.upper
        } else {
            w < self.upper
        };
        lo && hi
    }

    fn contains_closure(&self, w: f64) -> bool {
        w >= self.lower && w <= self.upper
    }
}

/// Convex domain `D`: all of `ℝᵏ` or a product of intervals.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    AllOf(usize),
    Box(Vec<Interval>),
}

impl Domain {
    pub fn all(k: usize) -> Self {
        Domain::AllOf(k)
    }

    /// `[0, ∞)`
    pub fn nonnegative() -> Self {
        Domain::Box(vec![Interval::new(0.0, f64::INFINITY, true, false).unwrap()])
    }

    /// `(0, ∞)`
    pub fn positive() -> Self {
        Domain::Box(vec![
            Interval::new(0.0, f64::INFINITY, false, false).unwrap()
        ])
    }

    pub fn interval(iv: Interval) -> Self {
        Domain::Box(vec![iv])
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::AllOf(k) => *k,
            Domain::Box(ivs) => ivs.len(),
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        match self {
            Domain::AllOf(k) => vec![Interval::real_line(); *k],
            Domain::Box(ivs) => ivs.clone(),
        }
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        w.iter().all(|v| v.is_finite())
            && match self {
                Domain::AllOf(k) => w.len() == *k,
                Domain::Box(ivs) => {
                    w.len() == ivs.len() && ivs.iter().zip(w).all(|(iv, v)| iv.contains(*v))
                }
            }
    }

    pub fn contains_closure(&self, w: &[f64]) -> bool {
        w.iter().all(|v| v.is_finite())
            && match self {
                Domain::AllOf(k) => w.len() == *k,
                Domain::Box(ivs) => {
                    w.len() == ivs.len() && ivs.iter().zip(w).all(|(iv, v)| iv.contains_closure(*v))
                }
            }
    }

    /// Euclidean distance from a point of the closure to `∂D`; infinite for `ℝᵏ`.
    pub fn distance_to_boundary(&self, w: &[f64]) -> f64 {
        match self {
            Domain::AllOf(_) => f64::INFINITY,
            Domain::Box(ivs) => ivs
                .iter()
                .zip(w)
                .map(|(iv, v)| (v - iv.lower).min(iv.upper - v).max(0.0))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Nearest point of the closure.
    pub fn clamp(&self, w: &mut [f64]) {
        if let Domain::Box(ivs) = self {
            for (iv, v) in ivs.iter().zip(w.iter_mut()) {
                *v = v.clamp(iv.lower, iv.upper);
            }
        }
    }
}

/// Compact box `K = Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Compact {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Compact {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len()
            || lower
                .iter()
                .zip(&upper)
                .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
        {
            return Err(Error::invalid(
                "compact box needs finite bounds with lower <= upper",
            ));
        }
        Ok(Compact { lower, upper })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// `sup_{w ∈ K} |w|`.
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Per-coordinate `[min, max]` bounding box of a set of points.
    pub fn hull<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut lower = first.to_vec();
        let mut upper = first.to_vec();
        for p in it {
            for i in 0..lower.len() {
                lower[i] = lower[i].min(p[i]);
                upper[i] = upper[i].max(p[i]);
            }
        }
        Some(Compact { lower, upper })
    }

    /// Box grown by `r` in every coordinate.
    pub fn inflate(&self, r: f64) -> Self {
        Compact {
            lower: self.lower.iter().map(|v| v - r).collect(),
            upper: self.upper.iter().map(|v| v + r).collect(),
        }
    }

    /// Box clipped to the closure of a domain.
    pub fn intersect(&self, domain: &Domain) -> Self {
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        domain.clamp(&mut lower);
        domain.clamp(&mut upper);
        Compact { lower, upper }
    }

    fn inside(&self, domain: &Domain) -> bool {
        domain.contains_closure(&self.lower) && domain.contains_closure(&self.upper)
    }

    /// Deterministic lattice with `per_axis` points along every coordinate.
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let k = self.dim();
        let per_axis = per_axis.max(2);
        let total = per_axis.pow(k as u32);
        (0..total)
            .map(|mut code| {
                (0..k)
                    .map(|i| {
                        let step = code % per_axis;
                        code /= per_axis;
                        let s = step as f64 / (per_axis - 1) as f64;
                        self.lower[i] + s * (self.upper[i] - self.lower[i])
                    })
                    .collect()
            })
            .collect()
    }
}

/// A quantity given per grid step and state, with constant and per-state shortcuts.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeStateField<T> {
    Constant(T),
    PerState(Vec<T>),
    /// `values[j][x]` for steps `j` and states `x`.
    PerNode(Vec<Vec<T>>),
}

impl<T> NodeStateField<T> {
    pub fn at(&self, j: usize, x: usize) -> &T {
        match self {
            NodeStateField::Constant(v) => v,
            NodeStateField::PerState(vs) => &vs[x],
            NodeStateField::PerNode(vs) => &vs[j][x],
        }
    }

    pub fn values(&self) -> Box<dyn Iterator<Item = &T> + '_> {
        match self {
            NodeStateField::Constant(v) => Box::new(std::iter::once(v)),
            NodeStateField::PerState(vs) => Box::new(vs.iter()),
            NodeStateField::PerNode(vs) => Box::new(vs.iter().flatten()),
        }
    }

    /// Checks that the field covers `steps × states`.
    pub fn check_shape(&self, steps: usize, states: usize) -> Result<()> {
        match self {
            NodeStateField::Constant(_) => Ok(()),
            NodeStateField::PerState(vs) if vs.len() == states => Ok(()),
            NodeStateField::PerNode(vs)
                if vs.len() == steps && vs.iter().all(|r| r.len() == states) =>
            {
                Ok(())
            }
            _ => Err(Error::invalid(format!(
                "field does not cover {steps} steps x {states} states"
            ))),
        }
    }
}

impl<T: Clone> NodeStateField<T> {
    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> NodeStateField<U> {
        match self {
            NodeStateField::Constant(v) => NodeStateField::Constant(f(v)),
            NodeStateField::PerState(vs) => NodeStateField::PerState(vs.iter().map(f).collect()),
            NodeStateField::PerNode(vs) => {
                NodeStateField::PerNode(vs.iter().map(|r| r.iter().map(&f).collect()).collect())
            }
        }
    }
}

pub type ScalarField = NodeStateField<f64>;
pub type VectorField = NodeStateField<DVector<f64>>;
pub type MatrixField = NodeStateField<DMatrix<f64>>;

pub type EvalFn = dyn Fn(usize, usize, &[f64], &mut [f64]) + Send + Sync;
pub type BoundFn = dyn Fn(usize, usize, &Compact) -> f64 + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Custom,
    Affine,
    Branching,
    Power,
}

/// The driver `f` with domain and regularity metadata.
#[derive(Clone)]
pub struct Generator {
    k: usize,
    domain: Domain,
    eval: Arc<EvalFn>,
    mu_bound: Option<Arc<BoundFn>>,
    lipschitz: Option<Arc<BoundFn>>,
    family: Family,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("k", &self.k)
            .field("domain", &self.domain)
            .field("family", &self.family)
            .field("mu_bound", &self.mu_bound.is_some())
            .field("lipschitz", &self.lipschitz.is_some())
            .finish()
    }
}

impl Generator {
    /// User-supplied driver. `eval(j, x, w, out)` writes `f(t_j, x, w)` into `out`
    /// and must be safe to call concurrently.
    pub fn custom(
        domain: Domain,
        eval: impl Fn(usize, usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Generator {
            k: domain.dim(),
            domain,
            eval: Arc::new(eval),
            mu_bound: None,
            lipschitz: None,
            family: Family::Custom,
        }
    }

    /// Scalar driver `f(t_j, x, w)` on a one-dimensional domain.
    pub fn scalar(
        domain: Domain,
        eval: impl Fn(usize, usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::custom(domain, move |j, x, w, out| out[0] = eval(j, x, w[0]))
    }

    pub fn with_mu_bound(
        mut self,
        bound: impl Fn(usize, usize, &Compact) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.mu_bound = Some(Arc::new(bound));
        self
    }

    pub fn with_lipschitz(
        mut self,
        bound: impl Fn(usize, usize, &Compact) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.lipschitz = Some(Arc::new(bound));
        self
    }

    /// `f ≡ 0` on `ℝᵏ`.
    pub fn zero(k: usize) -> Self {
        Self::make_affine(
            VectorField::Constant(DVector::zeros(k)),
            MatrixField::Constant(DMatrix::zeros(k, k)),
        )
        .expect("zero fields are consistent")
    }

    /// `f(t, x, w) = a(t, x) + b(t, x) w` on `ℝᵏ`, with `λ = |b|_F` and
    /// `a_K = |a| + |b|_F sup_K |w|`.
    pub fn make_affine(a: VectorField, b: MatrixField) -> Result<Self> {
        let k = a.at(0, 0).len();
        if a.values()
            .any(|v| v.len() != k || v.iter().any(|e| !e.is_finite()))
        {
            return Err(Error::invalid(
                "affine a-field entries must be finite vectors of one length",
            ));
        }
        if b.values()
            .any(|m| m.nrows() != k || m.ncols() != k || m.iter().any(|e| !e.is_finite()))
        {
            return Err(Error::invalid(format!(
                "affine b-field entries must be finite {k}x{k} matrices"
            )));
        }
        let a = Arc::new(a);
        let b = Arc::new(b);
        let (ea, eb) = (a.clone(), b.clone());
        let (ma, mb) = (a.clone(), b.clone());
        let lb = b.clone();
        Ok(Generator {
            k,
            domain: Domain::all(k),
            eval: Arc::new(move |j, x, w, out| {
                let av = ea.at(j, x);
                let bm = eb.at(j, x);
                for i in 0..k {
                    let mut s = av[i];
                    for l in 0..k {
                        s += bm[(i, l)] * w[l];
                    }
                    out[i] = s;
                }
            }),
            mu_bound: Some(Arc::new(move |j, x, kset| {
                ma.at(j, x).norm() + mb.at(j, x).norm() * kset.max_norm()
            })),
            lipschitz: Some(Arc::new(move |j, x, _| lb.at(j, x).norm())),
            family: Family::Affine,
        })
    }

    /// Superprocess branching mechanism on `D = [0, ∞)`.
    pub fn make_branching(m: BranchingMechanism) -> Result<Self> {
        m.validate()?;
        let m = Arc::new(m);
        let (em, bm, lm) = (m.clone(), m.clone(), m.clone());
        Ok(Generator {
            k: 1,
            domain: Domain::nonnegative(),
            eval: Arc::new(move |j, x, w, out| out[0] = em.value(j, x, w[0])),
            // f is nonnegative and nondecreasing on [0, ∞)
            mu_bound: Some(Arc::new(move |j, x, kset| {
                bm.value(j, x, kset.upper[0].max(0.0))
            })),
            lipschitz: Some(Arc::new(move |j, x, kset| {
                lm.derivative(j, x, kset.upper[0].max(0.0))
            })),
            family: Family::Branching,
        })
    }

    /// Polynomial `f(w) = Σ_i coeffs[i] wⁱ` (`k = 1`) on the given domain.
    pub fn make_power(coeffs: Vec<f64>, domain: Domain) -> Result<Self> {
        if domain.dim() != 1 {
            return Err(Error::invalid("power family is one-dimensional"));
        }
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("power family needs finite coefficients"));
        }
        let c = Arc::new(coeffs);
        let (ec, mc, lc) = (c.clone(), c.clone(), c.clone());
        Ok(Generator {
            k: 1,
            domain,
            eval: Arc::new(move |_, _, w, out| {
                out[0] = ec.iter().rev().fold(0.0, |acc, ci| acc * w[0] + ci);
            }),
            mu_bound: Some(Arc::new(move |_, _, kset| {
                let r = kset.max_norm();
                mc.iter()
                    .enumerate()
                    .map(|(i, ci)| ci.abs() * r.powi(i as i32))
                    .sum()
            })),
            lipschitz: Some(Arc::new(move |_, _, kset| {
                let r = kset.max_norm();
                lc.iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, ci)| i as f64 * ci.abs() * r.powi(i as i32 - 1))
                    .sum()
            })),
            family: Family::Power,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn has_lipschitz(&self) -> bool {
        self.lipschitz.is_some()
    }

    pub fn has_mu_bound(&self) -> bool {
        self.mu_bound.is_some()
    }

    /// Raw evaluation without a domain check.
    pub fn eval_into(&self, j: usize, x: usize, w: &[f64], out: &mut [f64]) {
        (self.eval)(j, x, w, out)
    }

    /// `f(t_j, x, w)`; `w` must lie in the closure of the domain.
    pub fn evaluate(&self, j: usize, x: usize, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.k {
            return Err(Error::invalid(format!(
                "w has length {}, expected {}",
                w.len(),
                self.k
            )));
        }
        if !self.domain.contains_closure(w) {
            return Err(Error::DomainExit {
                node: j,
                state: x,
                value: w.to_vec(),
            });
        }
        let mut out = vec![0.0; self.k];
        self.eval_into(j, x, w, &mut out);
        Ok(out)
    }

    pub fn mu_bound_at(&self, j: usize, x: usize, kset: &Compact) -> Option<f64> {
        self.mu_bound.as_ref().map(|b| b(j, x, kset))
    }

    pub fn lipschitz_at(&self, j: usize, x: usize, kset: &Compact) -> Option<f64> {
        self.lipschitz.as_ref().map(|b| b(j, x, kset))
    }

    /// Same driver with `f` evaluated at the nearest point of the closed domain.
    ///
    /// This is the continuous extension to the closure used by the
    /// one-dimensional global solver; the metadata stays valid because the
    /// projection is 1-Lipschitz.
    pub fn extended_to_closure(&self) -> Self {
        let inner = self.eval.clone();
        let domain = self.domain.clone();
        let mut ext = self.clone();
        ext.eval = Arc::new(move |j, x, w, out| {
            let mut p = w.to_vec();
            domain.clamp(&mut p);
            inner(j, x, &p, out)
        });
        ext.domain = Domain::all(self.k);
        let clip_dom = self.domain.clone();
        if let Some(l) = self.lipschitz.clone() {
            let d = clip_dom.clone();
            ext.lipschitz = Some(Arc::new(move |j, x, kset| l(j, x, &kset.intersect(&d))));
        }
        if let Some(m) = self.mu_bound.clone() {
            ext.mu_bound = Some(Arc::new(move |j, x, kset| {
                m(j, x, &kset.intersect(&clip_dom))
            }));
        }
        ext
    }
}

/// Lipschitz constant on a compact set; `estimated` marks the sampling fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzBound {
    pub value: f64,
    pub estimated: bool,
}

const FALLBACK_POINTS: usize = 289;

fn fallback_per_axis(k: usize) -> usize {
    if k <= 1 {
        17
    } else {
        ((FALLBACK_POINTS as f64).powf(1.0 / k as f64).floor() as usize).max(2)
    }
}

fn sampled_lipschitz(gen: &Generator, j: usize, x: usize, lattice: &[Vec<f64>]) -> f64 {
    let values: Vec<Vec<f64>> = lattice
        .iter()
        .map(|w| {
            let mut out = vec![0.0; gen.k];
            gen.eval_into(j, x, w, &mut out);
            out
        })
        .collect();
    let mut best = 0.0f64;
    for a in 0..lattice.len() {
        for b in a + 1..lattice.len() {
            let dw = dist(&lattice[a], &lattice[b]);
            if dw > 0.0 {
                best = best.max(dist(&values[a], &values[b]) / dw);
            }
        }
    }
    best
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|p| p * p).sum::<f64>().sqrt()
}

/// Per-step Lipschitz constants `λ_j = sup_x λ(t_j, x)` on `K`, for steps `0..steps`.
pub fn lipschitz_profile(
    gen: &Generator,
    kset: &Compact,
    steps: usize,
    states: usize,
) -> Result<(Vec<f64>, bool)> {
    if kset.dim() != gen.k {
        return Err(Error::invalid(
            "compact set dimension does not match the generator",
        ));
    }
    if !kset.inside(&gen.domain) {
        return Err(Error::invalid("compact set is not contained in the domain"));
    }
    match &gen.lipschitz {
        Some(l) => Ok((
            (0..steps)
                .map(|j| (0..states).map(|x| l(j, x, kset)).fold(0.0, f64::max))
                .collect(),
            false,
        )),
        None => {
            let lattice = kset.lattice(fallback_per_axis(gen.k));
            Ok((
                (0..steps)
                    .map(|j| {
                        (0..states)
                            .map(|x| sampled_lipschitz(gen, j, x, &lattice))
                            .fold(0.0, f64::max)
                    })
                    .collect(),
                true,
            ))
        }
    }
}

/// Uniform Lipschitz constant of `gen` on `K` over the steps in `j_range`.
pub fn lipschitz_on(
    gen: &Generator,
    kset: &Compact,
    j_range: std::ops::Range<usize>,
    states: usize,
) -> Result<LipschitzBound> {
    let (profile, estimated) = lipschitz_profile(gen, kset, j_range.end, states)?;
    Ok(LipschitzBound {
        value: profile[j_range.start..].iter().copied().fold(0.0, f64::max),
        estimated,
    })
}

/// Stable branching term `d(t, x)·w^α`, `α ∈ (1, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableTerm {
    pub d: ScalarField,
    pub alpha: f64,
}

/// Branching mechanism `b w + c w² + Σ d_i w^{α_i} + ∫ (e^{−uw} − 1 + uw) n(du)`.
///
/// The general kernel `n` is a finite table of `(u, mass)` atoms shared by all
/// nodes and states.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingMechanism {
    pub b: ScalarField,
    pub c: ScalarField,
    pub stable: Vec<StableTerm>,
    pub kernel: Vec<(f64, f64)>,
}

impl BranchingMechanism {
    pub fn new(b: ScalarField, c: ScalarField) -> Self {
        BranchingMechanism {
            b,
            c,
            stable: Vec::new(),
            kernel: Vec::new(),
        }
    }

    pub fn with_stable(mut self, d: ScalarField, alpha: f64) -> Self {
        self.stable.push(StableTerm { d, alpha });
        self
    }

    pub fn with_kernel(mut self, atoms: Vec<(f64, f64)>) -> Self {
        self.kernel = atoms;
        self
    }

    fn validate(&self) -> Result<()> {
        let nonneg = |f: &ScalarField| f.values().all(|v| *v >= 0.0 && v.is_finite());
        if !nonneg(&self.b) || !nonneg(&self.c) {
            return Err(Error::invalid("branching b and c must be nonnegative"));
        }
        for t in &self.stable {
            if !(t.alpha > 1.0 && t.alpha < 2.0) {
                return Err(Error::invalid(format!(
                    "stable index {} must lie strictly inside (1, 2)",
                    t.alpha
                )));
            }
            if !nonneg(&t.d) {
                return Err(Error::invalid("stable weights must be nonnegative"));
            }
        }
        if self
            .kernel
            .iter()
            .any(|(u, m)| !(*u > 0.0) || !u.is_finite() || !(*m >= 0.0) || !m.is_finite())
        {
            return Err(Error::invalid(
                "kernel atoms need u > 0 and nonnegative mass",
            ));
        }
        Ok(())
    }

    pub fn value(&self, j: usize, x: usize, w: f64) -> f64 {
        let mut f = self.b.at(j, x) * w + self.c.at(j, x) * w * w;
        for t in &self.stable {
            f += t.d.at(j, x) * w.powf(t.alpha);
        }
        for (u, m) in &self.kernel {
            f += m * compensated_exp(u * w);
        }
        f
    }

    /// `∂f/∂w`, nonnegative and nondecreasing on `[0, ∞)`.
    pub fn derivative(&self, j: usize, x: usize, w: f64) -> f64 {
        let mut d = self.b.at(j, x) + 2.0 * self.c.at(j, x) * w;
        for t in &self.stable {
            d += t.d.at(j, x) * t.alpha * w.powf(t.alpha - 1.0);
        }
        for (u, m) in &self.kernel {
            d += m * u * -(-u * w).exp_m1();
        }
        d
    }
}

/// `e^{−x} − 1 + x` without cancellation for small `x`.
pub fn compensated_exp(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // alternating series Σ_{n≥2} (−x)ⁿ/n!
        let mut term = x * x / 2.0;
        let mut sum = term;
        for n in 3..20 {
            term *= -x / n as f64;
            sum += term;
        }
        sum
    } else {
        (-x).exp_m1() + x
    }
}

/// Closed form against quadrature for the stable-kernel identity
/// `∫₀^∞ (e^{−uw} − 1 + uw) d·α(α−1)/Γ(2−α)·u^{−1−α} du = d·w^α`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KernelCheck {
    pub closed_form: f64,
    pub quadrature: f64,
    pub abs_error: f64,
}

/// Gauss–Legendre panels are this many points wide.
const PANEL_POINTS: usize = 16;

/// Evaluates the stable-kernel integral with `quadrature_nodes` Gauss–Legendre
/// points on each side of the split point `u₀ = 1/max(w, 1)`.
///
/// Near zero the substitution `u = s^m`, `m = 2/(2−α)`, and near infinity
/// `u = t^{−p}`, `p = 2/(α−1)`, turn the integrand into one that vanishes
/// linearly at the origin of the new variable.
pub fn mechanism_kernel_check(
    d: f64,
    alpha: f64,
    w: f64,
    quadrature_nodes: usize,
) -> Result<KernelCheck> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} must lie strictly inside (1, 2)"
        )));
    }
    if !(w >= 0.0) || !w.is_finite() || !(d >= 0.0) || !d.is_finite() {
        return Err(Error::invalid("d and w must be nonnegative and finite"));
    }
    if quadrature_nodes == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    let closed_form = d * w.powf(alpha);
    let density = d * alpha * (alpha - 1.0) / statrs::function::gamma::gamma(2.0 - alpha);
    let integrand = |u: f64| compensated_exp(u * w) * density * u.powf(-1.0 - alpha);

    let split = 1.0 / w.max(1.0);
    let m = 2.0 / (2.0 - alpha);
    let p = 2.0 / (alpha - 1.0);
    let panels = quadrature_nodes.div_ceil(PANEL_POINTS);
    let rule = gauss_legendre(PANEL_POINTS);

    let near = composite(&rule, panels, 0.0, split.powf(1.0 / m), |s| {
        if s == 0.0 {
            0.0
        } else {
            m * s.powf(m - 1.0) * integrand(s.powf(m))
        }
    });
    let far = composite(&rule, panels, 0.0, split.powf(-1.0 / p), |t| {
        if t == 0.0 {
            0.0
        } else {
            p * t.powf(-p - 1.0) * integrand(t.powf(-p))
        }
    });
    let quadrature = near + far;
    Ok(KernelCheck {
        closed_form,
        quadrature,
        abs_error: (quadrature - closed_form).abs(),
    })
}

fn composite(rule: &[(f64, f64)], panels: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let mid = lo + 0.5 * h;
        total += rule
            .iter()
            .map(|(x, wt)| wt * f(mid + 0.5 * h * x))
            .sum::<f64>()
            * 0.5
            * h;
    }
    total
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn domain_geometry() {
        let d = Domain::Box(vec![
            Interval::new(0.0, 1.0, true, false).unwrap(),
            Interval::real_line(),
        ]);
        assert!(d.contains(&[0.0, 5.0]));
        assert!(!d.contains(&[1.0, 5.0]));
        assert!(d.contains_closure(&[1.0, 5.0]));
        assert!(!d.contains_closure(&[1.1, 5.0]));
        assert_eq!(d.distance_to_boundary(&[0.25, 3.0]), 0.25);
        assert_eq!(
            Domain::all(2).distance_to_boundary(&[1e9, 0.0]),
            f64::INFINITY
        );
        assert!(Interval::new(1.0, 1.0, true, true).is_err());
        assert!(!Domain::positive().contains(&[0.0]));
        assert!(Domain::nonnegative().contains(&[0.0]));
    }

    #[test]
    fn affine_examples() {
        let z = Generator::zero(2);
        assert_eq!(z.evaluate(0, 0, &[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        let one = Generator::make_affine(
            VectorField::Constant(dvector![1.0]),
            MatrixField::Constant(dmatrix![0.0]),
        )
        .unwrap();
        assert_eq!(one.evaluate(3, 1, &[42.0]).unwrap(), vec![1.0]);
        let swap = Generator::make_affine(
            VectorField::Constant(dvector![0.0, 0.0]),
            MatrixField::Constant(dmatrix![0.0, 1.0; 1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(swap.evaluate(0, 0, &[1.0, 2.0]).unwrap(), vec![2.0, 1.0]);
        assert!(Generator::make_affine(
            VectorField::Constant(dvector![0.0, 0.0]),
            MatrixField::Constant(dmatrix![1.0]),
        )
        .is_err());
        let k = Compact::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let l = lipschitz_on(&swap, &k, 0..4, 2).unwrap();
        assert!((l.value - 2f64.sqrt()).abs() < 1e-15);
        assert!(!l.estimated);
    }

    #[test]
    fn branching_examples() {
        let any = BranchingMechanism::new(ScalarField::Constant(0.7), ScalarField::Constant(1.3))
            .with_stable(ScalarField::Constant(2.0), 1.4)
            .with_kernel(vec![(0.5, 1.0), (3.0, 0.2)]);
        let g = Generator::make_branching(any).unwrap();
        assert_eq!(g.evaluate(0, 0, &[0.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            g.evaluate(0, 0, &[-0.1]),
            Err(Error::DomainExit { .. })
        ));

        let lin = BranchingMechanism::new(ScalarField::Constant(1.0), ScalarField::Constant(0.0));
        let g = Generator::make_branching(lin).unwrap();
        assert_eq!(g.evaluate(0, 0, &[3.0]).unwrap(), vec![3.0]);

        let stable =
            BranchingMechanism::new(ScalarField::Constant(0.0), ScalarField::Constant(0.0))
                .with_stable(ScalarField::Constant(1.0), 1.5);
        let g = Generator::make_branching(stable).unwrap();
        assert_eq!(g.evaluate(0, 0, &[4.0]).unwrap(), vec![8.0]);

        let bad = BranchingMechanism::new(ScalarField::Constant(0.0), ScalarField::Constant(0.0))
            .with_stable(ScalarField::Constant(1.0), 2.0);
        assert!(Generator::make_branching(bad).is_err());
        let neg = BranchingMechanism::new(ScalarField::Constant(-1.0), ScalarField::Constant(0.0));
        assert!(Generator::make_branching(neg).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let sq = Generator::make_power(vec![0.0, 0.0, 1.0], Domain::all(1)).unwrap();
        let k = Compact::interval(0.0, 2.0).unwrap();
        assert_eq!(lipschitz_on(&sq, &k, 0..3, 1).unwrap().value, 4.0);
        let c = Generator::make_power(vec![5.0], Domain::all(1)).unwrap();
        assert_eq!(lipschitz_on(&c, &k, 0..3, 1).unwrap().value, 0.0);

        // metadata-free drivers fall back to the lattice estimate
        let sq_custom = Generator::scalar(Domain::all(1), |_, _, w| w * w);
        let est = lipschitz_on(&sq_custom, &k, 0..2, 1).unwrap();
        assert!(est.estimated);
        // largest chord slope on the 17-point lattice: (2² − 1.875²)/0.125
        assert!((est.value - 3.875).abs() < 1e-12);
        let cst = Generator::scalar(Domain::all(1), |_, _, _| 1.0);
        assert_eq!(lipschitz_on(&cst, &k, 0..2, 1).unwrap().value, 0.0);

        let outside = Compact::interval(-1.0, 1.0).unwrap();
        let pos = Generator::make_power(vec![0.0, 1.0], Domain::positive()).unwrap();
        assert!(lipschitz_on(&pos, &outside, 0..1, 1).is_err());
    }

    #[test]
    fn closure_extension_clamps() {
        let f = Generator::make_power(vec![0.0, 0.0, 1.0], Domain::nonnegative()).unwrap();
        let ext = f.extended_to_closure();
        assert_eq!(ext.evaluate(0, 0, &[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(ext.evaluate(0, 0, &[2.0]).unwrap(), vec![4.0]);
        let k = Compact::interval(-5.0, 1.0).unwrap();
        assert_eq!(ext.lipschitz_at(0, 0, &k), Some(2.0));
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in [1, 2, 5, 16] {
            let rule = gauss_legendre(n);
            let wsum: f64 = rule.iter().map(|r| r.1).sum();
            assert!((wsum - 2.0).abs() < 1e-13, "n = {n}");
            let deg = 2 * n - 1;
            let integral: f64 = rule.iter().map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 {
                2.0 / deg as f64
            } else {
                0.0
            };
            assert!((integral - exact).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn kernel_check_examples() {
        let zero = mechanism_kernel_check(1.0, 1.5, 0.0, 64).unwrap();
        assert_eq!(zero.closed_form, 0.0);
        assert_eq!(zero.quadrature, 0.0);
        let one = mechanism_kernel_check(1.0, 1.5, 1.0, 64).unwrap();
        assert_eq!(one.closed_form, 1.0);
        assert!(one.abs_error < 1e-6, "{one:?}");
        let c = mechanism_kernel_check(2.0, 1.2, 3.0, 64).unwrap();
        assert!((c.closed_form - 2.0 * (1.2 * 3f64.ln()).exp()).abs() < 1e-14);
        assert!((c.closed_form - 7.474_385_637_693).abs() < 1e-9);
        assert!(c.abs_error < 1e-6, "{c:?}");
        assert!(mechanism_kernel_check(1.0, 2.0, 1.0, 64).is_err());
        assert!(mechanism_kernel_check(1.0, 1.0, 1.0, 64).is_err());
    }

    #[test]
    fn kernel_quadrature_improves_under_refinement() {
        for (alpha, w) in [(1.2, 4.0), (1.5, 0.5), (1.8, 1.0)] {
            let errs: Vec<f64> = [16, 32, 64]
                .iter()
                .map(|&n| mechanism_kernel_check(1.0, alpha, w, n).unwrap().abs_error)
                .collect();
            assert!(
                errs[1] <= errs[0] && errs[2] <= errs[1],
                "alpha = {alpha}, w = {w}: {errs:?}"
            );
        }
    }

    #[test]
    fn compensated_exp_matches_direct_form() {
        for x in [1e-8f64, 1e-3, 0.05, 0.099, 0.1, 0.5, 3.0] {
            let direct = (-x).exp() - 1.0 + x;
            assert!((compensated_exp(x) - direct).abs() <= 1e-15 + 1e-6 * direct.abs());
        }
    }
}
