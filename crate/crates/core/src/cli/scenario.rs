//! TOML scenario schema.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::feynman_kac::FkMode;
use crate::generator::{
    BranchingMechanism, Domain, Generator, Interval, MatrixField, NodeStateField, ScalarField,
    VectorField,
};
use crate::markov::{ChainSpec, MarkovChainModel};
use crate::solver::{DriverEvaluation, PicardOptions};
use crate::timegrid::{GridSpec, TimeGrid};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: Option<GridSpec>,
    pub chain: Option<ChainSpec>,
    pub generator: Option<GeneratorSpec>,
    pub terminal: Option<TerminalSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
    pub verify: Option<VerifySpec>,
    pub mechanism: Option<MechanismSpec>,
}

/// A scalar per step and state: a constant, one value per state, or a
/// `steps × states` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Constant(f64),
    PerState(Vec<f64>),
    PerNode(Vec<Vec<f64>>),
}

impl ScalarSpec {
    pub fn to_field(&self) -> ScalarField {
        match self {
            ScalarSpec::Constant(v) => NodeStateField::Constant(*v),
            ScalarSpec::PerState(v) => NodeStateField::PerState(v.clone()),
            ScalarSpec::PerNode(v) => NodeStateField::PerNode(v.clone()),
        }
    }
}

impl Default for ScalarSpec {
    fn default() -> Self {
        ScalarSpec::Constant(0.0)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Constant(Vec<f64>),
    PerState(Vec<Vec<f64>>),
    PerNode(Vec<Vec<Vec<f64>>>),
}

impl VectorSpec {
    fn to_field(&self) -> VectorField {
        let v = |x: &Vec<f64>| DVector::from_vec(x.clone());
        match self {
            VectorSpec::Constant(x) => NodeStateField::Constant(v(x)),
            VectorSpec::PerState(xs) => NodeStateField::PerState(xs.iter().map(v).collect()),
            VectorSpec::PerNode(xs) => {
                NodeStateField::PerNode(xs.iter().map(|r| r.iter().map(v).collect()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Constant(Vec<Vec<f64>>),
    PerState(Vec<Vec<Vec<f64>>>),
    PerNode(Vec<Vec<Vec<Vec<f64>>>>),
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config("matrices must be square and nonempty".into()));
    }
    Ok(DMatrix::from_row_iterator(
        n,
        n,
        rows.iter().flatten().copied(),
    ))
}

impl MatrixSpec {
    fn to_field(&self) -> Result<MatrixField> {
        Ok(match self {
            MatrixSpec::Constant(m) => NodeStateField::Constant(to_matrix(m)?),
            MatrixSpec::PerState(ms) => {
                NodeStateField::PerState(ms.iter().map(|m| to_matrix(m)).collect::<Result<_>>()?)
            }
            MatrixSpec::PerNode(ms) => NodeStateField::PerNode(
                ms.iter()
                    .map(|r| r.iter().map(|m| to_matrix(m)).collect::<Result<_>>())
                    .collect::<Result<_>>()?,
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedDomain {
    All,
    Nonnegative,
    Positive,
}

/// Missing endpoints are infinite.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Named(NamedDomain),
    Interval {
        lower: Option<f64>,
        upper: Option<f64>,
        #[serde(default)]
        lower_closed: bool,
        #[serde(default)]
        upper_closed: bool,
    },
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec::Named(NamedDomain::All)
    }
}

impl DomainSpec {
    fn build(&self) -> Result<Domain> {
        Ok(match self {
            DomainSpec::Named(NamedDomain::All) => Domain::all(1),
            DomainSpec::Named(NamedDomain::Nonnegative) => Domain::nonnegative(),
            DomainSpec::Named(NamedDomain::Positive) => Domain::positive(),
            DomainSpec::Interval {
                lower,
                upper,
                lower_closed,
                upper_closed,
            } => Domain::interval(Interval::new(
                lower.unwrap_or(f64::NEG_INFINITY),
                upper.unwrap_or(f64::INFINITY),
                *lower_closed && lower.is_some(),
                *upper_closed && upper.is_some(),
            )?),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableSpec {
    pub d: ScalarSpec,
    pub alpha: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    /// `f ≡ 0` in dimension `dim` (default: the terminal data's).
    Zero { dim: Option<usize> },
    /// `f(w) = Σ c_i wⁱ` on a one-dimensional domain.
    Power {
        coeffs: Vec<f64>,
        #[serde(default)]
        domain: DomainSpec,
    },
    /// `f(t, x, w) = a(t, x) + b(t, x) w` on `ℝᵏ`.
    Affine { a: VectorSpec, b: MatrixSpec },
    Branching {
        #[serde(default)]
        b: ScalarSpec,
        #[serde(default)]
        c: ScalarSpec,
        #[serde(default)]
        stable: Vec<StableSpec>,
        /// `[u, mass]` atoms of the jump kernel.
        #[serde(default)]
        kernel: Vec<[f64; 2]>,
    },
    /// `f(t, x, w) = c(t, x) [[0, δ], [ε, 0]] w`.
    Coshsinh { c: ScalarSpec, delta: f64, eps: f64 },
}

impl GeneratorSpec {
    pub fn build(&self, default_dim: usize) -> Result<Generator> {
        match self {
            GeneratorSpec::Zero { dim } => Ok(Generator::zero(dim.unwrap_or(default_dim))),
            GeneratorSpec::Power { coeffs, domain } => {
                Generator::make_power(coeffs.clone(), domain.build()?)
            }
            GeneratorSpec::Affine { .. } | GeneratorSpec::Coshsinh { .. } => {
                let (a, b) = self
                    .affine_parts()?
                    .expect("linear kinds have affine parts");
                Generator::make_affine(a, b)
            }
            GeneratorSpec::Branching {
                b,
                c,
                stable,
                kernel,
            } => {
                let mut m = BranchingMechanism::new(b.to_field(), c.to_field());
                for s in stable {
                    m = m.with_stable(s.d.to_field(), s.alpha);
                }
                if !kernel.is_empty() {
                    m = m.with_kernel(kernel.iter().map(|[u, w]| (*u, *w)).collect());
                }
                Generator::make_branching(m)
            }
        }
    }

    /// `(a, b)` of a linear driver.
    pub fn affine_parts(&self) -> Result<Option<(VectorField, MatrixField)>> {
        Ok(match self {
            GeneratorSpec::Affine { a, b } => Some((a.to_field(), b.to_field()?)),
            GeneratorSpec::Coshsinh { c, delta, eps } => Some((
                NodeStateField::Constant(DVector::zeros(2)),
                crate::feynman_kac::coshsinh_matrix(&c.to_field(), *delta, *eps),
            )),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalFunction {
    /// `g(x) = offset` in every component.
    Constant,
    /// `g(x) = offset + slope·x` in every component.
    Linear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TerminalValues {
    Scalar(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub values: Option<TerminalValues>,
    pub function: Option<TerminalFunction>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

impl TerminalSpec {
    pub fn build(&self, states: usize) -> Result<Array2<f64>> {
        match (&self.values, self.function) {
            (Some(TerminalValues::Scalar(v)), None) => {
                if v.len() != states {
                    return Err(Error::Config(format!(
                        "terminal values: {} entries for {states} states",
                        v.len()
                    )));
                }
                Ok(Array2::from_shape_vec((states, 1), v.clone()).unwrap())
            }
            (Some(TerminalValues::Vector(v)), None) => {
                let k = v.first().map_or(0, |r| r.len());
                if v.len() != states || k == 0 || v.iter().any(|r| r.len() != k) {
                    return Err(Error::Config(format!(
                        "terminal values must be {states} vectors of one nonzero length"
                    )));
                }
                Ok(Array2::from_shape_fn((states, k), |(x, i)| v[x][i]))
            }
            (None, Some(f)) => {
                let slope = if f == TerminalFunction::Linear {
                    self.slope
                } else {
                    0.0
                };
                Ok(Array2::from_shape_fn((states, self.dim), |(x, _)| {
                    self.offset + slope * x as f64
                }))
            }
            _ => Err(Error::Config(
                "terminal section needs exactly one of `values` and `function`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    /// Global Picard iteration.
    #[default]
    Picard,
    /// Clipped terminal data with the extended driver (`k = 1`, interval domain).
    Global1d,
    /// Explicit macro-interval stepping.
    Stepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FkModeName {
    #[default]
    Product,
    Series,
    Exp,
    Mc,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub method: SolveMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub evaluation: DriverEvaluation,
    pub clip_depth: u32,
    /// Spacing of macro nodes for the stepper, in grid steps.
    pub macro_steps: usize,
    pub threshold: f64,
    pub mode: FkModeName,
    pub order: usize,
    pub paths: usize,
    pub seed: u64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let p = PicardOptions::default();
        SolverSpec {
            method: SolveMethod::Picard,
            tol: p.tol,
            max_iter: p.max_iter,
            damping: p.damping,
            evaluation: p.evaluation,
            clip_depth: 20,
            macro_steps: 1,
            threshold: 1e-2,
            mode: FkModeName::Product,
            order: 8,
            paths: 1000,
            seed: 0,
        }
    }
}

impl SolverSpec {
    pub fn picard(&self) -> PicardOptions {
        PicardOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            damping: self.damping,
            evaluation: self.evaluation,
        }
    }

    pub fn fk_mode(&self) -> FkMode {
        match self.mode {
            FkModeName::Product => FkMode::Product,
            FkModeName::Series => FkMode::Series { order: self.order },
            FkModeName::Exp => FkMode::Exp,
            FkModeName::Mc => FkMode::Mc {
                paths: self.paths,
                seed: self.seed,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// File stem; defaults to the subcommand name.
    pub name: Option<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            name: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckerName {
    Gronwall,
    Growth,
    OneSidedGrowth,
    BoundaryLower,
    Comparison,
    Stability,
    Sigma,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub checker: CheckerName,
    /// CSV written by `solve` (not needed for `sigma`). Relative paths are
    /// resolved against the scenario file's directory.
    pub field: Option<PathBuf>,
    /// Second CSV for `comparison` and `stability`.
    pub other_field: Option<PathBuf>,
    /// Scenario describing `(f̃, g̃)` for `comparison`.
    pub other: Option<PathBuf>,
    #[serde(default)]
    pub a: ScalarSpec,
    #[serde(default)]
    pub b: ScalarSpec,
    #[serde(default)]
    pub nbar: ScalarSpec,
    pub h: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
}

fn default_samples() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub d: Vec<f64>,
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_kernel_tol")]
    pub tol: f64,
}

fn default_nodes() -> usize {
    256
}

fn default_kernel_tol() -> f64 {
    1e-6
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a scenario file. Relative paths in `[verify]` are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut s = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(v) = s.verify.as_mut() {
            for p in [&mut v.field, &mut v.other_field, &mut v.other]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(s)
    }

    fn section<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
        v.as_ref()
            .ok_or_else(|| Error::Config(format!("missing [{name}] section")))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Self::section(&self.grid, "grid")?
            .build()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn chain(&self) -> Result<MarkovChainModel> {
        let steps = Self::section(&self.grid, "grid")?.steps;
        Self::section(&self.chain, "chain")?.build(steps)
    }

    pub fn terminal(&self) -> Result<Array2<f64>> {
        let states = Self::section(&self.chain, "chain")?.states;
        Self::section(&self.terminal, "terminal")?.build(states)
    }

    pub fn generator_spec(&self) -> Result<&GeneratorSpec> {
        Self::section(&self.generator, "generator")
    }

    /// Grid, chain, terminal data and generator with matching dimensions.
    pub fn instance(&self) -> Result<Instance> {
        let grid = self.grid()?;
        let chain = self.chain()?;
        let g = self.terminal()?;
        let generator = self
            .generator_spec()?
            .build(g.ncols())
            .map_err(|e| Error::Config(e.to_string()))?;
        if generator.dim() != g.ncols() {
            return Err(Error::Config(format!(
                "generator dimension {} does not match terminal dimension {}",
                generator.dim(),
                g.ncols()
            )));
        }
        Ok(Instance {
            grid,
            chain,
            g,
            generator,
        })
    }
}

pub struct Instance {
    pub grid: TimeGrid,
    pub chain: MarkovChainModel,
    pub g: Array2<f64>,
    pub generator: Generator,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scenario_parses() {
        let s = Scenario::parse(
            r#"
            [grid]
            T = 1.0
            steps = 10
            [chain]
            states = 2
            transitions = [[0.5, 0.5], [0.1, 0.9]]
            [generator]
            kind = "power"
            coeffs = [0.0, 0.0, -1.0]
            domain = { lower = 0.0, lower_closed = true }
            [terminal]
            values = [0.5, 0.25]
            [solver]
            method = "global1d"
            tol = 1e-9
            "#,
        )
        .unwrap();
        let inst = s.instance().unwrap();
        assert_eq!(inst.g.dim(), (2, 1));
        assert_eq!(inst.generator.domain().intervals()[0].lower, 0.0);
        assert_eq!(s.solver.method, SolveMethod::Global1d);
        assert_eq!(s.solver.clip_depth, 20);
    }

    #[test]
    fn generator_kinds() {
        for (text, k) in [
            ("kind = \"zero\"", 1),
            (
                "kind = \"affine\"\na = [0.1, 0.0]\nb = [[1.0, 0.0], [0.0, 1.0]]",
                2,
            ),
            (
                "kind = \"branching\"\nc = 1.0\nstable = [{ d = 1.0, alpha = 1.5 }]",
                1,
            ),
            ("kind = \"coshsinh\"\nc = 1.0\ndelta = 1.0\neps = -1.0", 2),
        ] {
            let spec: GeneratorSpec = toml::from_str(text).unwrap();
            assert_eq!(spec.build(1).unwrap().dim(), k, "{text}");
        }
        assert!(toml::from_str::<GeneratorSpec>("kind = \"cubic\"").is_err());
    }

    #[test]
    fn terminal_forms() {
        let t: TerminalSpec =
            toml::from_str("function = \"linear\"\noffset = 1.0\nslope = 0.5").unwrap();
        assert_eq!(t.build(3).unwrap().column(0).to_vec(), vec![1.0, 1.5, 2.0]);
        let t: TerminalSpec = toml::from_str("values = [[1.0, 0.0], [0.0, 1.0]]").unwrap();
        assert_eq!(t.build(2).unwrap().dim(), (2, 2));
        assert!(t.build(3).is_err());
        let t: TerminalSpec = toml::from_str("").unwrap();
        assert!(t.build(1).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Scenario::parse("[grid]\nT = 1.0\nsteps = 2\nbogus = 1").is_err());
        assert!(Scenario::parse("[solver]\ntoll = 1e-3").is_err());
    }
}
