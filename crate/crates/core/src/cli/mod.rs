//! Batch front end: `mie <subcommand> --config scenario.toml [overrides]`.
//!
//! Exit codes: 0 success or passed check, 1 failed check, 2 solver error,
//! 3 configuration or usage error.

pub mod files;
pub mod scenario;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feynman_kac::{coshsinh_example, exponential_solve_backward, fk_solve, FkMode};
use crate::generator::mechanism_kernel_check;
use crate::solver::{
    epsilon_stepper, march_with_blowup_monitor, picard_solve, residual, solve_1d_global,
    SolveReport,
};
use crate::verify::{self, CheckResult, Tolerance};

use files::{load_field, save_field, write_json, write_trace_csv};
use scenario::{CheckerName, FkModeName, GeneratorSpec, Scenario, SolveMethod};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mie",
    version,
    about = "Markovian integral equations on finite chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the terminal-value problem and write the field and a report.
    Solve(Overrides),
    /// March backward until the solution approaches the boundary or blows up.
    Blowup(Overrides),
    /// Solve a linear problem through the Feynman-Kac representation.
    Fk(Overrides),
    /// Run a named checker against result files.
    Verify(Overrides),
    /// Check the stable-kernel identity of a branching mechanism.
    Mechanism(Overrides),
    /// Closed-form cosh/sinh system against the matrix recursion.
    Coshsinh(Overrides),
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<FkModeName>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, s: &mut Scenario) {
        if let Some(t) = self.tol {
            s.solver.tol = t;
            if let Some(m) = s.mechanism.as_mut() {
                m.tol = t;
            }
            if let Some(v) = s.verify.as_mut() {
                v.abs_tol = Some(t);
            }
        }
        if let Some(m) = self.max_iter {
            s.solver.max_iter = m;
        }
        if let Some(t) = self.threshold {
            s.solver.threshold = t;
        }
        if let Some(m) = self.mode {
            s.solver.mode = m;
        }
        if let Some(d) = &self.out_dir {
            s.output.dir = d.clone();
        }
        if let Some(seed) = self.seed {
            s.solver.seed = seed;
        }
    }
}

/// Output locations for one run.
struct Sink {
    dir: PathBuf,
    stem: String,
}

impl Sink {
    fn path(&self, suffix: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.{ext}", self.stem))
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::DomainExit { .. } | Error::Precondition(_) | Error::Capacity { .. } => EXIT_SOLVER,
    }
}

/// Caps rayon's global pool at `MIE_THREADS` workers when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MIE_THREADS") else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            Error::Config(format!("MIE_THREADS={raw:?} is not a positive integer"))
        })?;
    // a pool built earlier in this process stays in place
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mie: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    configure_threads()?;
    let (name, ov) = match &cmd {
        Command::Solve(o) => ("solve", o),
        Command::Blowup(o) => ("blowup", o),
        Command::Fk(o) => ("fk", o),
        Command::Verify(o) => ("verify", o),
        Command::Mechanism(o) => ("mechanism", o),
        Command::Coshsinh(o) => ("coshsinh", o),
    };
    let mut s = Scenario::load(&ov.config)?;
    ov.apply(&mut s);
    let sink = Sink {
        dir: s.output.dir.clone(),
        stem: s.output.name.clone().unwrap_or_else(|| name.to_string()),
    };
    std::fs::create_dir_all(&sink.dir)
        .map_err(|e| Error::Io(format!("{}: {e}", sink.dir.display())))?;
    match cmd {
        Command::Solve(_) => solve(&s, &sink),
        Command::Blowup(_) => blowup(&s, &sink),
        Command::Fk(_) => fk(&s, &sink),
        Command::Verify(_) => verify_cmd(&s, &sink),
        Command::Mechanism(_) => mechanism(&s, &sink),
        Command::Coshsinh(_) => coshsinh(&s, &sink),
    }
}

fn solve(s: &Scenario, sink: &Sink) -> Result<i32> {
    let inst = s.instance()?;
    let opts = s.solver.picard();
    let (field, report) = match s.solver.method {
        SolveMethod::Picard => picard_solve(
            &inst.chain,
            &inst.grid,
            &inst.generator,
            inst.g.view(),
            &opts,
        )?,
        SolveMethod::Global1d => solve_1d_global(
            &inst.chain,
            &inst.grid,
            &inst.generator,
            inst.g.view(),
            s.solver.clip_depth,
            &opts,
        )?,
        SolveMethod::Stepper => {
            let n = inst.grid.steps();
            let step = s.solver.macro_steps.max(1);
            let mut marks: Vec<usize> = (0..n).step_by(step).collect();
            marks.push(n);
            let field = epsilon_stepper(
                &inst.chain,
                &inst.grid,
                &inst.generator,
                inst.g.view(),
                &marks,
            )?;
            let defect = residual(
                &inst.chain,
                &inst.grid,
                &inst.generator,
                &field,
                opts.evaluation,
            )?
            .iter()
            .copied()
            .fold(0.0, f64::max);
            let report = SolveReport {
                converged: true,
                iterations: 1,
                defect,
                sup_norm: field.sup_norm(),
                damping: 1.0,
                ..Default::default()
            };
            (field, report)
        }
    };
    save_field(&sink.path("", "csv"), &field)?;
    write_json(&sink.path("_report", "json"), &report)?;
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_SOLVER
    })
}

fn blowup(s: &Scenario, sink: &Sink) -> Result<i32> {
    let inst = s.instance()?;
    let (field, report) = march_with_blowup_monitor(
        &inst.chain,
        &inst.grid,
        &inst.generator,
        inst.g.view(),
        s.solver.threshold,
    )?;
    let trace = match &report.blowup {
        Some(b) => b.trace.clone(),
        None => crate::solver::blowup_trace(&inst.generator, &field),
    };
    save_field(&sink.path("", "csv"), &field)?;
    let file = std::fs::File::create(sink.path("_trace", "csv"))?;
    write_trace_csv(std::io::BufWriter::new(file), &trace)?;
    write_json(&sink.path("_report", "json"), &report)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FkReport {
    #[serde(flatten)]
    mode: FkMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    tail_bound: Option<f64>,
}

fn fk(s: &Scenario, sink: &Sink) -> Result<i32> {
    let grid = s.grid()?;
    let chain = s.chain()?;
    let g = s.terminal()?;
    let (a, b) = s
        .generator_spec()?
        .affine_parts()?
        .ok_or_else(|| Error::Config("fk needs a linear generator (affine or coshsinh)".into()))?;
    let mode = s.solver.fk_mode();
    let sol = fk_solve(&chain, &grid, &a, &b, g.view(), mode)?;
    save_field(&sink.path("", "csv"), &sol.field)?;
    if let Some(err) = &sol.stderr {
        save_field(&sink.path("_stderr", "csv"), err)?;
    }
    write_json(
        &sink.path("_report", "json"),
        &FkReport {
            mode,
            tail_bound: sol.tail_bound,
        },
    )?;
    Ok(EXIT_OK)
}

fn need_path<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("verify: `{what}` is required for this checker")))
}

fn verify_cmd(s: &Scenario, sink: &Sink) -> Result<i32> {
    let spec = s
        .verify
        .as_ref()
        .ok_or_else(|| Error::Config("missing [verify] section".into()))?;
    let defaults = Tolerance::default();
    let tol = Tolerance {
        abs: spec.abs_tol.unwrap_or(defaults.abs),
        rel: spec.rel_tol.unwrap_or(defaults.rel),
    };
    let (a, b, nbar) = (spec.a.to_field(), spec.b.to_field(), spec.nbar.to_field());
    let result: CheckResult = match spec.checker {
        CheckerName::Sigma => {
            let grid = s.grid()?;
            let states = s.chain()?.state_count();
            let (_, bf) = s
                .generator_spec()?
                .affine_parts()?
                .ok_or_else(|| Error::Config("sigma needs a linear generator".into()))?;
            verify::check_sigma(&grid, &bf, states, spec.samples, s.solver.seed, tol)?
        }
        CheckerName::Gronwall => {
            let grid = s.grid()?;
            let chain = s.chain()?;
            let v = load_field(need_path(&spec.field, "field")?, &grid)?;
            let h = spec
                .h
                .clone()
                .ok_or_else(|| Error::Config("verify: gronwall needs `h`".into()))?;
            verify::check_gronwall(&chain, &grid, &v, &h, &a, &b, tol)?
        }
        checker => {
            let inst = s.instance()?;
            let u = load_field(need_path(&spec.field, "field")?, &inst.grid)?;
            let g: Vec<Vec<f64>> = inst.g.rows().into_iter().map(|r| r.to_vec()).collect();
            let g1: Vec<f64> = inst.g.column(0).to_vec();
            let (chain, grid, f) = (&inst.chain, &inst.grid, &inst.generator);
            match checker {
                CheckerName::Growth => verify::check_growth(chain, grid, f, &u, &g, &a, &b, tol)?,
                CheckerName::OneSidedGrowth => {
                    verify::check_one_sided_growth(chain, grid, f, &u, &g1, &a, &b, tol)?
                }
                CheckerName::BoundaryLower => {
                    verify::check_boundary_lower(chain, grid, f, &u, &g1, &nbar, tol)?
                }
                CheckerName::Stability => {
                    let v = load_field(need_path(&spec.other_field, "other_field")?, grid)?;
                    verify::check_stability(chain, grid, f, &u, &v, tol)?
                }
                CheckerName::Comparison => {
                    let other = Scenario::load(need_path(&spec.other, "other")?)?.instance()?;
                    if other.grid != inst.grid || other.chain != inst.chain {
                        return Err(Error::Config(
                            "comparison: both scenarios must share grid and chain".into(),
                        ));
                    }
                    let v = load_field(need_path(&spec.other_field, "other_field")?, grid)?;
                    let gt: Vec<f64> = other.g.column(0).to_vec();
                    verify::check_comparison(
                        chain,
                        grid,
                        f,
                        &g1,
                        &u,
                        &other.generator,
                        &gt,
                        &v,
                        tol,
                    )?
                }
                CheckerName::Gronwall | CheckerName::Sigma => unreachable!(),
            }
        }
    };
    write_json(&sink.path("", "json"), &result)?;
    Ok(if result.passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

#[derive(Serialize)]
struct KernelRow {
    d: f64,
    alpha: f64,
    w: f64,
    closed_form: f64,
    quadrature: f64,
    abs_error: f64,
}

#[derive(Serialize)]
struct MechanismReport {
    tol: f64,
    passed: bool,
    checks: Vec<KernelRow>,
}

fn mechanism(s: &Scenario, sink: &Sink) -> Result<i32> {
    let spec = s
        .mechanism
        .as_ref()
        .ok_or_else(|| Error::Config("missing [mechanism] section".into()))?;
    let mut checks = Vec::new();
    for &d in &spec.d {
        for &alpha in &spec.alpha {
            for &w in &spec.w {
                let c = mechanism_kernel_check(d, alpha, w, spec.nodes)?;
                checks.push(KernelRow {
                    d,
                    alpha,
                    w,
                    closed_form: c.closed_form,
                    quadrature: c.quadrature,
                    abs_error: c.abs_error,
                });
            }
        }
    }
    let passed = checks.iter().all(|c| c.abs_error <= spec.tol);
    write_json(
        &sink.path("", "json"),
        &MechanismReport {
            tol: spec.tol,
            passed,
            checks,
        },
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[derive(Serialize)]
struct AgreementReport {
    max_abs_difference: f64,
    tol: f64,
    agrees: bool,
}

fn coshsinh(s: &Scenario, sink: &Sink) -> Result<i32> {
    let grid = s.grid()?;
    let chain = s.chain()?;
    let g = s.terminal()?;
    let GeneratorSpec::Coshsinh { c, delta, eps } = s.generator_spec()? else {
        return Err(Error::Config(
            "coshsinh needs generator kind \"coshsinh\"".into(),
        ));
    };
    let field = coshsinh_example(&chain, &grid, &c.to_field(), *delta, *eps, g.view())?;
    let (a, b) = s.generator_spec()?.affine_parts()?.unwrap();
    let matrix = exponential_solve_backward(&chain, &grid, &a, &b, g.view())?;
    let diff = field.sup_distance(&matrix);
    save_field(&sink.path("", "csv"), &field)?;
    let tol = s.solver.tol.max(1e-12);
    let agrees = diff <= tol;
    write_json(
        &sink.path("_report", "json"),
        &AgreementReport {
            max_abs_difference: diff,
            tol,
            agrees,
        },
    )?;
    Ok(if agrees { EXIT_OK } else { EXIT_CHECK_FAILED })
}
