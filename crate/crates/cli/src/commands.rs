use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use levelset::oracle::{SyntheticMode, SyntheticOracle};
use levelset::problems::{
    generate_instance, solve_bpdn, solve_elastic_net, solve_glm, solve_lp, solve_robust_sparse,
    GlmTarget, InstanceSpec,
};
use levelset::rootfind::{iteration_bound, solve as root_solve};
use levelset::{
    ConstraintSet, FwStepRule, Glm, GlmFamily, InnerSolver, Method, MisfitKind, RootConfig,
    RootStatus, Solution, SolveOptions, SolveTrace,
};
use serde::Serialize;
use serde_json::json;

use crate::{emit_trace, load_dense, load_vector, read_trace, thread_cap, CliError, TraceFormat};

#[derive(Debug, Parser)]
#[command(
    name = "levelset",
    version,
    about = "Level-set root finding for convex optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct OutputArgs {
    /// Solution JSON; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-outer-iteration trace file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: TraceFormat,
    /// Keep wall-clock timings in the trace (breaks byte-identical reruns).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.3)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "newton")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "apg")]
    pub inner: InnerArg,
    #[arg(long, default_value_t = 50_000)]
    pub max_inner: usize,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions::new(self.eps, self.alpha)
            .with_method(self.method.into())
            .with_inner(self.inner.into())
            .with_max_inner(self.max_inner)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Secant,
    Newton,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Secant => Method::Secant,
            MethodArg::Newton => Method::Newton,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InnerArg {
    Apg,
    Fw,
    FwCanonical,
}

impl From<InnerArg> for InnerSolver {
    fn from(i: InnerArg) -> Self {
        match i {
            InnerArg::Apg => InnerSolver::Apg,
            InnerArg::Fw => InnerSolver::FrankWolfe(FwStepRule::ExactLineSearch),
            InnerArg::FwCanonical => InnerSolver::FrankWolfe(FwStepRule::Canonical),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DemoFunction {
    /// (τ − 1)² − 10
    F1,
    /// τ² for τ < 0, zero after
    F2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleArg {
    Symmetric,
    Subgradient,
    Steepest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Huber,
    Poisson,
    Bernoulli,
    Gamma,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    PaperExample,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Root finding on a one-dimensional test function with synthetic bounds.
    RootfindDemo {
        #[arg(long, value_enum, default_value = "f1")]
        f: DemoFunction,
        #[arg(long, default_value_t = 1.3)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
        #[arg(long, value_enum, default_value = "symmetric")]
        oracle: OracleArg,
        /// Defaults to secant for symmetric bounds and Newton otherwise.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long, default_value_t = -9.0, allow_hyphen_values = true)]
        tau0: f64,
        #[arg(long, default_value_t = -8.0, allow_hyphen_values = true)]
        tau1: f64,
        #[arg(long, default_value_t = 200)]
        max_outer: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// minimize ‖x‖₁ subject to ‖Ax − b‖₂ ≤ σ
    Bpdn {
        #[arg(long = "A")]
        a: PathBuf,
        #[arg(long = "b")]
        b: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// minimize ⟨c, x⟩ subject to Ax = b, x ≥ 0
    Lp {
        #[arg(long = "A")]
        a: PathBuf,
        #[arg(long = "b")]
        b: PathBuf,
        #[arg(long = "c")]
        c: PathBuf,
        /// Dual point with c − Aᵀŷ > 0; zero when absent.
        #[arg(long = "y-hat")]
        y_hat: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// ℓ₁-constrained fit with a GLM likelihood as the misfit.
    Glm {
        #[arg(long = "A")]
        a: PathBuf,
        #[arg(long = "b")]
        b: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        dispersion: f64,
        #[arg(long, conflicts_with = "eta", allow_hyphen_values = true)]
        sigma: Option<f64>,
        /// σ = L(b; 0)/η
        #[arg(long)]
        eta: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Sparse recovery under a quantile-Huber misfit.
    Robust {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long = "A", required_unless_present = "preset")]
        a: Option<PathBuf>,
        #[arg(long = "b", required_unless_present = "preset")]
        b: Option<PathBuf>,
        #[arg(long, required_unless_present = "preset")]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        kappa: f64,
        #[arg(long, default_value_t = 0.9)]
        q: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Elastic-net regularizer under a Huber misfit.
    ElasticNet {
        #[arg(long = "A")]
        a: PathBuf,
        #[arg(long = "b")]
        b: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long = "alpha-en")]
        alpha_en: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Summarize a trace file written by another subcommand.
    TraceReport {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs one solve and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Err(e) = thread_cap(std::env::var("LEVELSET_THREADS").ok().as_deref()) {
        eprintln!("error: {e}");
        return 1;
    }
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn exit_code(status: RootStatus) -> i32 {
    match status {
        RootStatus::Converged => 0,
        _ => 2,
    }
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Trace(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            source: e,
        }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io {
                path: "<stdout>".into(),
                source: e,
            }),
    }
}

fn finish(out: &OutputArgs, trace: &SolveTrace, value: serde_json::Value) -> Result<(), CliError> {
    if let Some(path) = &out.trace {
        let trace = if out.timing {
            trace.clone()
        } else {
            trace.clone().without_timing()
        };
        emit_trace(&trace, out.format, path)?;
    }
    write_json(out.output.as_deref(), &value)
}

#[derive(Serialize)]
struct SolutionReport<'a> {
    status: RootStatus,
    tau: f64,
    objective: f64,
    misfit: f64,
    outer_iterations: usize,
    inner_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a str>,
    x: &'a [f64],
}

fn report(sol: &Solution) -> serde_json::Value {
    serde_json::to_value(SolutionReport {
        status: sol.status,
        tau: sol.tau_star_estimate,
        objective: sol.objective,
        misfit: sol.misfit_at_x,
        outer_iterations: sol.outer_iterations,
        inner_iterations: sol.inner_iterations,
        failure: sol.failure.as_deref(),
        x: &sol.x,
    })
    .expect("plain data serializes")
}

fn merge(mut base: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

type Exact = fn(f64) -> (f64, f64);

fn demo_function(f: DemoFunction) -> (Exact, f64) {
    fn f1(t: f64) -> (f64, f64) {
        ((t - 1.0).powi(2) - 10.0, 2.0 * (t - 1.0))
    }
    fn f2(t: f64) -> (f64, f64) {
        if t < 0.0 {
            (t * t, 2.0 * t)
        } else {
            (0.0, 0.0)
        }
    }
    match f {
        DemoFunction::F1 => (f1, 1.0 - 10f64.sqrt()),
        DemoFunction::F2 => (f2, 0.0),
    }
}

fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::RootfindDemo {
            f,
            alpha,
            eps,
            oracle,
            method,
            tau0,
            tau1,
            max_outer,
            out,
        } => {
            let (func, tau_star) = demo_function(f);
            let mode = match oracle {
                OracleArg::Symmetric => SyntheticMode::Symmetric,
                OracleArg::Subgradient => SyntheticMode::Subgradient,
                OracleArg::Steepest => SyntheticMode::Steepest,
            };
            let method: Method =
                method
                    .map(Into::into)
                    .unwrap_or(if matches!(oracle, OracleArg::Symmetric) {
                        Method::Secant
                    } else {
                        Method::Newton
                    });
            let usage = |e: levelset::rootfind::RootError| CliError::Usage(e.to_string());
            let mut cfg = RootConfig::new(eps, alpha, tau0)
                .map_err(usage)?
                .with_max_outer(max_outer)
                .map_err(usage)?;
            if method == Method::Secant {
                cfg = cfg.with_tau1(tau1).map_err(usage)?;
            }
            let mut o = SyntheticOracle::new(func, alpha, mode);
            let res =
                root_solve(method, &mut o, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            let recs = &res.trace.records;
            let c = match method {
                Method::Newton => {
                    let r0 = &recs[0];
                    (r0.slope.unwrap_or(0.0).abs() * (tau_star - r0.tau)).max(r0.lower)
                }
                Method::Secant if recs.len() > 1 => {
                    let (r0, r1) = (&recs[0], &recs[1]);
                    let s1 = (r1.lower - r0.upper) / (r1.tau - r0.tau);
                    (s1.abs() * (tau_star - r1.tau)).max(r1.lower)
                }
                Method::Secant => recs[0].lower,
            };
            let bound = if c > 0.0 && alpha > 1.0 && alpha < 2.0 {
                iteration_bound(c, eps, alpha, method).ok()
            } else {
                None
            };
            let steps: Vec<_> = recs
                .iter()
                .map(|r| json!({"k": r.k, "tau": r.tau, "lower": r.lower, "upper": r.upper}))
                .collect();
            let value = json!({
                "method": method,
                "status": res.status,
                "iterations": res.iterations,
                "bound": bound,
                "C": c,
                "tau": res.tau,
                "tau_star": tau_star,
                "steps": steps,
            });
            finish(&out, &res.trace, value)?;
            Ok(exit_code(res.status))
        }
        Command::Bpdn {
            a,
            b,
            sigma,
            solver,
            out,
        } => {
            let a = load_dense(&a)?;
            let b = load_vector(&b)?;
            let sol = solve_bpdn(&a, &b, sigma, &solver.options())?;
            finish(&out, &sol.trace, report(&sol))?;
            Ok(exit_code(sol.status))
        }
        Command::Lp {
            a,
            b,
            c,
            y_hat,
            solver,
            out,
        } => {
            let a = load_dense(&a)?;
            let b = load_vector(&b)?;
            let c = load_vector(&c)?;
            let y_hat = match y_hat {
                Some(p) => load_vector(&p)?,
                None => vec![0.0; a.rows()],
            };
            let lp = solve_lp(&a, &b, &c, &y_hat, &solver.options())?;
            let value = merge(
                report(&lp.solution),
                json!({"lp_objective": lp.objective, "guarantee": lp.guarantee}),
            );
            finish(&out, &lp.solution.trace, value)?;
            Ok(exit_code(lp.solution.status))
        }
        Command::Glm {
            a,
            b,
            family,
            kappa,
            dispersion,
            sigma,
            eta,
            solver,
            out,
        } => {
            let a = load_dense(&a)?;
            let b = load_vector(&b)?;
            let family = match family {
                FamilyArg::Gaussian => GlmFamily::Gaussian,
                FamilyArg::Huber => GlmFamily::Huber { kappa },
                FamilyArg::Poisson => GlmFamily::Poisson,
                FamilyArg::Bernoulli => GlmFamily::Bernoulli,
                FamilyArg::Gamma => GlmFamily::Gamma,
            };
            let target = match (sigma, eta) {
                (Some(s), None) => GlmTarget::Sigma(s),
                (None, Some(e)) => GlmTarget::Eta(e),
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --sigma or --eta".into(),
                    ))
                }
            };
            let glm = Glm::new(family).with_dispersion(dispersion);
            let sol = solve_glm(
                glm,
                &a,
                &b,
                target,
                ConstraintSet::L1Ball,
                &solver.options(),
            )?;
            finish(&out, &sol.trace, report(&sol))?;
            Ok(exit_code(sol.status))
        }
        Command::Robust {
            preset,
            seed,
            a,
            b,
            sigma,
            kappa,
            q,
            solver,
            out,
        } => {
            let mut extra = json!({});
            let (a, b, sigma) = match preset {
                Some(Preset::PaperExample) => {
                    let inst = generate_instance(&InstanceSpec::robust_example(seed))?;
                    let sigma = 0.05 * MisfitKind::QuantileHuber { kappa, q }.value(&inst.b);
                    extra = json!({
                        "seed": seed,
                        "n": inst.a.cols(),
                        "m": inst.a.rows(),
                        "outlier_indices": inst.outlier_indices,
                        "x_true": inst.x_true,
                    });
                    (inst.a, inst.b, sigma)
                }
                None => {
                    let a = load_dense(a.as_deref().expect("clap enforces --A"))?;
                    let b = load_vector(b.as_deref().expect("clap enforces --b"))?;
                    (a, b, sigma.expect("clap enforces --sigma"))
                }
            };
            let sol = solve_robust_sparse(&a, &b, sigma, kappa, q, &solver.options())?;
            let residual: Vec<f64> = b
                .iter()
                .zip(a.mul_vec(&sol.x))
                .map(|(bi, ax)| bi - ax)
                .collect();
            if let Some(obj) = extra.as_object_mut() {
                if let Some(truth) = obj.get("outlier_indices").and_then(|v| v.as_array()) {
                    let count = truth.len();
                    let top = largest_positive(&residual, count);
                    let truth: Vec<usize> = truth
                        .iter()
                        .filter_map(|v| v.as_u64().map(|u| u as usize))
                        .collect();
                    obj.insert("flagged_indices".into(), json!(top));
                    obj.insert("outliers_identified".into(), json!(top == truth));
                }
                obj.insert("sigma".into(), json!(sigma));
            }
            finish(&out, &sol.trace, merge(report(&sol), extra))?;
            Ok(exit_code(sol.status))
        }
        Command::ElasticNet {
            a,
            b,
            sigma,
            alpha_en,
            kappa,
            solver,
            out,
        } => {
            let a = load_dense(&a)?;
            let b = load_vector(&b)?;
            let sol = solve_elastic_net(&a, &b, sigma, alpha_en, kappa, &solver.options())?;
            finish(&out, &sol.trace, report(&sol))?;
            Ok(exit_code(sol.status))
        }
        Command::TraceReport { input, output } => {
            let trace = read_trace(&input)?;
            let last = trace.records.last();
            let value = json!({
                "outer_iterations": trace.len(),
                "total_inner_iterations": trace.total_inner_iterations(),
                "inner_per_step": trace.records.iter().map(|r| r.inner_iters).collect::<Vec<_>>(),
                "final_tau": last.map(|r| r.tau),
                "final_lower": last.map(|r| r.lower),
                "final_upper": last.map(|r| r.upper),
            });
            write_json(output.as_deref(), &value)?;
            Ok(0)
        }
    }
}

/// Indices of the `count` largest positive entries, sorted ascending.
pub fn largest_positive(r: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.len()).filter(|&i| r[i] > 0.0).collect();
    idx.sort_by(|&i, &j| r[j].total_cmp(&r[i]).then(i.cmp(&j)));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}
