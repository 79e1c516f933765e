//! End-to-end level-set solvers for the supported problem classes, radial
//! feasibility recovery and a seeded instance generator.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{ConstraintSet, GeometryError};
use crate::inner::{FwStepRule, InnerSolver};
use crate::linalg::{dot, norm2, DenseMatrix, DimensionError};
use crate::misfits::{DataLoss, Glm, MisfitError, MisfitKind};
use crate::oracle::{InnerConfig, LevelSetOracle, OracleReply, ValueOracle};
use crate::rootfind::{
    newton_solve, secant_solve, Method, MinorantEvaluation, RootConfig, RootError, RootResult,
    RootStatus, SolveTrace,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Dimension(#[from] DimensionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Misfit(#[from] MisfitError),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error(
        "shifted cost c - A^T y_hat has entry {index} = {value}; it must be strictly positive"
    )]
    BadShift { index: usize, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("anchor is not strictly feasible: misfit {misfit} >= sigma {sigma}")]
    NotStrictlyFeasible { misfit: f64, sigma: f64 },
}

/// `minimize φ(x) subject to L(Ax) ≤ σ`, stored through its level-set data.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetProblem {
    pub a: DenseMatrix,
    pub loss: DataLoss,
    pub constraint: ConstraintSet,
    pub sigma: f64,
}

impl LevelSetProblem {
    pub fn new(
        a: DenseMatrix,
        loss: DataLoss,
        constraint: ConstraintSet,
        sigma: f64,
    ) -> Result<Self, ProblemError> {
        if loss.data().len() != a.rows() {
            return Err(DimensionError::Mismatch {
                what: "b",
                got: loss.data().len(),
                expected: a.rows(),
            }
            .into());
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(ProblemError::InvalidInput(format!(
                "sigma must be finite and nonnegative, got {sigma}"
            )));
        }
        loss.validate()?;
        constraint.validate(a.cols())?;
        Ok(Self {
            a,
            loss,
            constraint,
            sigma,
        })
    }

    /// `L(Ax)`, i.e. ρ(Ax − b) for misfits.
    pub fn misfit(&self, x: &[f64]) -> f64 {
        self.loss.value(&self.a.mul_vec(x))
    }

    /// The level function φ at `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.constraint.level(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub epsilon: f64,
    pub alpha: f64,
    pub method: Method,
    pub inner: InnerSolver,
    pub max_inner: usize,
    pub max_outer: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            alpha: 1.3,
            method: Method::Newton,
            inner: InnerSolver::Apg,
            max_inner: 50_000,
            max_outer: 200,
        }
    }
}

impl SolveOptions {
    pub fn new(epsilon: f64, alpha: f64) -> Self {
        Self {
            epsilon,
            alpha,
            ..Self::default()
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_inner(mut self, inner: InnerSolver) -> Self {
        self.inner = inner;
        self
    }

    pub fn with_max_inner(mut self, max_inner: usize) -> Self {
        self.max_inner = max_inner;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub tau_star_estimate: f64,
    pub misfit_at_x: f64,
    /// φ(x)
    pub objective: f64,
    pub status: RootStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub trace: SolveTrace,
    pub certificate: Option<MinorantEvaluation>,
    pub failure: Option<String>,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.status == RootStatus::Converged
    }
}

/// Root-find on f(τ) = v(τ) − σ from τ₀ = 0.
pub fn solve_level_set(
    problem: &LevelSetProblem,
    opts: &SolveOptions,
) -> Result<Solution, ProblemError> {
    let inner = InnerConfig {
        solver: opts.inner,
        max_iter: opts.max_inner,
        outer: opts.method,
    };
    let mut cfg = RootConfig::new(opts.epsilon, opts.alpha, 0.0)?
        .with_max_outer(opts.max_outer)?
        .with_infeasibility_detection(true);
    let mut probe_inner = 0;
    if opts.method == Method::Secant {
        // Pick τ₁ halfway along the Newton step from τ₀, which stays left of τ*.
        let mut probe = LevelSetOracle::new(
            problem,
            InnerConfig {
                outer: Method::Newton,
                ..inner
            },
        );
        let reply = probe.query(0.0, opts.alpha, opts.epsilon);
        probe_inner = probe.total_inner;
        let tau1 = match reply {
            Ok(OracleReply::Bounds(ev)) => match ev.slope {
                Some(s) if s < 0.0 => -0.5 * ev.lower / s,
                _ => 1.0,
            },
            _ => 1.0,
        };
        cfg = cfg.with_tau1(tau1)?;
    }
    let mut oracle = LevelSetOracle::new(problem, inner);
    let outcome = match opts.method {
        Method::Newton => newton_solve(&mut oracle, &cfg),
        Method::Secant => secant_solve(&mut oracle, &cfg),
    };
    let (rr, failure) = match outcome {
        Ok(rr) => {
            let failure = rr.failure.as_ref().map(ToString::to_string);
            (rr, failure)
        }
        // A valid minorant with ℓ > 0 and s ≥ 0 certifies f > 0 to the right.
        Err(RootError::NonNegativeSlope { k, tau, trace, .. }) if opts.method == Method::Newton => {
            (
                RootResult {
                    tau,
                    iterations: k,
                    status: RootStatus::Infeasible,
                    trace,
                    last: None,
                    failure: None,
                    contract_violated: false,
                },
                Some(
                    "nonnegative minorant slope: sigma is below the attainable misfit".to_string(),
                ),
            )
        }
        Err(e) => return Err(e.into()),
    };
    let x = rr
        .last
        .as_ref()
        .and_then(|ev| ev.primal.clone())
        .unwrap_or_else(|| oracle.warm_start().to_vec());
    let inner_iterations = rr.trace.total_inner_iterations() + probe_inner;
    Ok(Solution {
        misfit_at_x: problem.misfit(&x),
        objective: problem.objective(&x),
        x,
        tau_star_estimate: rr.tau,
        status: rr.status,
        outer_iterations: rr.iterations,
        inner_iterations,
        trace: rr.trace,
        certificate: rr.last,
        failure,
    })
}

/// `minimize ‖x‖₁ subject to ‖Ax − b‖₂ ≤ σ`.
pub fn solve_bpdn(
    a: &DenseMatrix,
    b: &[f64],
    sigma: f64,
    opts: &SolveOptions,
) -> Result<Solution, ProblemError> {
    let problem = LevelSetProblem::new(
        a.clone(),
        DataLoss::Misfit {
            kind: MisfitKind::Norm2,
            b: b.to_vec(),
        },
        ConstraintSet::L1Ball,
        sigma,
    )?;
    solve_level_set(&problem, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub solution: Solution,
    /// ⟨c, x⟩
    pub objective: f64,
    pub c_hat: Vec<f64>,
    /// `ε‖ŷ‖₂`: the returned objective is at most OPT plus this.
    pub guarantee: f64,
}

/// `minimize ⟨c, x⟩ subject to Ax = b, x ≥ 0`, through the least-squares
/// level set over `{x ≥ 0 : ⟨ĉ, x⟩ ≤ τ}` with `ĉ = c − Aᵀŷ > 0`.
pub fn solve_lp(
    a: &DenseMatrix,
    b: &[f64],
    c: &[f64],
    y_hat: &[f64],
    opts: &SolveOptions,
) -> Result<LpSolution, ProblemError> {
    if c.len() != a.cols() || y_hat.len() != a.rows() {
        return Err(ProblemError::InvalidInput(format!(
            "A is {}x{}, c has {}, y_hat has {}",
            a.rows(),
            a.cols(),
            c.len(),
            y_hat.len()
        )));
    }
    let aty = a.tr_mul_vec(y_hat);
    let c_hat: Vec<f64> = c.iter().zip(&aty).map(|(ci, ai)| ci - ai).collect();
    if let Some((index, &value)) = c_hat.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(ProblemError::BadShift { index, value });
    }
    let problem = LevelSetProblem::new(
        a.clone(),
        DataLoss::Misfit {
            kind: MisfitKind::Norm2,
            b: b.to_vec(),
        },
        ConstraintSet::OrthantBudget {
            c_hat: c_hat.clone(),
        },
        0.0,
    )?;
    let solution = solve_level_set(&problem, opts)?;
    Ok(LpSolution {
        objective: dot(c, &solution.x),
        guarantee: opts.epsilon * norm2(y_hat),
        c_hat,
        solution,
    })
}

/// Either σ directly or the calibration `σ = L(b; 0)/η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlmTarget {
    Sigma(f64),
    Eta(f64),
}

/// `minimize φ(x) subject to L(b; Ax) ≤ σ` for a GLM negative log-likelihood.
pub fn solve_glm(
    glm: Glm,
    a: &DenseMatrix,
    b: &[f64],
    target: GlmTarget,
    constraint: ConstraintSet,
    opts: &SolveOptions,
) -> Result<Solution, ProblemError> {
    glm.validate(b)?;
    let at_zero = glm.loss_value(b, &vec![0.0; b.len()]);
    if !at_zero.is_finite() {
        return Err(MisfitError::DomainViolation {
            family: glm.family.name(),
            index: 0,
            value: 0.0,
        }
        .into());
    }
    let sigma = match target {
        GlmTarget::Sigma(s) => s,
        GlmTarget::Eta(eta) if eta > 0.0 => at_zero / eta,
        GlmTarget::Eta(eta) => {
            return Err(ProblemError::InvalidInput(format!(
                "eta must be positive, got {eta}"
            )))
        }
    };
    // Negative σ is legitimate for GLM losses with the constant dropped.
    let problem = LevelSetProblem {
        a: a.clone(),
        loss: DataLoss::Glm { glm, b: b.to_vec() },
        constraint,
        sigma: 0.0,
    };
    problem.constraint.validate(a.cols())?;
    if b.len() != a.rows() {
        return Err(DimensionError::Mismatch {
            what: "b",
            got: b.len(),
            expected: a.rows(),
        }
        .into());
    }
    solve_level_set(&LevelSetProblem { sigma, ..problem }, opts)
}

/// `minimize ‖x‖₁ subject to ρ_{κ,q}(b − Ax) ≤ σ` with the quantile Huber ρ.
/// Since `ρ_{κ,q}(−r) = ρ_{κ,1−q}(r)` this is the misfit `ρ_{κ,1−q}(Ax − b)`.
pub fn solve_robust_sparse(
    a: &DenseMatrix,
    b: &[f64],
    sigma: f64,
    kappa: f64,
    q: f64,
    opts: &SolveOptions,
) -> Result<Solution, ProblemError> {
    let kind = MisfitKind::QuantileHuber { kappa, q };
    kind.validate()?;
    let problem = LevelSetProblem::new(
        a.clone(),
        DataLoss::Misfit {
            kind: MisfitKind::QuantileHuber { kappa, q: 1.0 - q },
            b: b.to_vec(),
        },
        ConstraintSet::L1Ball,
        sigma,
    )?;
    solve_level_set(&problem, opts)
}

/// `minimize α‖x‖₁ + (1−α)/2‖x‖² subject to Huber_κ(Ax − b) ≤ σ`, with APG inner solves.
pub fn solve_elastic_net(
    a: &DenseMatrix,
    b: &[f64],
    sigma: f64,
    alpha_en: f64,
    kappa: f64,
    opts: &SolveOptions,
) -> Result<Solution, ProblemError> {
    if !(alpha_en > 0.0 && alpha_en <= 1.0) {
        return Err(ProblemError::InvalidInput(format!(
            "elastic-net weight must lie in (0, 1], got {alpha_en}; at 0 the tau-slope is unbounded at tau = 0"
        )));
    }
    let problem = LevelSetProblem::new(
        a.clone(),
        DataLoss::Misfit {
            kind: MisfitKind::Huber { kappa },
            b: b.to_vec(),
        },
        ConstraintSet::ElasticNet { alpha_en },
        sigma,
    )?;
    solve_level_set(&problem, &opts.with_inner(InnerSolver::Apg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub x: Vec<f64>,
    /// Weight on the anchor; 0 when z was already feasible.
    pub alpha: f64,
}

/// Radial projection of an ε-feasible `z` toward a strictly feasible anchor `e`.
///
/// The returned point has misfit exactly σ (up to rounding) whenever `z` was
/// infeasible. When `ρ(Az − b) ≤ σ + δ(σ − ρ(Ae − b))` the objective gap is at
/// most δ times the anchor's.
pub fn recover_feasible(
    z: &[f64],
    e: &[f64],
    problem: &LevelSetProblem,
) -> Result<Recovery, ProblemError> {
    let rz = problem.misfit(z);
    let re = problem.misfit(e);
    let sigma = problem.sigma;
    if !(re < sigma) {
        return Err(ProblemError::NotStrictlyFeasible { misfit: re, sigma });
    }
    if rz <= sigma {
        return Ok(Recovery {
            x: z.to_vec(),
            alpha: 0.0,
        });
    }
    let alpha = (rz - sigma) / (rz - re);
    let x = z
        .iter()
        .zip(e)
        .map(|(zi, ei)| zi + alpha * (ei - zi))
        .collect();
    Ok(Recovery { x, alpha })
}

/// Largest δ for which `z` is admissible input to [`recover_feasible`].
pub fn recovery_delta(z: &[f64], e: &[f64], problem: &LevelSetProblem) -> f64 {
    let rz = problem.misfit(z);
    let re = problem.misfit(e);
    ((rz - problem.sigma) / (problem.sigma - re)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierSign {
    Positive,
    Negative,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierSpec {
    pub count: usize,
    pub low: f64,
    pub high: f64,
    pub sign: OutlierSign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub noise_std: f64,
    pub outliers: OutlierSpec,
    pub seed: u64,
}

impl InstanceSpec {
    /// The robust-regression setting: 400 unknowns, 100 measurements, 10
    /// spikes and 6 positive outliers drawn from [0, 0.5].
    pub fn robust_example(seed: u64) -> Self {
        Self {
            n: 400,
            m: 100,
            k: 10,
            noise_std: 1e-3,
            outliers: OutlierSpec {
                count: 6,
                low: 0.0,
                high: 0.5,
                sign: OutlierSign::Positive,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub x_true: Vec<f64>,
    /// Sorted ascending.
    pub outlier_indices: Vec<usize>,
}

/// Gaussian A with unit-norm columns, ±1 spikes on a random support,
/// Gaussian noise, then outliers at recorded positions. Fully seeded.
pub fn generate_instance(spec: &InstanceSpec) -> Result<Instance, ProblemError> {
    let InstanceSpec { n, m, k, .. } = *spec;
    if k > n || spec.outliers.count > m {
        return Err(ProblemError::InvalidInput(format!(
            "need k <= n and outliers <= m, got k = {k}, n = {n}, outliers = {}, m = {m}",
            spec.outliers.count
        )));
    }
    if !(spec.outliers.low <= spec.outliers.high) || !(spec.noise_std >= 0.0) {
        return Err(ProblemError::InvalidInput(
            "bad outlier range or noise level".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = DenseMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            a.set(i, j, rng.sample(StandardNormal));
        }
    }
    for j in 0..n {
        let norm = a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for i in 0..m {
                a.set(i, j, a.get(i, j) / norm);
            }
        }
    }
    let mut x_true = vec![0.0; n];
    let mut support = sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    for j in support {
        x_true[j] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let mut b = a.mul_vec(&x_true);
    for bi in b.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *bi += spec.noise_std * e;
    }
    let o = spec.outliers;
    let mut outlier_indices = sample(&mut rng, m, o.count).into_vec();
    outlier_indices.sort_unstable();
    for &i in &outlier_indices {
        let mag = if o.high > o.low {
            rng.random_range(o.low..o.high)
        } else {
            o.low
        };
        let sign = match o.sign {
            OutlierSign::Positive => 1.0,
            OutlierSign::Negative => -1.0,
            OutlierSign::Both => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        b[i] += sign * mag;
    }
    Ok(Instance {
        a,
        b,
        x_true,
        outlier_indices,
    })
}

/// Convenience: Frank-Wolfe with exact line search.
pub fn frank_wolfe_options(epsilon: f64, alpha: f64) -> SolveOptions {
    SolveOptions::new(epsilon, alpha)
        .with_inner(InnerSolver::FrankWolfe(FwStepRule::ExactLineSearch))
}
