//! Outer root finding on a nonincreasing convex f with f(τ*) = 0.
//!
//! Both inexact schemes share the same state machine: query the oracle, clamp
//! the running upper bound, form a slope and step `τ ← τ − ℓ/s`. They differ
//! only in where the slope comes from.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::oracle::{OracleError, OracleReply, ValueOracle};

/// Slopes at or above this are treated as nonnegative.
pub const SLOPE_FLOOR: f64 = -1e-300;
/// Relative step below which an outer step counts as stalled.
pub const STALL_STEP: f64 = 1e-14;
/// Consecutive tiny steps before reporting a stall.
pub const STALL_COUNT: usize = 5;
/// Slack allowed on the reported ratio `u/ℓ` before the α-contract counts as broken.
pub const CONTRACT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Secant,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub max_outer: usize,
    pub tau0: f64,
    pub tau1: Option<f64>,
    /// Report `Infeasible` when τ runs off to huge values while u stays flat.
    pub detect_infeasible: bool,
}

impl RootConfig {
    pub fn new(epsilon: f64, alpha: f64, tau0: f64) -> Result<Self, RootError> {
        let cfg = Self {
            epsilon,
            alpha,
            max_outer: 200,
            tau0,
            tau1: None,
            detect_infeasible: false,
        };
        cfg.check_common()?;
        Ok(cfg)
    }

    pub fn with_tau1(mut self, tau1: f64) -> Result<Self, RootError> {
        if !(tau1 > self.tau0) {
            return Err(RootError::InvalidConfig(format!(
                "secant start needs tau0 < tau1, got {} and {}",
                self.tau0, tau1
            )));
        }
        self.tau1 = Some(tau1);
        Ok(self)
    }

    pub fn with_max_outer(mut self, max_outer: usize) -> Result<Self, RootError> {
        if max_outer == 0 {
            return Err(RootError::InvalidConfig(
                "max_outer must be positive".into(),
            ));
        }
        self.max_outer = max_outer;
        Ok(self)
    }

    pub fn with_infeasibility_detection(mut self, on: bool) -> Self {
        self.detect_infeasible = on;
        self
    }

    fn check_common(&self) -> Result<(), RootError> {
        check_alpha(self.alpha)?;
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(RootError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !self.tau0.is_finite() {
            return Err(RootError::InvalidConfig("tau0 must be finite".into()));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<(), RootError> {
    if alpha > 1.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(RootError::InvalidConfig(format!(
            "alpha must lie in (1, 2), got {alpha}"
        )))
    }
}

/// One oracle evaluation: certified bounds on f(τ), an optional affine-minorant
/// slope, and whatever primal/dual points produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinorantEvaluation {
    pub lower: f64,
    pub upper: f64,
    pub slope: Option<f64>,
    pub primal: Option<Vec<f64>>,
    pub dual: Option<Vec<f64>>,
    pub inner_iterations: usize,
}

impl MinorantEvaluation {
    pub fn bounds(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            ..Self::default()
        }
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = Some(slope);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    pub tau: f64,
    pub lower: f64,
    pub upper: f64,
    pub slope: Option<f64>,
    pub inner_iters: usize,
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_inner_iterations(&self) -> usize {
        self.records.iter().map(|r| r.inner_iters).sum()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.tau).collect()
    }

    /// Drop wall-clock timings so traces compare byte for byte.
    pub fn without_timing(mut self) -> Self {
        self.records.iter_mut().for_each(|r| r.elapsed_ms = None);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RootStatus {
    Converged,
    Stalled,
    MaxIterations,
    OracleError,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootResult {
    pub tau: f64,
    pub iterations: usize,
    pub status: RootStatus,
    pub trace: SolveTrace,
    /// Last oracle evaluation (the certifying one on `Converged`).
    pub last: Option<MinorantEvaluation>,
    /// Set when status is `OracleError`.
    pub failure: Option<OracleError>,
    /// True when some reported ratio u/ℓ exceeded the configured α.
    pub contract_violated: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("nonnegative slope {slope} at iteration {k} (tau = {tau}, lower = {lower})")]
    NonNegativeSlope {
        k: usize,
        tau: f64,
        lower: f64,
        slope: f64,
        trace: SolveTrace,
    },
    #[error("the oracle returned no slope at tau = {0}; Newton needs an affine minorant")]
    MissingSlope(f64),
}

struct Machine<'a> {
    cfg: &'a RootConfig,
    start: Instant,
    trace: SolveTrace,
    contract_violated: bool,
    tiny_steps: usize,
    uppers: Vec<f64>,
}

enum Step {
    Done(RootResult),
    Bounds(MinorantEvaluation),
}

impl<'a> Machine<'a> {
    fn new(cfg: &'a RootConfig) -> Self {
        Self {
            cfg,
            start: Instant::now(),
            trace: SolveTrace::default(),
            contract_violated: false,
            tiny_steps: 0,
            uppers: Vec::new(),
        }
    }

    fn record(
        &mut self,
        k: usize,
        tau: f64,
        lower: f64,
        upper: f64,
        slope: Option<f64>,
        inner: usize,
    ) {
        self.trace.records.push(TraceRecord {
            k,
            tau,
            lower,
            upper,
            slope,
            inner_iters: inner,
            elapsed_ms: Some(self.start.elapsed().as_secs_f64() * 1e3),
        });
    }

    fn finish(
        &mut self,
        tau: f64,
        k: usize,
        status: RootStatus,
        last: Option<MinorantEvaluation>,
    ) -> RootResult {
        RootResult {
            tau,
            iterations: k,
            status,
            trace: std::mem::take(&mut self.trace),
            last,
            failure: None,
            contract_violated: self.contract_violated,
        }
    }

    /// Query the oracle at τ_k and handle the terminal branches.
    fn query(&mut self, oracle: &mut dyn ValueOracle, k: usize, tau: f64) -> Step {
        match oracle.query(tau, self.cfg.alpha, self.cfg.epsilon) {
            Ok(OracleReply::Converged(ev)) => {
                self.record(k, tau, ev.lower, ev.upper, ev.slope, ev.inner_iterations);
                Step::Done(self.finish(tau, k, RootStatus::Converged, Some(ev)))
            }
            Ok(OracleReply::Bounds(ev)) => {
                if !(ev.lower > 0.0) || !(ev.upper >= ev.lower) {
                    let err = OracleError::Contract {
                        tau,
                        lower: ev.lower,
                        upper: ev.upper,
                    };
                    return Step::Done(self.fail(tau, k, err));
                }
                if ev.upper > ev.lower * (self.cfg.alpha + CONTRACT_SLACK) {
                    self.contract_violated = true;
                }
                Step::Bounds(ev)
            }
            Err(err) => Step::Done(self.fail(tau, k, err)),
        }
    }

    fn fail(&mut self, tau: f64, k: usize, err: OracleError) -> RootResult {
        let mut r = self.finish(tau, k, RootStatus::OracleError, None);
        r.failure = Some(err);
        r
    }

    /// Bookkeeping after a step from `tau` to `next`; returns a terminal status if any.
    fn after_step(&mut self, tau: f64, next: f64, upper: f64, k_next: usize) -> Option<RootStatus> {
        if next - tau < STALL_STEP * tau.abs().max(1.0) {
            self.tiny_steps += 1;
        } else {
            self.tiny_steps = 0;
        }
        self.uppers.push(upper);
        if self.tiny_steps >= STALL_COUNT {
            return Some(RootStatus::Stalled);
        }
        if self.cfg.detect_infeasible {
            let threshold = 1e6 * (self.cfg.tau0 + 1.0).max(1.0);
            let n = self.uppers.len();
            if next > threshold
                && n > STALL_COUNT
                && self.uppers[n - 1 - STALL_COUNT] - upper < 1e-12
            {
                return Some(RootStatus::Infeasible);
            }
        }
        if k_next > self.cfg.max_outer {
            // Hitting the cap under a broken α-contract is the stall regime.
            return Some(if self.contract_violated {
                RootStatus::Stalled
            } else {
                RootStatus::MaxIterations
            });
        }
        None
    }
}

/// Inexact secant method. `iterations` is the index k of the final iterate, so
/// termination at τ₁ reports 1 and at τ₀ reports 0.
pub fn secant_solve(
    oracle: &mut dyn ValueOracle,
    cfg: &RootConfig,
) -> Result<RootResult, RootError> {
    cfg.check_common()?;
    let tau1 = cfg
        .tau1
        .ok_or_else(|| RootError::InvalidConfig("secant needs tau1".into()))?;
    if !(tau1 > cfg.tau0) {
        return Err(RootError::InvalidConfig(
            "secant start needs tau0 < tau1".into(),
        ));
    }
    let mut m = Machine::new(cfg);

    let ev0 = match m.query(oracle, 0, cfg.tau0) {
        Step::Done(r) => return Ok(r),
        Step::Bounds(ev) => ev,
    };
    m.record(
        0,
        cfg.tau0,
        ev0.lower,
        ev0.upper,
        None,
        ev0.inner_iterations,
    );
    let (mut tau_prev, mut u_prev) = (cfg.tau0, ev0.upper);
    let mut tau = tau1;
    let mut k = 1;
    loop {
        let ev = match m.query(oracle, k, tau) {
            Step::Done(r) => return Ok(r),
            Step::Bounds(ev) => ev,
        };
        let upper = ev.upper.min(u_prev);
        let slope = (u_prev - ev.lower) / (tau_prev - tau);
        m.record(k, tau, ev.lower, upper, Some(slope), ev.inner_iterations);
        if !(slope < SLOPE_FLOOR) {
            return Err(RootError::NonNegativeSlope {
                k,
                tau,
                lower: ev.lower,
                slope,
                trace: std::mem::take(&mut m.trace),
            });
        }
        let next = tau - ev.lower / slope;
        if let Some(status) = m.after_step(tau, next, upper, k + 1) {
            return Ok(m.finish(tau, k, status, Some(MinorantEvaluation { upper, ..ev })));
        }
        tau_prev = tau;
        u_prev = upper;
        tau = next;
        k += 1;
    }
}

/// Inexact Newton method. `iterations` counts τ-updates, so an affine f
/// converges with 1 and a root at τ₀ with 0.
pub fn newton_solve(
    oracle: &mut dyn ValueOracle,
    cfg: &RootConfig,
) -> Result<RootResult, RootError> {
    cfg.check_common()?;
    let mut m = Machine::new(cfg);
    let mut u_prev = f64::INFINITY;
    let mut tau = cfg.tau0;
    let mut k = 0;
    loop {
        let ev = match m.query(oracle, k, tau) {
            Step::Done(r) => return Ok(r),
            Step::Bounds(ev) => ev,
        };
        let upper = ev.upper.min(u_prev);
        let slope = ev.slope.ok_or(RootError::MissingSlope(tau))?;
        m.record(k, tau, ev.lower, upper, Some(slope), ev.inner_iterations);
        if !(slope < SLOPE_FLOOR) {
            return Err(RootError::NonNegativeSlope {
                k,
                tau,
                lower: ev.lower,
                slope,
                trace: std::mem::take(&mut m.trace),
            });
        }
        let next = tau - ev.lower / slope;
        if let Some(status) = m.after_step(tau, next, upper, k + 1) {
            return Ok(m.finish(tau, k, status, Some(MinorantEvaluation { upper, ..ev })));
        }
        u_prev = upper;
        tau = next;
        k += 1;
    }
}

pub fn solve(
    method: Method,
    oracle: &mut dyn ValueOracle,
    cfg: &RootConfig,
) -> Result<RootResult, RootError> {
    match method {
        Method::Secant => secant_solve(oracle, cfg),
        Method::Newton => newton_solve(oracle, cfg),
    }
}

/// Exact Newton or secant iteration on a callable returning `(f(τ), g)` with
/// `g ∈ ∂f(τ)`. The trace stores f in both `lower` and `upper` and the
/// subgradient in `slope`. `iterations` counts τ-updates in both modes.
pub fn exact_root_solve<F>(
    mut f: F,
    method: Method,
    tau0: f64,
    tau1: Option<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<RootResult, RootError>
where
    F: FnMut(f64) -> (f64, f64),
{
    if !(tol >= 0.0) {
        return Err(RootError::InvalidConfig(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    let start = Instant::now();
    let mut trace = SolveTrace::default();
    let push = |trace: &mut SolveTrace, k: usize, tau: f64, v: f64, g: f64| {
        trace.records.push(TraceRecord {
            k,
            tau,
            lower: v,
            upper: v,
            slope: Some(g),
            inner_iters: 0,
            elapsed_ms: Some(start.elapsed().as_secs_f64() * 1e3),
        });
    };
    let done = |v: f64| v <= tol;
    let result = |tau, k, status, trace| RootResult {
        tau,
        iterations: k,
        status,
        trace,
        last: None,
        failure: None,
        contract_violated: false,
    };

    let mut tau = tau0;
    let (mut fv, mut g) = f(tau);
    push(&mut trace, 0, tau, fv, g);
    if done(fv) {
        return Ok(result(tau, 0, RootStatus::Converged, trace));
    }
    let mut prev = (tau, fv);
    let mut k = 0;
    if method == Method::Secant {
        let t1 = tau1.ok_or_else(|| RootError::InvalidConfig("secant needs tau1".into()))?;
        if !(t1 > tau0) {
            return Err(RootError::InvalidConfig(
                "secant start needs tau0 < tau1".into(),
            ));
        }
        tau = t1;
        (fv, g) = f(tau);
        k = 1;
        push(&mut trace, k, tau, fv, g);
        if done(fv) {
            return Ok(result(tau, k, RootStatus::Converged, trace));
        }
    }
    loop {
        let slope = match method {
            Method::Newton => g,
            Method::Secant => (prev.1 - fv) / (prev.0 - tau),
        };
        if !(slope < SLOPE_FLOOR) {
            return Err(RootError::NonNegativeSlope {
                k,
                tau,
                lower: fv,
                slope,
                trace,
            });
        }
        let next = tau - fv / slope;
        if k + 1 > max_iter {
            return Ok(result(tau, k, RootStatus::MaxIterations, trace));
        }
        if next <= tau {
            // Rounding has exhausted progress.
            return Ok(result(tau, k, RootStatus::Stalled, trace));
        }
        prev = (tau, fv);
        tau = next;
        (fv, g) = f(tau);
        k += 1;
        push(&mut trace, k, tau, fv, g);
        if done(fv) {
            return Ok(result(tau, k, RootStatus::Converged, trace));
        }
    }
}

/// Ceiling of the worst-case outer iteration count:
/// `max{2 + log_{2/α}(2C/ε), 3}` for secant and `max{1 + log_{2/α}(2C/ε), 2}` for Newton.
pub fn iteration_bound(
    c: f64,
    epsilon: f64,
    alpha: f64,
    method: Method,
) -> Result<usize, RootError> {
    check_alpha(alpha)?;
    if !(c > 0.0) || !(epsilon > 0.0) {
        return Err(RootError::InvalidConfig(
            "C and epsilon must be positive".into(),
        ));
    }
    let log = (2.0 * c / epsilon).ln() / (2.0 / alpha).ln();
    let (offset, floor) = match method {
        Method::Secant => (2.0, 3.0),
        Method::Newton => (1.0, 2.0),
    };
    Ok((offset + log).max(floor).ceil() as usize)
}
