//! Oracles for f(τ) = v(τ) − σ: accuracy tests, dual-certificate minorants,
//! the squared-misfit refinement, synthetic test oracles and the oracle
//! backed by an inner solver.

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::inner::{self, InnerError, InnerProblem, InnerSolver, Progress};
use crate::linalg::norm2;
use crate::misfits::{DataLoss, MisfitKind};
use crate::problems::LevelSetProblem;
use crate::rootfind::{Method, MinorantEvaluation};

/// Dual norms below this are treated as zero.
pub const ZERO_DUAL: f64 = 1e-12;
/// Relative slack for the runtime minorant-orientation audit.
pub const ORIENTATION_SLACK: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("inner solver hit its budget at tau = {tau} after {iterations} iterations (best bounds [{lower}, {upper}])")]
    InnerBudgetExceeded {
        tau: f64,
        lower: f64,
        upper: f64,
        iterations: usize,
    },
    #[error("oracle broke its contract at tau = {tau}: lower = {lower}, upper = {upper}")]
    Contract { tau: f64, lower: f64, upper: f64 },
    #[error("minorant from tau = {tau} overshoots the upper bound {upper_prev} at tau = {tau_prev} (value {value})")]
    MinorantOrientation {
        tau: f64,
        tau_prev: f64,
        value: f64,
        upper_prev: f64,
    },
    #[error("dual certificate has norm {0}, too small to normalize")]
    ZeroDual(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Inner(#[from] InnerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Result of one oracle query.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleReply {
    /// `u ≤ ε` is certified at the queried τ.
    Converged(MinorantEvaluation),
    /// Bounds with `0 < ℓ ≤ f(τ) ≤ u`.
    Bounds(MinorantEvaluation),
}

impl OracleReply {
    pub fn evaluation(&self) -> &MinorantEvaluation {
        match self {
            OracleReply::Converged(e) | OracleReply::Bounds(e) => e,
        }
    }
}

pub trait ValueOracle {
    fn query(&mut self, tau: f64, alpha: f64, epsilon: f64) -> Result<OracleReply, OracleError>;
}

impl<F> ValueOracle for F
where
    F: FnMut(f64, f64, f64) -> Result<OracleReply, OracleError>,
{
    fn query(&mut self, tau: f64, alpha: f64, epsilon: f64) -> Result<OracleReply, OracleError> {
        self(tau, alpha, epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccuracyOutcome {
    EpsilonRoot,
    RelativeOK,
    NeedMoreAccuracy,
}

pub fn gap_to_relative(
    lower: f64,
    upper: f64,
    epsilon: f64,
    alpha: f64,
) -> Result<AccuracyOutcome, OracleError> {
    if !(lower >= 0.0) || lower > upper {
        return Err(OracleError::Domain(format!(
            "need 0 <= lower <= upper, got lower = {lower}, upper = {upper}"
        )));
    }
    Ok(if upper <= epsilon {
        AccuracyOutcome::EpsilonRoot
    } else if upper - lower <= (1.0 - 1.0 / alpha) * epsilon || upper <= alpha * lower {
        AccuracyOutcome::RelativeOK
    } else {
        AccuracyOutcome::NeedMoreAccuracy
    })
}

/// A dual point with its dual value Φ(y, τ̄) and a τ-subgradient of Φ(y, ·).
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub y: Vec<f64>,
    pub phi_value: f64,
    pub tau_slope: f64,
}

/// Affine minorant `τ' ↦ (Φ − σ) + s̄(τ' − τ̄)` of f, returned as `(ℓ, s̄)`.
pub fn minorant_from_dual(cert: &DualCertificate, sigma: f64) -> (f64, f64) {
    (cert.phi_value - sigma, cert.tau_slope)
}

/// Convert f₂ = ½v² − ½σ² bounds into f₁ = v − σ bounds.
pub fn squared_secant_bounds(l2: f64, u2: f64, sigma: f64) -> Result<(f64, f64), OracleError> {
    if l2 > u2 {
        return Err(OracleError::Domain(format!(
            "lower {l2} exceeds upper {u2}"
        )));
    }
    let l = (2.0 * l2 + sigma * sigma).max(0.0).sqrt();
    let u = (2.0 * u2 + sigma * sigma).max(0.0).sqrt();
    if l < sigma {
        return Err(OracleError::Domain(format!(
            "recovered lower bound {l} is below sigma = {sigma}"
        )));
    }
    Ok((l - sigma, u - sigma))
}

/// Lower bound on v from a squared-problem dual point:
/// `ℓ̂ = (Φ₂(y, τ) + ½‖y‖²)/‖y‖`.
pub fn refined_lower(phi2: f64, y_norm: f64) -> f64 {
    (phi2 + 0.5 * y_norm * y_norm) / y_norm
}

/// Affine minorant for f₁ = v − σ from a dual point `y` of the squared
/// problem. `l2` is the f₂ lower bound Φ₂(y, τ) − ½σ², `s2` is the
/// τ-derivative of Φ₂(y, ·) and `upper_u` an upper bound on v(τ).
///
/// The returned slope is `s2/‖y‖`, which is ≤ 0 for gauge constraints, and
/// `f₁(τ') ≥ lower + slope·(τ' − τ)` for all τ'.
pub fn squared_newton_minorant(
    y: &[f64],
    s2: f64,
    l2: f64,
    upper_u: f64,
    sigma: f64,
) -> Result<MinorantEvaluation, OracleError> {
    let ny = norm2(y);
    if ny < ZERO_DUAL {
        return Err(OracleError::ZeroDual(ny));
    }
    let phi2 = l2 + 0.5 * sigma * sigma;
    Ok(MinorantEvaluation {
        lower: refined_lower(phi2, ny) - sigma,
        upper: upper_u - sigma,
        slope: Some(s2 / ny),
        dual: Some(y.iter().map(|v| v / ny).collect()),
        ..MinorantEvaluation::default()
    })
}

/// Additive f₂ accuracy that keeps the f₁ bounds α-relative near the root.
pub fn inner_tolerance_for(epsilon: f64, alpha: f64) -> Result<f64, OracleError> {
    if !(alpha > 1.0 && alpha < 2.0) || !(epsilon > 0.0) {
        return Err(OracleError::Domain(format!(
            "need alpha in (1, 2) and epsilon > 0, got {alpha}, {epsilon}"
        )));
    }
    let r = 1.0 - 1.0 / alpha;
    Ok(0.5 * r * r * epsilon * epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticMode {
    /// `ℓ = f/√α`, `u = f√α`, no slope.
    Symmetric,
    /// Symmetric bounds plus a subgradient of f as slope.
    Subgradient,
    /// Symmetric bounds plus the steepest slope that still minorizes f.
    Steepest,
}

/// Test oracle over an exact callable `τ ↦ (f(τ), g ∈ ∂f(τ))`.
pub struct SyntheticOracle<F> {
    f: F,
    alpha: f64,
    mode: SyntheticMode,
    /// Left end of the window searched for the steepest slope, relative to τ.
    pub window: f64,
}

impl<F: Fn(f64) -> (f64, f64)> SyntheticOracle<F> {
    pub fn new(f: F, alpha: f64, mode: SyntheticMode) -> Self {
        Self {
            f,
            alpha,
            mode,
            window: 100.0,
        }
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.window = window;
        self
    }

    pub fn evaluate(&self, tau: f64) -> MinorantEvaluation {
        let (v, g) = (self.f)(tau);
        let r = self.alpha.sqrt();
        let (lower, upper) = if v > 0.0 {
            (v / r, v * r)
        } else {
            (v * r, v / r)
        };
        let ev = MinorantEvaluation::bounds(lower, upper);
        match self.mode {
            SyntheticMode::Symmetric => ev,
            SyntheticMode::Subgradient => ev.with_slope(g),
            SyntheticMode::Steepest => ev.with_slope(self.steepest_slope(tau, lower, g)),
        }
    }

    /// Most negative s with `ℓ + s(τ' − τ) ≤ f(τ')` for all τ' in the window.
    fn steepest_slope(&self, tau: f64, lower: f64, g: f64) -> f64 {
        let q = |t: f64| (lower - (self.f)(t).0) / (tau - t);
        let lo = tau - self.window * tau.abs().max(1.0);
        let n = 4000;
        let h = (tau - lo) / n as f64;
        let mut best = (f64::NEG_INFINITY, lo);
        for i in 0..n {
            let t = lo + h * i as f64;
            let v = q(t);
            if v > best.0 {
                best = (v, t);
            }
        }
        // Golden-section refinement around the best grid point.
        let (mut a, mut b) = ((best.1 - h).max(lo), (best.1 + h).min(tau - 1e-12 * h));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if q(c) > q(d) {
                b = d
            } else {
                a = c
            }
        }
        let s = best.0.max(q(0.5 * (a + b)));
        // A hair of slack keeps the line below f despite the finite search.
        (s + 1e-9 * s.abs().max(1e-12)).min(g)
    }
}

impl<F: Fn(f64) -> (f64, f64)> ValueOracle for SyntheticOracle<F> {
    fn query(&mut self, tau: f64, _alpha: f64, epsilon: f64) -> Result<OracleReply, OracleError> {
        let ev = self.evaluate(tau);
        Ok(if ev.upper <= epsilon {
            OracleReply::Converged(ev)
        } else {
            OracleReply::Bounds(ev)
        })
    }
}

/// How the level-set oracle runs its inner solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub solver: InnerSolver,
    pub max_iter: usize,
    /// Outer method being served; only affects whether slopes are attached.
    pub outer: Method,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            solver: InnerSolver::Apg,
            max_iter: 50_000,
            outer: Method::Newton,
        }
    }
}

/// Oracle for f(τ) = v(τ) − σ driven by warm-started inner solves.
///
/// A 2-norm misfit is handled through its square: the inner solver works on
/// ½‖Ax − b‖² and the dual point is rescaled into a certificate for v.
pub struct LevelSetOracle<'a> {
    problem: &'a LevelSetProblem,
    inner_loss: DataLoss,
    squared: bool,
    config: InnerConfig,
    lipschitz: Option<f64>,
    warm: Vec<f64>,
    prev: Option<(f64, f64)>,
    pub total_inner: usize,
    pub queries: usize,
}

pub fn make_value_oracle(problem: &LevelSetProblem, config: InnerConfig) -> LevelSetOracle<'_> {
    LevelSetOracle::new(problem, config)
}

impl<'a> LevelSetOracle<'a> {
    pub fn new(problem: &'a LevelSetProblem, config: InnerConfig) -> Self {
        let (inner_loss, squared) = match &problem.loss {
            DataLoss::Misfit {
                kind: MisfitKind::Norm2,
                b,
            } => (
                DataLoss::Misfit {
                    kind: MisfitKind::SumSquares,
                    b: b.clone(),
                },
                true,
            ),
            other => (other.clone(), false),
        };
        Self {
            problem,
            inner_loss,
            squared,
            config,
            lipschitz: None,
            warm: vec![0.0; problem.a.cols()],
            prev: None,
            total_inner: 0,
            queries: 0,
        }
    }

    pub fn with_warm_start(mut self, x0: Vec<f64>) -> Self {
        self.warm = x0;
        self
    }

    /// The current warm-start point (best primal of the last query).
    pub fn warm_start(&self) -> &[f64] {
        &self.warm
    }

    pub fn is_squared(&self) -> bool {
        self.squared
    }

    fn lipschitz(&mut self) -> f64 {
        if let Some(l) = self.lipschitz {
            return l;
        }
        let l = inner::lipschitz_estimate(&self.problem.a, &self.inner_loss);
        self.lipschitz = Some(l);
        l
    }
}

#[derive(Clone)]
struct Best {
    lower: f64,
    slope: f64,
    y: Vec<f64>,
}

impl ValueOracle for LevelSetOracle<'_> {
    fn query(&mut self, tau: f64, alpha: f64, epsilon: f64) -> Result<OracleReply, OracleError> {
        self.queries += 1;
        let sigma = self.problem.sigma;
        let squared = self.squared;
        let lipschitz = self.lipschitz();
        let ip = InnerProblem {
            a: &self.problem.a,
            loss: &self.inner_loss,
            constraint: &self.problem.constraint,
            tau,
        };
        let mut best: Option<Best> = None;
        let mut upper1 = f64::INFINITY;
        let mut outcome = AccuracyOutcome::NeedMoreAccuracy;
        let mut bad_dual = None;
        let mut stop = |p: &Progress| -> bool {
            // Bounds on f₁ = v − σ from this iterate.
            let (lower1, slope1) = if squared {
                let ny = norm2(p.y);
                if ny < ZERO_DUAL {
                    (f64::NEG_INFINITY, 0.0)
                } else {
                    (refined_lower(p.lower, ny) - sigma, p.slope / ny)
                }
            } else {
                (p.lower - sigma, p.slope)
            };
            upper1 = if squared {
                (2.0 * p.best_upper).max(0.0).sqrt() - sigma
            } else {
                p.best_upper - sigma
            };
            if best.as_ref().is_none_or(|b| lower1 > b.lower) {
                let y = if squared {
                    let ny = norm2(p.y);
                    p.y.iter().map(|v| v / ny).collect()
                } else {
                    p.y.to_vec()
                };
                best = Some(Best {
                    lower: lower1,
                    slope: slope1,
                    y,
                });
            }
            let lower = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.lower);
            match gap_to_relative(
                lower.max(0.0).min(upper1.max(0.0)),
                upper1.max(0.0),
                epsilon,
                alpha,
            ) {
                Ok(o) => {
                    outcome = o;
                    o != AccuracyOutcome::NeedMoreAccuracy
                }
                Err(e) => {
                    bad_dual = Some(e);
                    true
                }
            }
        };
        let x0 = std::mem::take(&mut self.warm);
        let res = inner::run(
            self.config.solver,
            &ip,
            &x0,
            lipschitz,
            self.config.max_iter,
            &mut stop,
        )?;
        if let Some(e) = bad_dual {
            return Err(e);
        }
        self.total_inner += res.iterations;
        self.warm = res.x.clone();
        let best = best.unwrap_or(Best {
            lower: f64::NEG_INFINITY,
            slope: 0.0,
            y: res.y.clone(),
        });
        let ev = MinorantEvaluation {
            // Both are certified bounds; rounding can cross them by an ulp.
            lower: best.lower.min(upper1),
            upper: upper1,
            slope: Some(best.slope),
            primal: Some(res.x),
            dual: Some(best.y),
            inner_iterations: res.iterations,
        };
        match outcome {
            AccuracyOutcome::EpsilonRoot => Ok(OracleReply::Converged(ev)),
            AccuracyOutcome::NeedMoreAccuracy => Err(OracleError::InnerBudgetExceeded {
                tau,
                lower: ev.lower,
                upper: ev.upper,
                iterations: ev.inner_iterations,
            }),
            AccuracyOutcome::RelativeOK => {
                if let Some((tau_prev, upper_prev)) = self.prev {
                    if tau_prev < tau {
                        let value = ev.lower + best.slope * (tau_prev - tau);
                        if value > upper_prev + ORIENTATION_SLACK * upper_prev.abs().max(1.0) {
                            return Err(OracleError::MinorantOrientation {
                                tau,
                                tau_prev,
                                value,
                                upper_prev,
                            });
                        }
                    }
                }
                self.prev = Some((tau, ev.upper));
                let ev = if self.config.outer == Method::Secant {
                    MinorantEvaluation { slope: None, ..ev }
                } else {
                    ev
                };
                Ok(OracleReply::Bounds(ev))
            }
        }
    }
}
