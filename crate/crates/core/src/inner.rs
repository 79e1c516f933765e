//! Inner solvers for the level-set subproblem
//! `minimize L(Ax) subject to x ∈ C_τ`, each producing primal upper bounds
//! and dual lower bounds Φ(y, τ) = −L*(−y) − δ*_{C_τ}(Aᵀy) with y = −∇L(Ax).

use thiserror::Error;

use crate::geometry::{ConstraintSet, GeometryError};
use crate::linalg::{axpy, dot, DenseMatrix};
use crate::misfits::{DataLoss, MisfitError, MisfitKind};

/// Power iterations used for the Lipschitz estimate.
pub const POWER_ITERATIONS: usize = 20;
pub const POWER_TOL: f64 = 1e-6;
/// Safety factor on the estimated Lipschitz constant.
pub const LIPSCHITZ_SAFETY: f64 = 1.05;
/// Frank-Wolfe recomputes `Ax` from scratch this often to stop drift.
const FW_REFRESH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwStepRule {
    /// `t_k = 2/(k+2)`
    Canonical,
    /// Minimize the loss along the FW direction. Closed form for quadratic
    /// losses, bisection on the directional derivative otherwise.
    ExactLineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolver {
    Apg,
    FrankWolfe(FwStepRule),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InnerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Misfit(#[from] MisfitError),
    #[error("no linear minimization oracle for this constraint set")]
    NoLmo,
    #[error("the inner solvers need a smooth loss")]
    NonSmooth,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("backtracking failed to find a usable step")]
    StepFailure,
}

/// One inner subproblem at a fixed level τ.
#[derive(Debug, Clone, Copy)]
pub struct InnerProblem<'a> {
    pub a: &'a DenseMatrix,
    pub loss: &'a DataLoss,
    pub constraint: &'a ConstraintSet,
    pub tau: f64,
}

/// Snapshot handed to the stopping callback after each dual evaluation.
#[derive(Debug)]
pub struct Progress<'a> {
    pub iteration: usize,
    /// L(Ax) at the current iterate.
    pub upper: f64,
    /// Φ(y, τ) at the current dual point.
    pub lower: f64,
    /// ∂_τ Φ(y, ·) at τ.
    pub slope: f64,
    pub y: &'a [f64],
    pub x: &'a [f64],
    pub best_upper: f64,
    pub best_lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    Stopped,
    MaxInnerIterations,
}

/// FW linearization bound next to the independently evaluated dual value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    pub linearization: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    /// Iterate with the smallest loss.
    pub x: Vec<f64>,
    /// Dual point with the largest Φ.
    pub y: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub slope: f64,
    pub iterations: usize,
    pub status: InnerStatus,
    /// Frank-Wolfe only: one entry per iteration.
    pub log: Vec<CertificateCheck>,
}

/// `Φ(y, τ)` and its τ-derivative, straight from the dual formula.
pub fn dual_value(ip: &InnerProblem, y: &[f64]) -> Result<(f64, f64), InnerError> {
    let aty = ip.a.tr_mul_vec(y);
    dual_value_with(ip, y, &aty)
}

fn dual_value_with(ip: &InnerProblem, y: &[f64], aty: &[f64]) -> Result<(f64, f64), InnerError> {
    let sup = ip.constraint.support(aty, ip.tau)?;
    Ok((-ip.loss.neg_conjugate(y) - sup.value, -sup.tau_slope))
}

/// `curvature · ‖A‖² · 1.05`, with ‖A‖² from 20 power iterations.
/// Losses without a global curvature bound start from `‖A‖²` and rely on
/// backtracking.
pub fn lipschitz_estimate(a: &DenseMatrix, loss: &DataLoss) -> f64 {
    let norm_sq = a.spectral_norm_sq(POWER_ITERATIONS, POWER_TOL);
    let c = loss.curvature().unwrap_or(1.0);
    (c * norm_sq * LIPSCHITZ_SAFETY).max(f64::MIN_POSITIVE)
}

struct Tracker {
    best_x: Vec<f64>,
    best_upper: f64,
    best_y: Vec<f64>,
    best_lower: f64,
    best_slope: f64,
}

impl Tracker {
    fn new(n: usize, m: usize) -> Self {
        Self {
            best_x: vec![0.0; n],
            best_upper: f64::INFINITY,
            best_y: vec![0.0; m],
            best_lower: f64::NEG_INFINITY,
            best_slope: 0.0,
        }
    }

    fn update(&mut self, x: &[f64], upper: f64, y: &[f64], lower: f64, slope: f64) {
        if upper < self.best_upper {
            self.best_upper = upper;
            self.best_x.copy_from_slice(x);
        }
        if lower > self.best_lower {
            self.best_lower = lower;
            self.best_slope = slope;
            self.best_y.copy_from_slice(y);
        }
    }

    fn finish(
        self,
        iterations: usize,
        status: InnerStatus,
        log: Vec<CertificateCheck>,
    ) -> InnerResult {
        InnerResult {
            x: self.best_x,
            y: self.best_y,
            lower: self.best_lower,
            upper: self.best_upper,
            slope: self.best_slope,
            iterations,
            status,
            log,
        }
    }
}

fn check_dims(ip: &InnerProblem, x0: &[f64]) -> Result<(), InnerError> {
    if x0.len() != ip.a.cols() || ip.loss.data().len() != ip.a.rows() {
        return Err(InnerError::Dimension(format!(
            "A is {}x{}, x0 has {}, b has {}",
            ip.a.rows(),
            ip.a.cols(),
            x0.len(),
            ip.loss.data().len()
        )));
    }
    if !ip.loss.is_smooth() {
        return Err(InnerError::NonSmooth);
    }
    Ok(())
}

fn domain_error(z: &[f64]) -> InnerError {
    let (index, value) = z
        .iter()
        .copied()
        .enumerate()
        .find(|(_, v)| *v >= 0.0 || !v.is_finite())
        .unwrap_or((0, f64::NAN));
    InnerError::Misfit(MisfitError::DomainViolation {
        family: "loss",
        index,
        value,
    })
}

pub fn run(
    solver: InnerSolver,
    ip: &InnerProblem,
    x0: &[f64],
    lipschitz: f64,
    max_iter: usize,
    stop: &mut dyn FnMut(&Progress) -> bool,
) -> Result<InnerResult, InnerError> {
    match solver {
        InnerSolver::Apg => apg(ip, x0, lipschitz, max_iter, stop),
        InnerSolver::FrankWolfe(rule) => frank_wolfe(ip, x0, rule, max_iter, stop),
    }
}

/// FISTA with function-value restart and a backtracking safeguard on the
/// Lipschitz constant. The stopping rule is consulted before the first step,
/// so a singleton feasible set costs zero iterations.
pub fn apg(
    ip: &InnerProblem,
    x0: &[f64],
    lipschitz: f64,
    max_iter: usize,
    stop: &mut dyn FnMut(&Progress) -> bool,
) -> Result<InnerResult, InnerError> {
    check_dims(ip, x0)?;
    let (m, n) = (ip.a.rows(), ip.a.cols());
    let mut lip = lipschitz.max(f64::MIN_POSITIVE);
    let mut x = ip.constraint.project(x0, ip.tau)?;
    let mut ax = ip.a.mul_vec(&x);
    let mut fx = ip.loss.value(&ax);
    if !fx.is_finite() {
        return Err(domain_error(&ax));
    }
    let mut tr = Tracker::new(n, m);
    let mut gz = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut aty = vec![0.0; n];

    let mut evaluate = |it: usize,
                        x: &[f64],
                        ax: &[f64],
                        fx: f64,
                        tr: &mut Tracker,
                        gz: &mut [f64]|
     -> Result<bool, InnerError> {
        ip.loss.gradient_into(ax, gz);
        y.iter_mut().zip(gz.iter()).for_each(|(yi, gi)| *yi = -gi);
        ip.a.matvec_t(&y, &mut aty);
        let (phi, slope) = dual_value_with(ip, &y, &aty)?;
        tr.update(x, fx, &y, phi, slope);
        Ok(stop(&Progress {
            iteration: it,
            upper: fx,
            lower: phi,
            slope,
            y: &y,
            x,
            best_upper: tr.best_upper,
            best_lower: tr.best_lower,
        }))
    };

    if evaluate(0, &x, &ax, fx, &mut tr, &mut gz)? {
        return Ok(tr.finish(0, InnerStatus::Stopped, Vec::new()));
    }
    let mut yk = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0f64;
    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    for it in 1..=max_iter {
        let fy = ip.loss.value(&ay);
        ip.loss.gradient_into(&ay, &mut gz);
        ip.a.matvec_t(&gz, &mut grad);
        let (xn, axn, fxn) = loop {
            trial
                .iter_mut()
                .zip(yk.iter().zip(&grad))
                .for_each(|(ti, (yi, gi))| *ti = yi - gi / lip);
            let xn = ip.constraint.project(&trial, ip.tau)?;
            let axn = ip.a.mul_vec(&xn);
            let fxn = ip.loss.value(&axn);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for j in 0..n {
                let d = xn[j] - yk[j];
                lin += grad[j] * d;
                sq += d * d;
            }
            let model = fy + lin + 0.5 * lip * sq;
            if fxn.is_finite() && fxn <= model + 1e-12 * fy.abs().max(1.0) {
                break (xn, axn, fxn);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(InnerError::StepFailure);
            }
        };
        if fxn > fx {
            t = 1.0;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / tn;
        for j in 0..n {
            yk[j] = xn[j] + beta * (xn[j] - x[j]);
        }
        for i in 0..m {
            ay[i] = axn[i] + beta * (axn[i] - ax[i]);
        }
        x = xn;
        ax = axn;
        fx = fxn;
        t = tn;
        if evaluate(it, &x, &ax, fx, &mut tr, &mut gz)? {
            return Ok(tr.finish(it, InnerStatus::Stopped, Vec::new()));
        }
    }
    Ok(tr.finish(max_iter, InnerStatus::MaxInnerIterations, Vec::new()))
}

/// Projected-gradient solve of `½‖Ax − b‖²` over `C_τ`, stopping once the
/// duality gap falls to `tol_additive`.
pub fn accelerated_projected_gradient(
    a: &DenseMatrix,
    b: &[f64],
    constraint: &ConstraintSet,
    tau: f64,
    x0: &[f64],
    tol_additive: f64,
    max_iter: usize,
) -> Result<InnerResult, InnerError> {
    let loss = DataLoss::Misfit {
        kind: MisfitKind::SumSquares,
        b: b.to_vec(),
    };
    let ip = InnerProblem {
        a,
        loss: &loss,
        constraint,
        tau,
    };
    let lip = lipschitz_estimate(a, &loss);
    apg(&ip, x0, lip, max_iter, &mut |p| {
        p.best_upper - p.best_lower <= tol_additive
    })
}

/// Conditional gradient with best-so-far bounds. Each iteration logs the FW
/// linearization bound next to Φ(y_i, τ) from the dual formula; the two agree
/// up to rounding.
pub fn frank_wolfe(
    ip: &InnerProblem,
    x0: &[f64],
    rule: FwStepRule,
    max_iter: usize,
    stop: &mut dyn FnMut(&Progress) -> bool,
) -> Result<InnerResult, InnerError> {
    check_dims(ip, x0)?;
    let (m, n) = (ip.a.rows(), ip.a.cols());
    if ip.constraint.lmo(&vec![0.0; n], ip.tau).is_none() {
        return Err(InnerError::NoLmo);
    }
    let mut x = if ip.constraint.level(x0) <= ip.tau * (1.0 + 1e-12) {
        x0.to_vec()
    } else {
        ip.constraint.project(x0, ip.tau)?
    };
    let mut ax = ip.a.mul_vec(&x);
    let mut tr = Tracker::new(n, m);
    let mut gz = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut ad = vec![0.0; m];
    let mut probe = vec![0.0; m];
    let mut log = Vec::new();
    let curvature = ip.loss.curvature();
    let quadratic = ip.loss.is_quadratic();

    for it in 0..=max_iter {
        if it > 0 && it % FW_REFRESH == 0 {
            ip.a.matvec(&x, &mut ax);
        }
        let fz = ip.loss.value(&ax);
        if !fz.is_finite() {
            return Err(domain_error(&ax));
        }
        ip.loss.gradient_into(&ax, &mut gz);
        ip.a.matvec_t(&gz, &mut g);
        let s = ip.constraint.lmo(&g, ip.tau).ok_or(InnerError::NoLmo)?;
        let linearization = fz
            + g.iter()
                .zip(s.iter().zip(&x))
                .map(|(gi, (si, xi))| gi * (si - xi))
                .sum::<f64>();
        y.iter_mut().zip(&gz).for_each(|(yi, gi)| *yi = -gi);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let (phi, slope) = dual_value_with(ip, &y, &neg_g)?;
        log.push(CertificateCheck { linearization, phi });
        tr.update(&x, fz, &y, linearization, slope);
        let done = stop(&Progress {
            iteration: it,
            upper: fz,
            lower: linearization,
            slope,
            y: &y,
            x: &x,
            best_upper: tr.best_upper,
            best_lower: tr.best_lower,
        });
        if done {
            return Ok(tr.finish(it, InnerStatus::Stopped, log));
        }
        if it == max_iter {
            break;
        }
        // Direction d = s − x and its image.
        let mut d = s;
        d.iter_mut().zip(&x).for_each(|(di, xi)| *di -= xi);
        ip.a.matvec(&d, &mut ad);
        let slope0 = dot(&gz, &ad);
        let mut t = match rule {
            FwStepRule::Canonical => 2.0 / (it as f64 + 2.0),
            FwStepRule::ExactLineSearch => {
                if slope0 >= 0.0 {
                    0.0
                } else if quadratic {
                    let c = curvature.unwrap_or(1.0) * dot(&ad, &ad);
                    if c > 0.0 {
                        (-slope0 / c).clamp(0.0, 1.0)
                    } else {
                        1.0
                    }
                } else {
                    line_search(ip.loss, &ax, &ad, &mut probe)
                }
            }
        };
        // Keep the predictor inside dom L.
        let mut tries = 0;
        while t > 0.0 {
            probe
                .iter_mut()
                .zip(ax.iter().zip(&ad))
                .for_each(|(p, (a, b))| *p = a + t * b);
            if ip.loss.value(&probe).is_finite() {
                break;
            }
            t *= 0.5;
            tries += 1;
            if tries > 60 {
                t = 0.0;
            }
        }
        axpy(t, &d, &mut x);
        axpy(t, &ad, &mut ax);
    }
    Ok(tr.finish(max_iter, InnerStatus::MaxInnerIterations, log))
}

/// Minimizer over [0, 1] of `t ↦ L(z + t·d)` for a convex differentiable L,
/// by bisection on the derivative.
fn line_search(loss: &DataLoss, z: &[f64], d: &[f64], probe: &mut [f64]) -> f64 {
    let mut grad = vec![0.0; z.len()];
    let mut deriv = |t: f64, probe: &mut [f64]| -> f64 {
        probe
            .iter_mut()
            .zip(z.iter().zip(d))
            .for_each(|(p, (a, b))| *p = a + t * b);
        if !loss.value(probe).is_finite() {
            return f64::INFINITY;
        }
        loss.gradient_into(probe, &mut grad);
        dot(&grad, d)
    };
    if deriv(1.0, probe) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid, probe) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_inf;

    fn sumsq(b: &[f64]) -> DataLoss {
        DataLoss::Misfit {
            kind: MisfitKind::SumSquares,
            b: b.to_vec(),
        }
    }

    #[test]
    fn apg_identity_l1_fixed_point() {
        let a = DenseMatrix::identity(2);
        let r = accelerated_projected_gradient(
            &a,
            &[2.0, 0.0],
            &ConstraintSet::L1Ball,
            1.0,
            &[0.0, 0.0],
            1e-12,
            1000,
        )
        .unwrap();
        assert_eq!(r.status, InnerStatus::Stopped);
        assert!((r.x[0] - 1.0).abs() < 1e-9 && r.x[1].abs() < 1e-9);
        assert!((r.upper - 0.5).abs() < 1e-9);
    }

    #[test]
    fn apg_zero_residual_case() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.5, 0.0], vec![0.0, 1.0, -1.0]]).unwrap();
        let xt = [0.3, -0.2, 0.1];
        let b = a.mul_vec(&xt);
        let r = accelerated_projected_gradient(
            &a,
            &b,
            &ConstraintSet::L1Ball,
            5.0,
            &[0.0; 3],
            1e-14,
            10_000,
        )
        .unwrap();
        assert!(r.upper <= 1e-14);
    }

    #[test]
    fn singleton_set_costs_no_iterations() {
        let a = DenseMatrix::identity(3);
        let loss = sumsq(&[1.0, -2.0, 0.5]);
        let ip = InnerProblem {
            a: &a,
            loss: &loss,
            constraint: &ConstraintSet::L1Ball,
            tau: 0.0,
        };
        let r = apg(&ip, &[0.3, 0.3, 0.3], 1.0, 100, &mut |p| {
            p.best_upper - p.best_lower <= 1e-12
        })
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.x, vec![0.0; 3]);
        assert!((r.upper - 0.5 * 5.25).abs() < 1e-15);
        assert!((r.lower - r.upper).abs() < 1e-12);
        assert_eq!(r.slope, -2.0);
    }

    #[test]
    fn fw_optimal_start_has_zero_gap() {
        // b inside the ball: x = b is optimal and the gap closes at once.
        let a = DenseMatrix::identity(2);
        let loss = sumsq(&[0.3, -0.2]);
        let ip = InnerProblem {
            a: &a,
            loss: &loss,
            constraint: &ConstraintSet::L1Ball,
            tau: 1.0,
        };
        let r = frank_wolfe(&ip, &[0.3, -0.2], FwStepRule::Canonical, 10, &mut |p| {
            p.best_upper - p.best_lower <= 1e-14
        })
        .unwrap();
        assert!(r.iterations <= 1);
        assert!(r.upper - r.lower <= 1e-14);
    }

    #[test]
    fn fw_logs_match_dual_formula() {
        let a = DenseMatrix::from_rows(&[
            vec![1.0, 2.0, -1.0, 0.5],
            vec![0.0, 1.0, 3.0, -2.0],
            vec![1.5, -0.5, 0.2, 1.0],
        ])
        .unwrap();
        let loss = sumsq(&[1.0, -2.0, 0.7]);
        let ip = InnerProblem {
            a: &a,
            loss: &loss,
            constraint: &ConstraintSet::L1Ball,
            tau: 0.8,
        };
        let r = frank_wolfe(&ip, &[0.0; 4], FwStepRule::ExactLineSearch, 50, &mut |_| {
            false
        })
        .unwrap();
        assert_eq!(r.status, InnerStatus::MaxInnerIterations);
        for c in &r.log {
            assert!((c.linearization - c.phi).abs() <= 1e-10);
        }
        assert!(r.lower <= r.upper);
    }

    #[test]
    fn line_search_matches_quadratic_closed_form() {
        let loss = DataLoss::Misfit {
            kind: MisfitKind::Huber { kappa: 100.0 },
            b: vec![1.0, -1.0],
        };
        let z = [0.0, 0.0];
        let d = [2.0, -1.0];
        let mut probe = [0.0; 2];
        let t = line_search(&loss, &z, &d, &mut probe);
        // Quadratic zone: t* = ⟨b, d⟩/‖d‖² = 3/5
        assert!((t - 0.6).abs() < 1e-12);
    }

    #[test]
    fn apg_dual_slope_is_negative_polar() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]]).unwrap();
        let loss = sumsq(&[1.0, 2.0, 3.0]);
        let ip = InnerProblem {
            a: &a,
            loss: &loss,
            constraint: &ConstraintSet::L1Ball,
            tau: 0.5,
        };
        let r = apg(
            &ip,
            &[0.0; 2],
            lipschitz_estimate(&a, &loss),
            50,
            &mut |_| false,
        )
        .unwrap();
        let aty = a.tr_mul_vec(&r.y);
        assert!((r.slope + norm_inf(&aty)).abs() < 1e-14);
        let (phi, s) = dual_value(&ip, &r.y).unwrap();
        assert!((phi - r.lower).abs() < 1e-12 && s == r.slope);
    }
}
