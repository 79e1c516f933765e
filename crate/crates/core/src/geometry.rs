//! Projections onto constraint sets, gauge polars and parametric support
//! functions together with their derivative in the level parameter τ.

use thiserror::Error;

use crate::linalg::{norm1, norm2, norm_inf};

/// Absolute tolerance used by every 1-D multiplier search in this module.
pub const MULTIPLIER_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cost vector must be strictly positive, entry {index} is {value}")]
    NonPositiveCost { index: usize, value: f64 },
    #[error("conic slice is empty: no positive entry in the normal vector")]
    Infeasible,
    #[error("level must be nonnegative, got {0}")]
    NegativeLevel(f64),
    #[error("elastic-net weight must lie in [0, 1], got {0}")]
    BadElasticWeight(f64),
    #[error("polar of the Minkowski sum needs alpha + beta > 0")]
    DegenerateMinkowski,
    #[error("{0}")]
    Domain(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Convex sets of the form `X ∩ [φ ≤ τ]`, parameterized by the level τ.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    /// `{x : ‖x‖₁ ≤ τ}`
    L1Ball,
    /// `{x ≥ 0 : ⟨ĉ, x⟩ ≤ τ}` with ĉ > 0.
    OrthantBudget { c_hat: Vec<f64> },
    /// `{x : α‖x‖₁ + (1−α)/2 ‖x‖² ≤ τ}`
    ElasticNet { alpha_en: f64 },
    /// `{x ≥ 0 : ⟨c, x⟩ = τ}`
    ConicSlice { c: Vec<f64> },
}

/// Value of a parametric support function and its derivative in τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportValue {
    pub value: f64,
    pub tau_slope: f64,
}

impl ConstraintSet {
    pub fn validate(&self, dimension: usize) -> Result<(), GeometryError> {
        match self {
            ConstraintSet::L1Ball => Ok(()),
            ConstraintSet::OrthantBudget { c_hat } => {
                check_len(c_hat.len(), dimension)?;
                check_positive(c_hat)
            }
            ConstraintSet::ElasticNet { alpha_en } => check_alpha_en(*alpha_en),
            ConstraintSet::ConicSlice { c } => {
                check_len(c.len(), dimension)?;
                if c.iter().any(|&v| v > 0.0) {
                    Ok(())
                } else {
                    Err(GeometryError::Infeasible)
                }
            }
        }
    }

    /// Euclidean projection of `z` onto the set at level `tau`.
    pub fn project(&self, z: &[f64], tau: f64) -> Result<Vec<f64>, GeometryError> {
        match self {
            ConstraintSet::L1Ball => Ok(project_l1_ball(z, tau)),
            ConstraintSet::OrthantBudget { c_hat } => project_orthant_budget(z, c_hat, tau),
            ConstraintSet::ElasticNet { alpha_en } => project_elastic_net(z, *alpha_en, tau),
            ConstraintSet::ConicSlice { c } => project_conic_slice(z, c, tau),
        }
    }

    /// Linear minimization oracle `argmin_{x ∈ C_τ} ⟨g, x⟩`, when one is implemented.
    pub fn lmo(&self, g: &[f64], tau: f64) -> Option<Vec<f64>> {
        match self {
            ConstraintSet::L1Ball => Some(lmo_l1_ball(g, tau)),
            _ => None,
        }
    }

    /// `δ*_{C_τ}(w)` and an element of its τ-derivative.
    pub fn support(&self, w: &[f64], tau: f64) -> Result<SupportValue, GeometryError> {
        match self {
            ConstraintSet::L1Ball => {
                let p = gauge_polar(&PolarKind::Linf, w)?;
                Ok(SupportValue {
                    value: tau * p,
                    tau_slope: p,
                })
            }
            ConstraintSet::OrthantBudget { c_hat } => {
                let p = polar_nonneg_linear(w, c_hat)?;
                Ok(SupportValue {
                    value: tau * p,
                    tau_slope: p,
                })
            }
            ConstraintSet::ElasticNet { alpha_en } => support_elastic_net_level(w, *alpha_en, tau),
            ConstraintSet::ConicSlice { c } => {
                // The slice support is only finite for strictly positive normals.
                check_positive(c)?;
                let p = w
                    .iter()
                    .zip(c)
                    .map(|(wi, ci)| wi / ci)
                    .fold(f64::NEG_INFINITY, f64::max);
                Ok(SupportValue {
                    value: tau * p,
                    tau_slope: p,
                })
            }
        }
    }

    /// The level function φ (plus the indicator of X) evaluated at `x`.
    pub fn level(&self, x: &[f64]) -> f64 {
        match self {
            ConstraintSet::L1Ball => norm1(x),
            ConstraintSet::OrthantBudget { c_hat } | ConstraintSet::ConicSlice { c: c_hat } => {
                if x.iter().any(|&v| v < 0.0) {
                    f64::INFINITY
                } else {
                    x.iter().zip(c_hat).map(|(a, b)| a * b).sum()
                }
            }
            ConstraintSet::ElasticNet { alpha_en } => elastic_net_value(x, *alpha_en),
        }
    }
}

fn check_len(got: usize, expected: usize) -> Result<(), GeometryError> {
    if got == expected {
        Ok(())
    } else {
        Err(GeometryError::Dimension { expected, got })
    }
}

fn check_positive(c: &[f64]) -> Result<(), GeometryError> {
    match c.iter().enumerate().find(|(_, &v)| v <= 0.0 || v.is_nan()) {
        Some((index, &value)) => Err(GeometryError::NonPositiveCost { index, value }),
        None => Ok(()),
    }
}

fn check_alpha_en(alpha_en: f64) -> Result<(), GeometryError> {
    if (0.0..=1.0).contains(&alpha_en) {
        Ok(())
    } else {
        Err(GeometryError::BadElasticWeight(alpha_en))
    }
}

/// `α‖x‖₁ + (1−α)/2 ‖x‖²`
pub fn elastic_net_value(x: &[f64], alpha_en: f64) -> f64 {
    alpha_en * norm1(x) + 0.5 * (1.0 - alpha_en) * x.iter().map(|v| v * v).sum::<f64>()
}

/// Sort-and-threshold projection onto the ℓ₁ ball of radius `tau`.
pub fn project_l1_ball(z: &[f64], tau: f64) -> Vec<f64> {
    if tau <= 0.0 {
        return vec![0.0; z.len()];
    }
    if norm1(z) <= tau {
        return z.to_vec();
    }
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - tau) / (j + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    z.iter()
        .map(|&v| v.signum() * (v.abs() - theta).max(0.0))
        .collect()
}

/// Vertex of the ℓ₁ ball minimizing `⟨g, ·⟩`. Ties go to the lowest index.
pub fn lmo_l1_ball(g: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    if g.is_empty() || tau <= 0.0 {
        return out;
    }
    let mut best = 0;
    for (j, v) in g.iter().enumerate() {
        if v.abs() > g[best].abs() {
            best = j;
        }
    }
    // a zero gradient picks +tau * e_1
    let s = if g[best] > 0.0 { 1.0 } else { -1.0 };
    out[best] = -tau * s;
    out
}

/// Projection onto `{x ≥ 0 : ⟨ĉ, x⟩ ≤ τ}`.
///
/// Clip to the orthant; if the budget is violated, the multiplier λ of the
/// budget constraint solves `Σ ĉᵢ (zᵢ − λĉᵢ)₊ = τ`, which is piecewise linear in
/// λ and solved exactly on the segment between sorted breakpoints `zᵢ/ĉᵢ`.
pub fn project_orthant_budget(
    z: &[f64],
    c_hat: &[f64],
    tau: f64,
) -> Result<Vec<f64>, GeometryError> {
    check_len(c_hat.len(), z.len())?;
    check_positive(c_hat)?;
    if tau < 0.0 {
        return Err(GeometryError::NegativeLevel(tau));
    }
    let clipped: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
    let budget: f64 = clipped.iter().zip(c_hat).map(|(x, c)| x * c).sum();
    if budget <= tau {
        return Ok(clipped);
    }
    if tau == 0.0 {
        return Ok(vec![0.0; z.len()]);
    }
    let mut order: Vec<usize> = (0..z.len()).filter(|&i| z[i] > 0.0).collect();
    order.sort_by(|&a, &b| (z[b] / c_hat[b]).total_cmp(&(z[a] / c_hat[a])));
    let mut s_cz = 0.0;
    let mut s_cc = 0.0;
    let mut lambda = 0.0;
    for (k, &i) in order.iter().enumerate() {
        s_cz += c_hat[i] * z[i];
        s_cc += c_hat[i] * c_hat[i];
        let cand = (s_cz - tau) / s_cc;
        let next = order.get(k + 1).map_or(0.0, |&n| z[n] / c_hat[n]);
        if cand >= next {
            lambda = cand;
            break;
        }
    }
    Ok(z.iter()
        .zip(c_hat)
        .map(|(zi, ci)| (zi - lambda * ci).max(0.0))
        .collect())
}

/// Projection onto the slice `{x ≥ 0 : ⟨c, x⟩ = level}` of the nonnegative orthant.
///
/// The multiplier β of the equality constraint maximizes the concave dual
/// `½ dist²_K(z − βc) + β(⟨c,z⟩ − level) − ½β²‖c‖²`. Its stationarity
/// residual `⟨c, (z − βc)₊⟩ − level` is nonincreasing in β, so β is bracketed
/// and bisected, then polished on its linear piece.
pub fn project_conic_slice(z: &[f64], c: &[f64], level: f64) -> Result<Vec<f64>, GeometryError> {
    check_len(c.len(), z.len())?;
    if !c.iter().any(|&v| v > 0.0) {
        return Err(GeometryError::Infeasible);
    }
    if level < 0.0 {
        return Err(GeometryError::NegativeLevel(level));
    }
    let residual = |beta: f64| -> f64 {
        z.iter()
            .zip(c)
            .map(|(zi, ci)| ci * (zi - beta * ci).max(0.0))
            .sum::<f64>()
            - level
    };
    let mut lo = -1.0;
    while residual(lo) < 0.0 {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while residual(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= MULTIPLIER_TOL * (1.0 + mid.abs()) {
            break;
        }
    }
    let mut beta = 0.5 * (lo + hi);
    // Solve exactly on the active piece so that ⟨c, x⟩ = level to rounding.
    let (mut scz, mut scc) = (0.0, 0.0);
    for (zi, ci) in z.iter().zip(c) {
        if zi - beta * ci > 0.0 {
            scz += ci * zi;
            scc += ci * ci;
        }
    }
    if scc > 0.0 {
        let exact = (scz - level) / scc;
        let x_exact: Vec<f64> = z
            .iter()
            .zip(c)
            .map(|(zi, ci)| (zi - exact * ci).max(0.0))
            .collect();
        let same_support = z
            .iter()
            .zip(c)
            .all(|(zi, ci)| (zi - exact * ci > 0.0) == (zi - beta * ci > 0.0));
        if same_support && x_exact.iter().all(|v| v.is_finite()) {
            beta = exact;
        }
    }
    Ok(z.iter()
        .zip(c)
        .map(|(zi, ci)| (zi - beta * ci).max(0.0))
        .collect())
}

/// Projection onto the elastic-net level set `{x : α‖x‖₁ + (1−α)/2‖x‖² ≤ τ}`.
///
/// After the sign flip to `z ≥ 0` the solution is
/// `xᵢ = (zᵢ − λα)₊ / (1 + λ(1−α))` for the unique λ > 0 at which the level
/// constraint is tight. On each segment between sorted breakpoints the
/// tightness equation is a quadratic in λ with coefficients
/// `a = τ(1−α)² + jα²(1−α)/2`, `b = 2τ(1−α) + jα²`, `c = τ − αS₁ − (1−α)S₂/2`,
/// where `j` is the active count and `S₁, S₂` the active sums of `zᵢ, zᵢ²`.
pub fn project_elastic_net(z: &[f64], alpha_en: f64, tau: f64) -> Result<Vec<f64>, GeometryError> {
    check_alpha_en(alpha_en)?;
    if tau < 0.0 {
        return Err(GeometryError::NegativeLevel(tau));
    }
    if elastic_net_value(z, alpha_en) <= tau {
        return Ok(z.to_vec());
    }
    if alpha_en == 1.0 {
        return Ok(project_l1_ball(z, tau));
    }
    if alpha_en == 0.0 {
        let nz = norm2(z);
        let scale = ((2.0 * tau).sqrt() / nz).min(1.0);
        return Ok(z.iter().map(|v| v * scale).collect());
    }
    if tau == 0.0 {
        return Ok(vec![0.0; z.len()]);
    }
    let a_en = alpha_en;
    let b_en = 1.0 - alpha_en;
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut lambda = None;
    for (k, &m) in mags.iter().enumerate() {
        s1 += m;
        s2 += m * m;
        // Coordinates equal to the next one share its breakpoint.
        if mags.get(k + 1).is_some_and(|&n| n == m) {
            continue;
        }
        let j = (k + 1) as f64;
        let qa = tau * b_en * b_en + 0.5 * j * a_en * a_en * b_en;
        let qb = 2.0 * tau * b_en + j * a_en * a_en;
        let qc = tau - a_en * s1 - 0.5 * b_en * s2;
        if qc >= 0.0 {
            continue;
        }
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        let root = -2.0 * qc / (qb + disc.sqrt());
        let upper = m / a_en;
        let lower = mags.get(k + 1).map_or(0.0, |&n| n / a_en);
        let slack = 1e-12 * upper.max(1.0);
        if root >= lower - slack && root <= upper + slack {
            lambda = Some(root);
            break;
        }
    }
    let lambda = lambda.unwrap_or_else(|| bisect_elastic_multiplier(&mags, a_en, tau));
    let denom = 1.0 + lambda * b_en;
    Ok(z.iter()
        .map(|&v| v.signum() * (v.abs() - lambda * a_en).max(0.0) / denom)
        .collect())
}

// Fallback for segments lost to rounding: the level of x(λ) is decreasing in λ.
fn bisect_elastic_multiplier(mags: &[f64], a_en: f64, tau: f64) -> f64 {
    let level = |lambda: f64| {
        let d = 1.0 + lambda * (1.0 - a_en);
        mags.iter()
            .map(|&m| {
                let x = (m - lambda * a_en).max(0.0) / d;
                a_en * x + 0.5 * (1.0 - a_en) * x * x
            })
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (0.0, mags.first().copied().unwrap_or(0.0) / a_en);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if level(mid) > tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Polar gauges used for Newton slopes.
#[derive(Debug, Clone, PartialEq)]
pub enum PolarKind {
    /// Polar of ‖·‖₁.
    Linf,
    /// Polar of `x ↦ ⟨ĉ, x⟩ + δ_{x ≥ 0}`.
    NonnegLinear { c_hat: Vec<f64> },
    /// Gauge of `αB∞ + βB₂`, the polar of `α‖·‖₁ + β‖·‖₂`.
    MinkowskiSum { alpha: f64, beta: f64 },
}

pub fn gauge_polar(kind: &PolarKind, z: &[f64]) -> Result<f64, GeometryError> {
    match kind {
        PolarKind::Linf => Ok(norm_inf(z)),
        PolarKind::NonnegLinear { c_hat } => polar_nonneg_linear(z, c_hat),
        PolarKind::MinkowskiSum { alpha, beta } => minkowski_polar(z, *alpha, *beta),
    }
}

fn polar_nonneg_linear(z: &[f64], c_hat: &[f64]) -> Result<f64, GeometryError> {
    check_len(c_hat.len(), z.len())?;
    check_positive(c_hat)?;
    Ok(z.iter()
        .zip(c_hat)
        .map(|(zi, ci)| zi / ci)
        .fold(0.0, f64::max))
}

/// Smallest μ ≥ 0 with `‖(|z| − μα)₊‖₂ ≤ μβ`, by monotone bisection.
fn minkowski_polar(z: &[f64], alpha: f64, beta: f64) -> Result<f64, GeometryError> {
    if alpha < 0.0 || beta < 0.0 || (alpha == 0.0 && beta == 0.0) {
        return Err(GeometryError::DegenerateMinkowski);
    }
    if alpha == 0.0 {
        return Ok(norm2(z) / beta);
    }
    let zinf = norm_inf(z);
    if beta == 0.0 || zinf == 0.0 {
        return Ok(zinf / alpha);
    }
    let excess = |mu: f64| -> f64 {
        z.iter()
            .map(|v| (v.abs() - mu * alpha).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
            - mu * beta
    };
    let (mut lo, mut hi) = (0.0, zinf / alpha);
    while hi - lo > MULTIPLIER_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `δ*_{[φ_en ≤ τ]}(z)` together with its τ-derivative, the optimal μ in
/// `inf_{μ>0} τμ + ‖(|z| − μα)₊‖² / (2(1−α)μ)`.
///
/// On the segment where the top `j` magnitudes are active the objective is
/// `τμ + (S₂ − 2μαS₁ + jμ²α²)/(2(1−α)μ)`, minimized at
/// `μ = √(S₂ / (2(1−α)τ + jα²))`. The overall objective is convex, so the
/// segment whose stationary point falls inside it holds the minimizer.
pub fn support_elastic_net_level(
    z: &[f64],
    alpha_en: f64,
    tau: f64,
) -> Result<SupportValue, GeometryError> {
    check_alpha_en(alpha_en)?;
    if tau < 0.0 {
        return Err(GeometryError::NegativeLevel(tau));
    }
    let zinf = norm_inf(z);
    if zinf == 0.0 {
        return Ok(SupportValue {
            value: 0.0,
            tau_slope: 0.0,
        });
    }
    if alpha_en == 1.0 {
        return Ok(SupportValue {
            value: tau * zinf,
            tau_slope: zinf,
        });
    }
    let b_en = 1.0 - alpha_en;
    if alpha_en == 0.0 {
        if tau == 0.0 {
            return Err(GeometryError::Domain(
                "ridge level set has an unbounded tau-slope at tau = 0",
            ));
        }
        let nz = norm2(z);
        let mu = nz / (2.0 * tau).sqrt();
        return Ok(SupportValue {
            value: (2.0 * tau).sqrt() * nz,
            tau_slope: mu,
        });
    }
    let mut mags: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let objective = |mu: f64| -> f64 {
        let sq: f64 = mags
            .iter()
            .take_while(|&&m| m > mu * alpha_en)
            .map(|&m| (m - mu * alpha_en).powi(2))
            .sum();
        tau * mu + sq / (2.0 * b_en * mu)
    };
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut best_mu = zinf / alpha_en;
    let mut best_val = objective(best_mu);
    for (k, &m) in mags.iter().enumerate() {
        s1 += m;
        s2 += m * m;
        if mags.get(k + 1).is_some_and(|&n| n == m) {
            continue;
        }
        let j = (k + 1) as f64;
        let upper = m / alpha_en;
        let lower = mags.get(k + 1).map_or(0.0, |&n| n / alpha_en);
        let stationary = (s2 / (2.0 * b_en * tau + j * alpha_en * alpha_en)).sqrt();
        let mu = stationary.clamp(lower, upper);
        if mu <= 0.0 {
            continue;
        }
        let val = tau * mu
            + (s2 - 2.0 * mu * alpha_en * s1 + j * mu * mu * alpha_en * alpha_en)
                / (2.0 * b_en * mu);
        if val < best_val {
            best_val = val;
            best_mu = mu;
        }
    }
    Ok(SupportValue {
        value: best_val,
        tau_slope: best_mu,
    })
}
