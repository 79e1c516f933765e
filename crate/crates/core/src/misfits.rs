//! Misfit functions ρ and GLM negative log-likelihoods with gradients,
//! convex conjugates and dual-objective evaluators.
//!
//! The Huber function is the Moreau envelope of `κ|·|`: `½r²` on `|r| ≤ κ`
//! and `κ|r| − κ²/2` outside. GLM losses drop the normalization constant
//! `K = −Σ ln C(bᵢ, φ)` on both the primal and the dual side, so targets σ
//! are expressed in the same K-free units.

use thiserror::Error;

use crate::linalg::dot;

// Slack for indicator-domain tests on gradients that land exactly on a boundary.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MisfitError {
    #[error("Huber threshold kappa must be positive, got {0}")]
    BadKappa(f64),
    #[error("quantile q must lie in (0, 1), got {0}")]
    BadQuantile(f64),
    #[error("dispersion must be positive, got {0}")]
    BadDispersion(f64),
    #[error("observation {index} = {value} is outside the {family} data domain")]
    BadObservation {
        family: &'static str,
        index: usize,
        value: f64,
    },
    #[error("linear predictor entry {index} = {value} is outside the {family} domain")]
    DomainViolation {
        family: &'static str,
        index: usize,
        value: f64,
    },
}

/// Separable misfits applied to a residual vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MisfitKind {
    /// ‖r‖₂
    Norm2,
    /// ½‖r‖₂²
    SumSquares,
    Huber {
        kappa: f64,
    },
    /// Asymmetric Huber with breakpoints `−qκ` and `(1−q)κ`.
    QuantileHuber {
        kappa: f64,
        q: f64,
    },
}

impl MisfitKind {
    pub fn validate(&self) -> Result<(), MisfitError> {
        match *self {
            MisfitKind::Huber { kappa } if !(kappa > 0.0) => Err(MisfitError::BadKappa(kappa)),
            MisfitKind::QuantileHuber { kappa, .. } if !(kappa > 0.0) => {
                Err(MisfitError::BadKappa(kappa))
            }
            MisfitKind::QuantileHuber { q, .. } if !(q > 0.0 && q < 1.0) => {
                Err(MisfitError::BadQuantile(q))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, r: &[f64]) -> f64 {
        match *self {
            MisfitKind::Norm2 => dot(r, r).sqrt(),
            MisfitKind::SumSquares => 0.5 * dot(r, r),
            MisfitKind::Huber { kappa } => r.iter().map(|&v| huber(v, kappa)).sum(),
            MisfitKind::QuantileHuber { kappa, q } => {
                r.iter().map(|&v| quantile_huber(v, kappa, q)).sum()
            }
        }
    }

    pub fn gradient_into(&self, r: &[f64], out: &mut [f64]) {
        match *self {
            MisfitKind::Norm2 => {
                let n = dot(r, r).sqrt();
                let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
                out.iter_mut().zip(r).for_each(|(o, v)| *o = v * inv);
            }
            MisfitKind::SumSquares => out.copy_from_slice(r),
            MisfitKind::Huber { kappa } => out
                .iter_mut()
                .zip(r)
                .for_each(|(o, &v)| *o = v.clamp(-kappa, kappa)),
            MisfitKind::QuantileHuber { kappa, q } => out
                .iter_mut()
                .zip(r)
                .for_each(|(o, &v)| *o = (v / kappa).clamp(-q, 1.0 - q)),
        }
    }

    /// Convex conjugate ρ*(w); `+∞` outside its domain.
    pub fn conjugate(&self, w: &[f64]) -> f64 {
        match *self {
            MisfitKind::Norm2 => {
                if dot(w, w).sqrt() <= 1.0 + DOMAIN_SLACK {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            MisfitKind::SumSquares => 0.5 * dot(w, w),
            MisfitKind::Huber { kappa } => {
                if w.iter().all(|v| v.abs() <= kappa * (1.0 + DOMAIN_SLACK)) {
                    0.5 * dot(w, w)
                } else {
                    f64::INFINITY
                }
            }
            MisfitKind::QuantileHuber { kappa, q } => {
                let lo = -q - DOMAIN_SLACK;
                let hi = 1.0 - q + DOMAIN_SLACK;
                if w.iter().all(|&v| v >= lo && v <= hi) {
                    0.5 * kappa * dot(w, w)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Lipschitz constant of the gradient, `None` for the nonsmooth 2-norm.
    pub fn curvature(&self) -> Option<f64> {
        match *self {
            MisfitKind::Norm2 => None,
            MisfitKind::SumSquares | MisfitKind::Huber { .. } => Some(1.0),
            MisfitKind::QuantileHuber { kappa, .. } => Some(1.0 / kappa),
        }
    }
}

fn huber(r: f64, kappa: f64) -> f64 {
    if r.abs() <= kappa {
        0.5 * r * r
    } else {
        kappa * r.abs() - 0.5 * kappa * kappa
    }
}

fn quantile_huber(r: f64, kappa: f64, q: f64) -> f64 {
    if r < -q * kappa {
        q * r.abs() - 0.5 * kappa * q * q
    } else if r > (1.0 - q) * kappa {
        (1.0 - q) * r.abs() - 0.5 * kappa * (1.0 - q) * (1.0 - q)
    } else {
        r * r / (2.0 * kappa)
    }
}

/// Misfit value and gradient at residual `r`.
pub fn misfit_eval(kind: &MisfitKind, r: &[f64]) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; r.len()];
    kind.gradient_into(r, &mut g);
    (kind.value(r), g)
}

/// Exponential families with canonical link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlmFamily {
    Gaussian,
    Huber { kappa: f64 },
    Poisson,
    Bernoulli,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Glm {
    pub family: GlmFamily,
    pub dispersion: f64,
}

impl Glm {
    pub fn new(family: GlmFamily) -> Self {
        Self {
            family,
            dispersion: 1.0,
        }
    }

    pub fn with_dispersion(mut self, dispersion: f64) -> Self {
        self.dispersion = dispersion;
        self
    }

    pub fn validate(&self, b: &[f64]) -> Result<(), MisfitError> {
        if !(self.dispersion > 0.0) {
            return Err(MisfitError::BadDispersion(self.dispersion));
        }
        if let GlmFamily::Huber { kappa } = self.family {
            if !(kappa > 0.0) {
                return Err(MisfitError::BadKappa(kappa));
            }
        }
        let family = self.family.name();
        for (index, &value) in b.iter().enumerate() {
            let ok = value.is_finite()
                && match self.family {
                    GlmFamily::Gaussian | GlmFamily::Huber { .. } => true,
                    GlmFamily::Poisson => value >= 0.0,
                    GlmFamily::Bernoulli => value == 0.0 || value == 1.0,
                    GlmFamily::Gamma => value > 0.0,
                };
            if !ok {
                return Err(MisfitError::BadObservation {
                    family,
                    index,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Σ (c(zᵢ) − bᵢzᵢ)/φ, `+∞` when some zᵢ leaves dom c.
    pub fn loss_value(&self, b: &[f64], z: &[f64]) -> f64 {
        let s: f64 = z
            .iter()
            .zip(b)
            .map(|(&zi, &bi)| self.family.cumulant(zi) - bi * zi)
            .sum();
        s / self.dispersion
    }

    pub fn loss_gradient_into(&self, b: &[f64], z: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.dispersion;
        for ((o, &zi), &bi) in out.iter_mut().zip(z).zip(b) {
            *o = (self.family.mean(zi) - bi) * inv;
        }
    }

    /// `(1/φ) Σ c*(bᵢ − φ yᵢ)`, the conjugate of the loss evaluated at `−y`.
    pub fn neg_conjugate(&self, b: &[f64], y: &[f64]) -> f64 {
        let s: f64 = y
            .iter()
            .zip(b)
            .map(|(&yi, &bi)| glm_conjugate(&self.family, bi - self.dispersion * yi))
            .sum();
        s / self.dispersion
    }

    pub fn curvature(&self) -> Option<f64> {
        let c = match self.family {
            GlmFamily::Gaussian | GlmFamily::Huber { .. } => 1.0,
            GlmFamily::Bernoulli => 0.25,
            GlmFamily::Poisson | GlmFamily::Gamma => return None,
        };
        Some(c / self.dispersion)
    }
}

impl GlmFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GlmFamily::Gaussian => "gaussian",
            GlmFamily::Huber { .. } => "huber",
            GlmFamily::Poisson => "poisson",
            GlmFamily::Bernoulli => "bernoulli",
            GlmFamily::Gamma => "gamma",
        }
    }

    /// The cumulant c(θ).
    pub fn cumulant(&self, theta: f64) -> f64 {
        match *self {
            GlmFamily::Gaussian => 0.5 * theta * theta,
            GlmFamily::Huber { kappa } => huber(theta, kappa),
            GlmFamily::Poisson => theta.exp(),
            GlmFamily::Bernoulli => theta.max(0.0) + (-theta.abs()).exp().ln_1p(),
            GlmFamily::Gamma => {
                if theta < 0.0 {
                    -(-theta).ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// c'(θ), the mean under the canonical link.
    pub fn mean(&self, theta: f64) -> f64 {
        match *self {
            GlmFamily::Gaussian => theta,
            GlmFamily::Huber { kappa } => theta.clamp(-kappa, kappa),
            GlmFamily::Poisson => theta.exp(),
            GlmFamily::Bernoulli => {
                if theta >= 0.0 {
                    1.0 / (1.0 + (-theta).exp())
                } else {
                    let e = theta.exp();
                    e / (1.0 + e)
                }
            }
            GlmFamily::Gamma => -1.0 / theta,
        }
    }

    pub fn in_domain(&self, theta: f64) -> bool {
        match self {
            GlmFamily::Gamma => theta < 0.0,
            _ => theta.is_finite(),
        }
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Conjugate c*(w) of the cumulant, `+∞` outside its domain.
///
/// For the Gamma cumulant `c(θ) = −ln(−θ)` on θ < 0 the conjugate is
/// `−1 − ln w` on w > 0.
pub fn glm_conjugate(family: &GlmFamily, w: f64) -> f64 {
    match *family {
        GlmFamily::Gaussian => 0.5 * w * w,
        GlmFamily::Huber { kappa } => {
            if w.abs() <= kappa * (1.0 + DOMAIN_SLACK) {
                0.5 * w * w
            } else {
                f64::INFINITY
            }
        }
        GlmFamily::Poisson => {
            if w >= 0.0 {
                xlogx(w) - w
            } else {
                f64::INFINITY
            }
        }
        GlmFamily::Bernoulli => {
            if (0.0..=1.0).contains(&w) {
                xlogx(w) + xlogx(1.0 - w)
            } else {
                f64::INFINITY
            }
        }
        GlmFamily::Gamma => {
            if w > 0.0 {
                -1.0 - w.ln()
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Negative log-likelihood `Σ (c(zᵢ) − bᵢzᵢ)/φ` and its gradient in `z`.
pub fn glm_loss(glm: &Glm, b: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>), MisfitError> {
    glm.validate(b)?;
    if let Some((index, &value)) = z
        .iter()
        .enumerate()
        .find(|(_, &v)| !glm.family.in_domain(v))
    {
        return Err(MisfitError::DomainViolation {
            family: glm.family.name(),
            index,
            value,
        });
    }
    let mut g = vec![0.0; z.len()];
    glm.loss_gradient_into(b, z, &mut g);
    Ok((glm.loss_value(b, z), g))
}

/// Dual objective `−(1/φ) Σ c*(bᵢ − φyᵢ) − τ φ°(Aᵀy)`; `−∞` when the
/// certificate leaves the conjugate domain.
pub fn glm_dual_value(glm: &Glm, y: &[f64], tau: f64, b: &[f64], polar_of_aty: f64) -> f64 {
    -glm.neg_conjugate(b, y) - tau * polar_of_aty
}

/// A smooth (or 2-norm) loss of the linear predictor `z = Ax`, paired with
/// its data. This is what the inner solvers minimize.
#[derive(Debug, Clone, PartialEq)]
pub enum DataLoss {
    /// `ρ(z − b)`
    Misfit { kind: MisfitKind, b: Vec<f64> },
    /// GLM negative log-likelihood of `b` at canonical parameter `z`.
    Glm { glm: Glm, b: Vec<f64> },
}

impl DataLoss {
    pub fn data(&self) -> &[f64] {
        match self {
            DataLoss::Misfit { b, .. } | DataLoss::Glm { b, .. } => b,
        }
    }

    pub fn validate(&self) -> Result<(), MisfitError> {
        match self {
            DataLoss::Misfit { kind, .. } => kind.validate(),
            DataLoss::Glm { glm, b } => glm.validate(b),
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            DataLoss::Misfit { kind, b } => {
                let r: Vec<f64> = z.iter().zip(b).map(|(a, c)| a - c).collect();
                kind.value(&r)
            }
            DataLoss::Glm { glm, b } => glm.loss_value(b, z),
        }
    }

    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            DataLoss::Misfit { kind, b } => {
                let r: Vec<f64> = z.iter().zip(b).map(|(a, c)| a - c).collect();
                kind.gradient_into(&r, out);
            }
            DataLoss::Glm { glm, b } => glm.loss_gradient_into(b, z, out),
        }
    }

    /// `L*(−y)`. For a misfit `L(z) = ρ(z − b)` this is `−⟨y, b⟩ + ρ*(−y)`.
    pub fn neg_conjugate(&self, y: &[f64]) -> f64 {
        match self {
            DataLoss::Misfit { kind, b } => {
                let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                -dot(y, b) + kind.conjugate(&neg)
            }
            DataLoss::Glm { glm, b } => glm.neg_conjugate(b, y),
        }
    }

    pub fn curvature(&self) -> Option<f64> {
        match self {
            DataLoss::Misfit { kind, .. } => kind.curvature(),
            DataLoss::Glm { glm, .. } => glm.curvature(),
        }
    }

    /// True when the loss is an exact quadratic with Hessian `curvature · I`.
    pub fn is_quadratic(&self) -> bool {
        matches!(
            self,
            DataLoss::Misfit {
                kind: MisfitKind::SumSquares,
                ..
            } | DataLoss::Glm {
                glm: Glm {
                    family: GlmFamily::Gaussian,
                    ..
                },
                ..
            }
        )
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(
            self,
            DataLoss::Misfit {
                kind: MisfitKind::Norm2,
                ..
            }
        )
    }
}
