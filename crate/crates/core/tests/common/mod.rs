//! Reference oracles shared by the integration tests. Everything here is
//! deliberately naive and independent of the library's solvers.
#![allow(dead_code)]

use levelset::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(m: usize, n: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..m * n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt())
        .collect();
    DenseMatrix::new(m, n, data).unwrap()
}

pub fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Projection onto the ℓ₁ ball by bisection on the soft threshold.
pub fn l1_project_bisect(z: &[f64], tau: f64) -> Vec<f64> {
    let n1: f64 = z.iter().map(|v| v.abs()).sum();
    if n1 <= tau {
        return z.to_vec();
    }
    if tau <= 0.0 {
        return vec![0.0; z.len()];
    }
    let (mut lo, mut hi) = (0.0, z.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = z.iter().map(|v| (v.abs() - mid).max(0.0)).sum();
        if s > tau {
            lo = mid
        } else {
            hi = mid
        }
    }
    let th = 0.5 * (lo + hi);
    z.iter()
        .map(|v| v.signum() * (v.abs() - th).max(0.0))
        .collect()
}

/// Plain projected gradient for ½‖Ax − b‖² with a fixed 1/L step. Returns
/// the final point and ‖Ax − b‖.
pub fn plain_pg<P: Fn(&[f64]) -> Vec<f64>>(
    a: &DenseMatrix,
    b: &[f64],
    project: P,
    iters: usize,
) -> (Vec<f64>, f64) {
    let l = a.spectral_norm_sq(500, 1e-15) * 1.01;
    let mut x = project(&vec![0.0; a.cols()]);
    for _ in 0..iters {
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| p - q).collect();
        let g = a.tr_mul_vec(&r);
        let step: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi / l).collect();
        x = project(&step);
    }
    let r: f64 = a
        .mul_vec(&x)
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    (x, r)
}

/// v(τ) = min ‖Ax − b‖ over the ℓ₁ ball, by plain projected gradient.
pub fn bpdn_value(a: &DenseMatrix, b: &[f64], tau: f64, iters: usize) -> f64 {
    plain_pg(a, b, |z| l1_project_bisect(z, tau), iters).1
}

/// Smallest τ with v(τ) ≤ σ: double τ until v drops below σ, then bisect.
pub fn bpdn_reference_opt(a: &DenseMatrix, b: &[f64], sigma: f64, iters: usize) -> f64 {
    let mut hi = 1.0;
    while bpdn_value(a, b, hi, iters) > sigma {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if bpdn_value(a, b, mid, iters) > sigma {
            lo = mid
        } else {
            hi = mid
        }
    }
    0.5 * (lo + hi)
}

/// Soft-thresholding threshold θ with ‖soft(b, θ) − b‖ = σ, by bisection.
pub fn soft_threshold_reference(b: &[f64], sigma: f64) -> Vec<f64> {
    let resid = |t: f64| b.iter().map(|v| v.abs().min(t).powi(2)).sum::<f64>().sqrt();
    let (mut lo, mut hi) = (0.0, b.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if resid(mid) > sigma {
            hi = mid
        } else {
            lo = mid
        }
    }
    let th = 0.5 * (lo + hi);
    b.iter()
        .map(|v| v.signum() * (v.abs() - th).max(0.0))
        .collect()
}
