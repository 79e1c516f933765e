//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use levelset::geometry::{project_elastic_net, support_elastic_net_level};
use levelset::inner::{dual_value, frank_wolfe, InnerProblem};
use levelset::linalg::{norm1, norm2};
use levelset::misfits::glm_conjugate;
use levelset::oracle::{SyntheticMode, SyntheticOracle};
use levelset::problems::{
    generate_instance, recover_feasible, solve_bpdn, solve_lp, solve_robust_sparse, InstanceSpec,
};
use levelset::rootfind::{exact_root_solve, iteration_bound, newton_solve, secant_solve};
use levelset::{
    ConstraintSet, DataLoss, DenseMatrix, FwStepRule, GlmFamily, LevelSetProblem, Method,
    MinorantEvaluation, MisfitKind, OracleReply, RootConfig, RootStatus, SolveOptions,
};
use levelset_cli::write_dense;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < budget, || format!("took {t:?}, budget {budget:?}"))
}

// ---------------------------------------------------------------------------
// Independent reference oracles.

fn gaussian_matrix(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..m * n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt())
        .collect();
    DenseMatrix::new(m, n, data).unwrap()
}

fn l1_project_bisect(z: &[f64], tau: f64) -> Vec<f64> {
    if z.iter().map(|v| v.abs()).sum::<f64>() <= tau {
        return z.to_vec();
    }
    let (mut lo, mut hi) = (0.0, z.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if z.iter().map(|v| (v.abs() - mid).max(0.0)).sum::<f64>() > tau {
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

/// min ‖Ax − b‖ over the ℓ₁ ball by plain projected gradient.
fn bpdn_value(a: &DenseMatrix, b: &[f64], tau: f64, l: f64, iters: usize) -> f64 {
    let mut x = vec![0.0; a.cols()];
    let mut best = f64::INFINITY;
    for _ in 0..iters {
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| p - q).collect();
        best = best.min(norm2(&r));
        let g = a.tr_mul_vec(&r);
        let step: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi / l).collect();
        x = l1_project_bisect(&step, tau);
    }
    let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| p - q).collect();
    best.min(norm2(&r))
}

/// Smallest τ with v(τ) ≤ σ: a 201-point grid brackets the crossing, then
/// bisection refines it.
fn bpdn_grid_opt(a: &DenseMatrix, b: &[f64], sigma: f64, iters: usize) -> f64 {
    let l = a.spectral_norm_sq(500, 1e-15) * 1.01;
    let mut top = 1.0;
    while bpdn_value(a, b, top, l, iters) > sigma {
        top *= 2.0;
    }
    let grid: Vec<f64> = (0..=200).map(|i| top * i as f64 / 200.0).collect();
    let first = grid
        .iter()
        .position(|&t| bpdn_value(a, b, t, l, iters) <= sigma)
        .unwrap();
    let (mut lo, mut hi) = (grid[first.saturating_sub(1)], grid[first]);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if bpdn_value(a, b, mid, l, iters) > sigma {
            lo = mid
        } else {
            hi = mid
        }
    }
    hi
}

fn solve_square(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            let pivot_row = m[col].clone();
            for (dst, src) in m[r][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / m[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Optimal value over all basic feasible solutions.
fn lp_vertex_opt(a: &DenseMatrix, b: &[f64], c: &[f64]) -> Option<f64> {
    let (m, n) = (a.rows(), a.cols());
    let mut best: Option<f64> = None;
    for basis in combinations(n, m) {
        let mat: Vec<Vec<f64>> = (0..m)
            .map(|i| basis.iter().map(|&j| a.get(i, j)).collect())
            .collect();
        if let Some(xb) = solve_square(mat, b.to_vec()) {
            if xb.iter().all(|&v| v >= -1e-10) {
                let val: f64 = basis.iter().zip(&xb).map(|(&j, v)| c[j] * v).sum();
                best = Some(best.map_or(val, |b: f64| b.min(val)));
            }
        }
    }
    best
}

fn elastic_net_phi(x: &[f64], a: f64) -> f64 {
    a * norm1(x) + 0.5 * (1.0 - a) * x.iter().map(|v| v * v).sum::<f64>()
}

/// Projection onto `{α‖x‖₁ + (1−α)/2‖x‖² ≤ τ}` from the KKT form
/// `x(λ) = soft(z, λα)/(1 + λ(1−α))`, with λ found by bisection.
fn elastic_net_projection_reference(z: &[f64], a: f64, tau: f64) -> Vec<f64> {
    if elastic_net_phi(z, a) <= tau {
        return z.to_vec();
    }
    let x_of = |lam: f64| -> Vec<f64> {
        z.iter()
            .map(|v| v.signum() * (v.abs() - lam * a).max(0.0) / (1.0 + lam * (1.0 - a)))
            .collect()
    };
    let mut hi = 1.0;
    while elastic_net_phi(&x_of(hi), a) > tau {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if elastic_net_phi(&x_of(mid), a) > tau {
            lo = mid
        } else {
            hi = mid
        }
    }
    x_of(0.5 * (lo + hi))
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Criteria.

/// Bound constants computed from the run's own trace.
fn secant_c(recs: &[levelset::TraceRecord], tau_star: f64) -> f64 {
    let (r0, r1) = (&recs[0], &recs[1]);
    let s1 = (r1.lower - r0.upper) / (r1.tau - r0.tau);
    (s1.abs() * (tau_star - r1.tau)).max(r1.lower)
}

fn newton_c(recs: &[levelset::TraceRecord], tau_star: f64) -> f64 {
    let r0 = &recs[0];
    (r0.slope.unwrap().abs() * (tau_star - r0.tau)).max(r0.lower)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..50 {
        // f(τ) = a((c−τ)₊)² + g(c−τ) − h: convex, decreasing, root known.
        let a: f64 = rng.random_range(0.1..3.0);
        let g: f64 = rng.random_range(0.0..2.0);
        let h: f64 = rng.random_range(1.0..20.0);
        let c: f64 = rng.random_range(-5.0..5.0);
        let f = move |t: f64| {
            let u = (c - t).max(0.0);
            (a * u * u + g * (c - t) - h, -2.0 * a * u - g)
        };
        let tau_star = c - (-g + (g * g + 4.0 * a * h).sqrt()) / (2.0 * a);
        let tau0 = tau_star - rng.random_range(1.0..10.0);
        let tau1 = tau0 + rng.random_range(0.1..0.6) * (tau_star - tau0);
        let eps = 1e-3;
        for alpha in [1.1, 1.3, 1.7] {
            let cfg = RootConfig::new(eps, alpha, tau0).unwrap();
            let mut o = SyntheticOracle::new(f, alpha, SyntheticMode::Symmetric);
            let sec = secant_solve(&mut o, &cfg.clone().with_tau1(tau1).unwrap())
                .map_err(|e| e.to_string())?;
            let mut o = SyntheticOracle::new(f, alpha, SyntheticMode::Subgradient);
            let newt = newton_solve(&mut o, &cfg).map_err(|e| e.to_string())?;
            for (res, method) in [(&sec, Method::Secant), (&newt, Method::Newton)] {
                check(res.status == RootStatus::Converged, || {
                    format!("case {case} alpha {alpha} {method:?}: {:?}", res.status)
                })?;
                let recs = &res.trace.records;
                let cst = match method {
                    Method::Secant => secant_c(recs, tau_star),
                    Method::Newton => newton_c(recs, tau_star),
                };
                let bound = iteration_bound(cst, eps, alpha, method).unwrap();
                worst = worst.max(res.iterations as f64 / bound as f64);
                check(res.iterations <= bound, || {
                    format!(
                        "case {case} alpha {alpha} {method:?}: {} > bound {bound}",
                        res.iterations
                    )
                })?;
            }
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!(
        "300 runs within bound, max k/bound = {worst:.2}, {:?}",
        start.elapsed()
    ))
}

fn f1(t: f64) -> (f64, f64) {
    ((t - 1.0).powi(2) - 10.0, 2.0 * (t - 1.0))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let eps = 1e-2;
    let count = |alpha: f64, method: Method| -> Result<usize, String> {
        let cfg = RootConfig::new(eps, alpha, -9.0)
            .unwrap()
            .with_max_outer(10_000)
            .unwrap();
        let res = match method {
            Method::Secant => {
                let mut o = SyntheticOracle::new(f1, alpha, SyntheticMode::Symmetric);
                secant_solve(&mut o, &cfg.with_tau1(-8.0).unwrap())
            }
            Method::Newton => {
                let mut o = SyntheticOracle::new(f1, alpha, SyntheticMode::Steepest);
                newton_solve(&mut o, &cfg)
            }
        }
        .map_err(|e| e.to_string())?;
        check(res.status == RootStatus::Converged, || {
            format!("{method:?} {alpha}: {:?}", res.status)
        })?;
        Ok(res.iterations)
    };
    let (s13, n13) = (count(1.3, Method::Secant)?, count(1.3, Method::Newton)?);
    let (s199, n199) = (count(1.99, Method::Secant)?, count(1.99, Method::Newton)?);
    check(n13 <= s13, || {
        format!("alpha 1.3: newton {n13} > secant {s13}")
    })?;
    check(s199 >= 10 * n199, || {
        format!("alpha 1.99: secant {s199} < 10 x newton {n199}")
    })?;
    within(start, Duration::from_secs(1))?;
    Ok(format!(
        "alpha 1.3: newton {n13}, secant {s13}; alpha 1.99: newton {n199}, secant {s199}"
    ))
}

fn criterion_3() -> Outcome {
    let alpha = 2.0;
    let mut o = move |tau: f64, _: f64, _: f64| {
        let l = -2.0 * tau / (1.0 + alpha);
        let u = -2.0 * alpha * tau / (1.0 + alpha);
        Ok(OracleReply::Bounds(MinorantEvaluation::bounds(l, u)))
    };
    // The configured α must lie in (1, 2); the oracle breaks it with α = 2.
    let cfg = RootConfig::new(1e-2, 1.99, -2.0)
        .unwrap()
        .with_tau1(-1.0)
        .unwrap()
        .with_max_outer(50)
        .unwrap();
    let res = secant_solve(&mut o, &cfg).map_err(|e| e.to_string())?;
    let taus = res.trace.taus();
    let q50 = taus[50] / taus[49];
    let mut q = taus[1] / taus[0];
    for k in 1..taus.len() - 1 {
        let predicted = (1.0 - alpha) / (q - alpha);
        let observed = taus[k + 1] / taus[k];
        check((predicted - observed).abs() <= 1e-12, || {
            format!("recurrence broken at k = {k}")
        })?;
        q = observed;
    }
    check(res.status == RootStatus::Stalled, || {
        format!("status {:?}", res.status)
    })?;
    check((q50 - 1.0).abs() <= 0.05, || format!("q_50 = {q50}"))?;
    Ok(format!("q_50 = {q50:.4}, status Stalled"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let tau_star = 1.0 - 10f64.sqrt();
    let mut summary = Vec::new();
    for (method, tau1) in [(Method::Newton, None), (Method::Secant, Some(-8.0))] {
        let res =
            exact_root_solve(f1, method, -9.0, tau1, 1e-10, 100).map_err(|e| e.to_string())?;
        check(res.status == RootStatus::Converged, || {
            format!("{method:?}: {:?}", res.status)
        })?;
        let errs: Vec<f64> = res.trace.taus().iter().map(|t| tau_star - t).collect();
        let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
        check(ratios.len() >= 4, || {
            format!("{method:?}: only {} ratios", ratios.len())
        })?;
        let last = &ratios[ratios.len() - 4..];
        check(last.windows(2).all(|w| w[1] < w[0]), || {
            format!("{method:?}: ratios {last:?}")
        })?;
        check(last[3] < 0.1, || {
            format!("{method:?}: final ratio {}", last[3])
        })?;
        summary.push(format!("{method:?} final ratio {:.1e}", last[3]));
    }
    within(start, Duration::from_millis(100))?;
    Ok(summary.join(", "))
}

fn criterion_5() -> Outcome {
    let b = [3.0, 2.0, 1.0, 0.0, 0.0];
    let sol = solve_bpdn(
        &DenseMatrix::identity(5),
        &b,
        1.0,
        &SolveOptions::new(1e-4, 1.3),
    )
    .map_err(|e| e.to_string())?;
    check(sol.converged(), || format!("status {:?}", sol.status))?;
    // 1-D reference: soft threshold θ with ‖soft(b, θ) − b‖ = σ.
    let resid = |t: f64| b.iter().map(|v| v.abs().min(t).powi(2)).sum::<f64>().sqrt();
    let (mut lo, mut hi) = (0.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if resid(mid) > 1.0 {
            hi = mid
        } else {
            lo = mid
        }
    }
    let th = 0.5 * (lo + hi);
    let reference: f64 = b.iter().map(|v| (v.abs() - th).max(0.0)).sum();
    let gap = (norm1(&sol.x) - reference).abs();
    let r = dist(&sol.x, &b);
    check(gap <= 1e-4, || format!("|‖x‖₁ − ref| = {gap:e}"))?;
    check(r <= 1.0 + 1e-4, || format!("‖x − b‖ = {r}"))?;
    Ok(format!("‖x‖₁ gap {gap:.1e}, ‖x − b‖ = {r:.6}"))
}

fn bpdn_instance(seed: u64) -> (DenseMatrix, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian_matrix(20, 50, &mut rng);
    let mut x0 = vec![0.0; 50];
    for _ in 0..5 {
        let j = rng.random_range(0..50);
        x0[j] = rng.sample::<f64, _>(StandardNormal);
    }
    let noise: Vec<f64> = (0..20)
        .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let b: Vec<f64> = a
        .mul_vec(&x0)
        .iter()
        .zip(&noise)
        .map(|(p, n)| p + n)
        .collect();
    (a, b, x0, noise)
}

fn criterion_6() -> Outcome {
    let (a, b, _, _) = bpdn_instance(6);
    let sigma = 0.1 * norm2(&b);
    let eps = 1e-4;
    let start = Instant::now();
    let sol = solve_bpdn(&a, &b, sigma, &SolveOptions::new(eps, 1.3)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(sol.converged(), || format!("status {:?}", sol.status))?;
    let opt = bpdn_grid_opt(&a, &b, sigma, 3000);
    let r = dist(&a.mul_vec(&sol.x), &b);
    let n1 = norm1(&sol.x);
    check(r <= sigma + eps, || {
        format!("‖Ax − b‖ = {r} > σ + ε = {}", sigma + eps)
    })?;
    check(n1 <= opt + 1e-4, || {
        format!("‖x‖₁ = {n1} > OPT {opt} + 1e-4")
    })?;
    check(sol.inner_iterations < 100_000, || {
        format!("{} inner iterations", sol.inner_iterations)
    })?;
    check(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "‖x‖₁ = {n1:.6} vs OPT {opt:.6}, residual − σ = {:.1e}, {} inner, {elapsed:?}",
        r - sigma,
        sol.inner_iterations
    ))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let eps = 1e-4;
    let mut worst = 0.0f64;
    let mut below = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let a =
            DenseMatrix::new(4, 8, (0..32).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let x_feas: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let b = a.mul_vec(&x_feas);
        let y_hat: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let aty = a.tr_mul_vec(&y_hat);
        let c: Vec<f64> = aty.iter().map(|v| v + rng.random_range(0.5..1.5)).collect();
        let opt = lp_vertex_opt(&a, &b, &c).ok_or("no feasible vertex")?;
        let lp = solve_lp(&a, &b, &c, &y_hat, &SolveOptions::new(eps, 1.3))
            .map_err(|e| e.to_string())?;
        check(lp.solution.converged(), || {
            format!("seed {seed}: {:?}", lp.solution.status)
        })?;
        let r = dist(&a.mul_vec(&lp.solution.x), &b);
        check(r <= eps, || format!("seed {seed}: ‖Ax − b‖ = {r:e}"))?;
        let tol = eps * norm2(&y_hat) + 1e-6;
        // The one-sided guarantee ⟨c, x⟩ ≤ OPT + ε‖ŷ‖ must always hold.
        check(lp.objective <= opt + tol, || {
            format!(
                "seed {seed}: objective {} exceeds OPT {opt} + {tol:e}",
                lp.objective
            )
        })?;
        let gap = (lp.objective - opt).abs();
        worst = worst.max(gap / tol);
        if gap > tol {
            below.push(format!(
                "seed {seed} sits {gap:.2e} below OPT (tolerance {tol:.2e})"
            ));
        }
    }
    within(start, Duration::from_secs(10))?;
    check(below.is_empty(), || {
        format!(
            "upper side holds on all 10; two-sided bound fails: {}",
            below.join("; ")
        )
    })?;
    Ok(format!("10 LPs, max gap/tolerance = {worst:.3}"))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..20);
        let z: Vec<f64> = (0..n)
            .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a: f64 = rng.random_range(0.0..1.0);
        let tau = rng.random_range(0.01..1.0) * elastic_net_phi(&z, a);
        let p = project_elastic_net(&z, a, tau).map_err(|e| e.to_string())?;
        let d = dist(&p, &elastic_net_projection_reference(&z, a, tau));
        worst = worst.max(d);
        check(d <= 1e-6, || {
            format!("alpha {a}, tau {tau}: distance {d:e}")
        })?;
    }
    for _ in 0..50 {
        let n = rng.random_range(1..20);
        let z: Vec<f64> = (0..n)
            .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let tau = rng.random_range(0.01..2.0);
        let p1 = project_elastic_net(&z, 1.0, tau).map_err(|e| e.to_string())?;
        let d1 = dist(&p1, &l1_project_bisect(&z, tau));
        let radius = (2.0 * tau).sqrt();
        let scale = (radius / norm2(&z)).min(1.0);
        let ball: Vec<f64> = z.iter().map(|v| v * scale).collect();
        let p0 = project_elastic_net(&z, 0.0, tau).map_err(|e| e.to_string())?;
        let d0 = dist(&p0, &ball);
        check(d1 <= 1e-10 && d0 <= 1e-10, || {
            format!("closed forms off: l1 {d1:e}, ridge {d0:e}")
        })?;
    }
    Ok(format!(
        "max distance to reference {worst:.1e}; closed forms exact"
    ))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(2..15);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let a: f64 = rng.random_range(0.05..0.95);
        let tau: f64 = rng.random_range(0.1..5.0);
        let sv = |t: f64| support_elastic_net_level(&z, a, t).map(|s| s.value);
        let mu = support_elastic_net_level(&z, a, tau)
            .map_err(|e| e.to_string())?
            .tau_slope;
        let h = 1e-5 * tau;
        let fd = (sv(tau + h).map_err(|e| e.to_string())?
            - sv(tau - h).map_err(|e| e.to_string())?)
            / (2.0 * h);
        let rel = (fd - mu).abs() / mu.abs().max(1e-12);
        worst = worst.max(rel);
        check(rel <= 1e-4, || {
            format!("alpha {a}, tau {tau}: fd {fd} vs mu {mu}")
        })?;
        for i in 0..20 {
            let t0 = 0.1 + 0.5 * i as f64;
            let t1 = t0 + 0.37;
            let mid = sv(0.5 * (t0 + t1)).unwrap();
            let avg = 0.5 * (sv(t0).unwrap() + sv(t1).unwrap());
            check(mid >= avg - 1e-12 * avg.abs().max(1.0), || {
                format!("concavity fails near tau {t0}")
            })?;
        }
    }
    Ok(format!(
        "max relative slope error {worst:.1e}, concave on all samples"
    ))
}

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    for kappa in [0.1, 0.5, 1.0, 2.0] {
        let huber = MisfitKind::Huber { kappa };
        for i in 0..=600 {
            let r = -3.0 + 0.01 * i as f64;
            // min_u κ|u| + ½(r − u)² by golden section.
            let obj = |u: f64| kappa * u.abs() + 0.5 * (r - u) * (r - u);
            let (mut lo, mut hi) = (-5.0f64, 5.0f64);
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..200 {
                let c = hi - phi * (hi - lo);
                let d = lo + phi * (hi - lo);
                if obj(c) < obj(d) {
                    hi = d
                } else {
                    lo = c
                }
            }
            let env = obj(0.5 * (lo + hi));
            let e = (env - huber.value(&[r])).abs();
            worst = worst.max(e);
            check(e <= 1e-6, || {
                format!(
                    "kappa {kappa}, r {r}: envelope {env} vs huber {}",
                    huber.value(&[r])
                )
            })?;
        }
    }
    let families = [
        (GlmFamily::Gaussian, -3.0, 3.0),
        (GlmFamily::Huber { kappa: 0.7 }, -3.0, 3.0),
        (GlmFamily::Poisson, -3.0, 3.0),
        (GlmFamily::Bernoulli, -6.0, 6.0),
        (GlmFamily::Gamma, -5.0, -0.2),
    ];
    let mut fy_worst = 0.0f64;
    for (family, lo, hi) in families {
        for i in 0..=100 {
            let theta = lo + (hi - lo) * i as f64 / 100.0;
            let mu = family.mean(theta);
            let e = (family.cumulant(theta) + glm_conjugate(&family, mu) - theta * mu).abs();
            fy_worst = fy_worst.max(e);
            check(e <= 1e-8, || {
                format!(
                    "{}: theta {theta}, Fenchel-Young residual {e:e}",
                    family.name()
                )
            })?;
        }
    }
    Ok(format!(
        "Moreau error {worst:.1e}, Fenchel-Young residual {fy_worst:.1e}"
    ))
}

fn criterion_11() -> Outcome {
    let (a, b, _, _) = bpdn_instance(11);
    let loss = DataLoss::Misfit {
        kind: MisfitKind::SumSquares,
        b: b.clone(),
    };
    let constraint = ConstraintSet::L1Ball;
    let tau = 0.5 * norm1(&a.tr_mul_vec(&b)).min(2.0);
    let ip = InnerProblem {
        a: &a,
        loss: &loss,
        constraint: &constraint,
        tau,
    };
    // v(τ) for ½‖r‖², from long plain projected gradient.
    let l = a.spectral_norm_sq(500, 1e-15) * 1.01;
    let v_ref = 0.5 * bpdn_value(&a, &b, tau, l, 200_000).powi(2);
    let mut sandwich = Ok(());
    let mut stop = |p: &levelset::inner::Progress| {
        if sandwich.is_ok() && !(p.lower <= v_ref + 1e-9 && v_ref <= p.upper + 1e-9) {
            sandwich = Err(format!(
                "iteration {}: {} ≤ {v_ref} ≤ {} fails",
                p.iteration, p.lower, p.upper
            ));
        }
        false
    };
    let res = frank_wolfe(
        &ip,
        &vec![0.0; a.cols()],
        FwStepRule::ExactLineSearch,
        2000,
        &mut stop,
    )
    .map_err(|e| e.to_string())?;
    sandwich?;
    check(!res.log.is_empty(), || "no certificate log".into())?;
    let worst = res
        .log
        .iter()
        .map(|c| (c.linearization - c.phi).abs())
        .fold(0.0, f64::max);
    check(worst <= 1e-10, || {
        format!("max |ℓ_i − Φ(y_i, τ)| = {worst:e}")
    })?;
    let (phi_best, _) = dual_value(&ip, &res.y).map_err(|e| e.to_string())?;
    check((phi_best - res.lower).abs() <= 1e-10, || {
        format!("best lower {} vs Φ {phi_best}", res.lower)
    })?;
    check(
        res.lower <= v_ref + 1e-9 && v_ref <= res.upper + 1e-9,
        || format!("final {} ≤ {v_ref} ≤ {} fails", res.lower, res.upper),
    )?;
    Ok(format!(
        "{} iterations, max identity error {worst:.1e}, final gap {:.1e}",
        res.log.len(),
        res.upper - res.lower
    ))
}

fn criterion_12() -> Outcome {
    let delta = 0.05;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (a, b, x0, noise) = bpdn_instance(1200 + seed);
        let sigma = 2.0 * norm2(&noise);
        let problem = LevelSetProblem::new(
            a.clone(),
            DataLoss::Misfit {
                kind: MisfitKind::Norm2,
                b: b.clone(),
            },
            ConstraintSet::L1Ball,
            sigma,
        )
        .map_err(|e| e.to_string())?;
        let e = x0;
        let eps = delta * (sigma - problem.misfit(&e));
        let z =
            solve_bpdn(&a, &b, sigma, &SolveOptions::new(eps, 1.3)).map_err(|e| e.to_string())?;
        check(z.converged(), || format!("seed {seed}: {:?}", z.status))?;
        let rec = recover_feasible(&z.x, &e, &problem).map_err(|e| e.to_string())?;
        let r = problem.misfit(&rec.x);
        check(r <= sigma + 1e-10, || {
            format!("seed {seed}: misfit {r} > σ {sigma}")
        })?;
        let opt = bpdn_grid_opt(&a, &b, sigma, 3000);
        let rel = (norm1(&rec.x) - opt) / (norm1(&e) - opt);
        worst = worst.max(rel);
        check(rel <= delta + 1e-6, || {
            format!("seed {seed}: relative gap {rel}")
        })?;
    }
    Ok(format!(
        "10 instances feasible, max relative gap {worst:.4} (δ = {delta})"
    ))
}

fn largest_positive(r: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.len()).filter(|&i| r[i] > 0.0).collect();
    idx.sort_by(|&i, &j| r[j].total_cmp(&r[i]));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

fn criterion_13() -> Outcome {
    let start = Instant::now();
    let (kappa, q) = (0.1, 0.9);
    let mut identified = 0;
    let mut better = 0;
    for seed in 0..10 {
        let inst =
            generate_instance(&InstanceSpec::robust_example(seed)).map_err(|e| e.to_string())?;
        let sigma = 0.05 * MisfitKind::QuantileHuber { kappa, q }.value(&inst.b);
        let eps = 1e-3 * sigma;
        let robust = solve_robust_sparse(
            &inst.a,
            &inst.b,
            sigma,
            kappa,
            q,
            &SolveOptions::new(eps, 1.3),
        )
        .map_err(|e| e.to_string())?;
        let ls_sigma = 0.05 * norm2(&inst.b);
        let ls = solve_bpdn(
            &inst.a,
            &inst.b,
            ls_sigma,
            &SolveOptions::new(1e-3 * ls_sigma, 1.3),
        )
        .map_err(|e| e.to_string())?;
        check(robust.converged() && ls.converged(), || {
            format!(
                "seed {seed}: robust {:?}, ls {:?}",
                robust.status, ls.status
            )
        })?;
        let resid: Vec<f64> = inst
            .b
            .iter()
            .zip(inst.a.mul_vec(&robust.x))
            .map(|(b, p)| b - p)
            .collect();
        if largest_positive(&resid, inst.outlier_indices.len()) == inst.outlier_indices {
            identified += 1;
        }
        if dist(&robust.x, &inst.x_true) < dist(&ls.x, &inst.x_true) {
            better += 1;
        }
    }
    let elapsed = start.elapsed();
    let summary = format!("identified {identified}/10, lower signal error than least squares {better}/10, {elapsed:?}");
    check(
        identified >= 8 && better == 10 && elapsed < Duration::from_secs(60),
        || summary.clone(),
    )?;
    Ok(summary)
}

fn run_cli(args: &[&str], dir: &Path) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_levelset"))
        .args(args)
        .current_dir(dir)
        .env("LEVELSET_THREADS", "1")
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    Ok(status.code().unwrap_or(-1))
}

fn criterion_14() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let (a, b, _, _) = bpdn_instance(14);
    write_dense(&d.join("A.csv"), &a).map_err(|e| e.to_string())?;
    write_dense(
        &d.join("b.csv"),
        &DenseMatrix::new(b.len(), 1, b.clone()).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let sigma = format!("{}", 0.1 * norm2(&b));
    let runs: Vec<Vec<String>> = vec![
        vec![
            "rootfind-demo",
            "--f",
            "f1",
            "--alpha",
            "1.3",
            "--eps",
            "1e-2",
            "--oracle",
            "symmetric",
        ],
        vec![
            "rootfind-demo",
            "--f",
            "f2",
            "--oracle",
            "steepest",
            "--format",
            "csv",
        ],
        vec!["bpdn", "--A", "A.csv", "--b", "b.csv", "--sigma", &sigma],
        vec![
            "bpdn", "--A", "A.csv", "--b", "b.csv", "--sigma", &sigma, "--inner", "fw", "--eps",
            "1e-2",
        ],
        vec![
            "elastic-net",
            "--A",
            "A.csv",
            "--b",
            "b.csv",
            "--sigma",
            "0.05",
            "--alpha-en",
            "0.5",
        ],
        vec!["robust", "--preset", "paper-example", "--seed", "7"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = format!("out{i}_{rep}.json");
            let trace = format!("trace{i}_{rep}");
            let report = format!("report{i}_{rep}.json");
            let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
            full.extend(["--output", &out, "--trace", &trace]);
            let code = run_cli(&full, d)?;
            check(code == 0, || format!("{} exited {code}", args.join(" ")))?;
            let code = run_cli(&["trace-report", "--input", &trace, "--output", &report], d)?;
            check(code == 0, || format!("trace-report exited {code}"))?;
            let read = |name: &str| std::fs::read(d.join(name)).map_err(|e| e.to_string());
            outputs.push((read(&out)?, read(&trace)?, read(&report)?));
        }
        check(outputs[0] == outputs[1], || {
            format!("{} differs between runs", args.join(" "))
        })?;
    }
    Ok(format!(
        "{} invocations byte-identical across reruns",
        runs.len() * 2
    ))
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("iteration-bound conformance", criterion_1),
        ("secant/Newton ordering on f1", criterion_2),
        ("alpha = 2 stall counterexample", criterion_3),
        ("superlinear exact iterations", criterion_4),
        ("BPDN identity-A oracle", criterion_5),
        ("BPDN generic instance", criterion_6),
        ("LP against vertex enumeration", criterion_7),
        ("elastic-net projection", criterion_8),
        ("elastic-net support slope and concavity", criterion_9),
        ("Huber envelope and GLM conjugates", criterion_10),
        ("Frank-Wolfe certificate identity", criterion_11),
        ("radial projection recovery", criterion_12),
        ("robust sparse recovery", criterion_13),
        ("CLI determinism", criterion_14),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {:>2} {name}: panicked", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
