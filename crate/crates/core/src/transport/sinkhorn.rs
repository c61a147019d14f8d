//! Log-stabilized Sinkhorn scaling.
//!
//! Dual potentials `f`, `g` live in the log domain; between absorptions the
//! cheap multiplicative updates run on the stabilized kernel
//! `K̃_ij = exp((f_i + g_j − C_ij)/ε)` with scalings `u`, `v` near one. Each
//! regularization stage starts with one exact log-sum-exp update so the
//! kernel is centred before it is exponentiated.

use crate::error::{Error, Result};

const ABSORB_ABOVE: f64 = 1e50;
const ABSORB_BELOW: f64 = 1e-50;
const CHECK_EVERY: usize = 10;

/// Returns the entropic plan (row-major, `a.len() × b.len()`) for the last
/// regularization in the ladder `eps_start, eps_start/2, …, eps_final`.
pub(super) fn solve(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    eps_start: f64,
    eps_final: f64,
    max_iters: usize,
    tolerance: f64,
) -> Result<Vec<f64>> {
    let n = a.len();
    let m = b.len();
    debug_assert_eq!(cost.len(), n * m);

    let mut ladder = vec![eps_start];
    let mut e = eps_start;
    while e * 0.5 > eps_final {
        e *= 0.5;
        ladder.push(e);
    }
    if eps_final < e {
        ladder.push(eps_final);
    }

    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut kernel = vec![0.0; n * m];
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut col_acc = vec![0.0; m];

    let last = ladder.len() - 1;
    for (stage, &eps) in ladder.iter().enumerate() {
        log_domain_update(&mut f, &mut g, &log_a, &log_b, cost, eps);
        fill_kernel(&mut kernel, &f, &g, cost, eps);
        u.fill(1.0);
        v.fill(1.0);

        let mut residual = f64::INFINITY;
        let mut iters = 0;
        while iters < max_iters {
            iters += 1;
            col_products(&kernel, &u, &mut col_acc);
            let mut degenerate = false;
            for ((vj, &bj), &s) in v.iter_mut().zip(b).zip(&col_acc) {
                if s > 0.0 && s.is_finite() {
                    *vj = bj / s;
                } else {
                    degenerate = true;
                }
            }
            for (i, ui) in u.iter_mut().enumerate() {
                let row = &kernel[i * m..(i + 1) * m];
                let s: f64 = row.iter().zip(&v).map(|(k, vj)| k * vj).sum();
                if s > 0.0 && s.is_finite() {
                    *ui = a[i] / s;
                } else {
                    degenerate = true;
                }
            }

            if degenerate {
                absorb(&mut f, &mut g, &mut u, &mut v, eps);
                log_domain_update(&mut f, &mut g, &log_a, &log_b, cost, eps);
                fill_kernel(&mut kernel, &f, &g, cost, eps);
                continue;
            }

            if iters % CHECK_EVERY == 0 || iters == max_iters {
                residual = column_residual(&kernel, &u, &v, b, &mut col_acc);
                if residual <= tolerance {
                    break;
                }
            }

            let out_of_range = u.iter().chain(&v).any(|&x| !(ABSORB_BELOW..=ABSORB_ABOVE).contains(&x));
            if out_of_range {
                absorb(&mut f, &mut g, &mut u, &mut v, eps);
                fill_kernel(&mut kernel, &f, &g, cost, eps);
            }
        }

        if stage == last && !(residual <= tolerance) {
            let plan = scaled_plan(&kernel, &u, &v, m);
            let (row_residual, col_residual) = marginal_residuals(&plan, a, b);
            return Err(Error::SolverNonConvergence {
                iterations: iters,
                row_residual,
                col_residual,
            });
        }
        if stage == last {
            return Ok(scaled_plan(&kernel, &u, &v, m));
        }
        absorb(&mut f, &mut g, &mut u, &mut v, eps);
    }
    unreachable!("ladder is never empty")
}

fn log_domain_update(f: &mut [f64], g: &mut [f64], log_a: &[f64], log_b: &[f64], cost: &[f64], eps: f64) {
    let n = f.len();
    let m = g.len();
    for j in 0..m {
        let lse = log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / eps));
        g[j] = eps * (log_b[j] - lse);
    }
    for i in 0..n {
        let row = &cost[i * m..(i + 1) * m];
        let lse = log_sum_exp(row.iter().zip(g.iter()).map(|(c, gj)| (gj - c) / eps));
        f[i] = eps * (log_a[i] - lse);
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn fill_kernel(kernel: &mut [f64], f: &[f64], g: &[f64], cost: &[f64], eps: f64) {
    let m = g.len();
    let inv = 1.0 / eps;
    for (i, fi) in f.iter().enumerate() {
        let row = &mut kernel[i * m..(i + 1) * m];
        let crow = &cost[i * m..(i + 1) * m];
        for ((k, c), gj) in row.iter_mut().zip(crow).zip(g) {
            *k = ((fi + gj - c) * inv).exp();
        }
    }
}

fn absorb(f: &mut [f64], g: &mut [f64], u: &mut [f64], v: &mut [f64], eps: f64) {
    for (fi, ui) in f.iter_mut().zip(u.iter_mut()) {
        *fi += eps * ui.ln();
        *ui = 1.0;
    }
    for (gj, vj) in g.iter_mut().zip(v.iter_mut()) {
        *gj += eps * vj.ln();
        *vj = 1.0;
    }
}

/// `acc_j = Σ_i K_ij u_i`.
fn col_products(kernel: &[f64], u: &[f64], acc: &mut [f64]) {
    let m = acc.len();
    acc.fill(0.0);
    for (i, &ui) in u.iter().enumerate() {
        let row = &kernel[i * m..(i + 1) * m];
        for (s, k) in acc.iter_mut().zip(row) {
            *s += k * ui;
        }
    }
}

fn column_residual(kernel: &[f64], u: &[f64], v: &[f64], b: &[f64], acc: &mut [f64]) -> f64 {
    col_products(kernel, u, acc);
    acc.iter().zip(v).zip(b).map(|((s, vj), bj)| (s * vj - bj).abs()).sum()
}

fn scaled_plan(kernel: &[f64], u: &[f64], v: &[f64], m: usize) -> Vec<f64> {
    let mut plan = kernel.to_vec();
    for (i, &ui) in u.iter().enumerate() {
        for (x, vj) in plan[i * m..(i + 1) * m].iter_mut().zip(v) {
            *x *= ui * vj;
        }
    }
    plan
}

fn marginal_residuals(plan: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let m = b.len();
    let row: f64 = plan
        .chunks(m)
        .zip(a)
        .map(|(r, ai)| (r.iter().sum::<f64>() - ai).abs())
        .sum();
    let mut cols = vec![0.0; m];
    for r in plan.chunks(m) {
        cols.iter_mut().zip(r).for_each(|(s, x)| *s += x);
    }
    let col: f64 = cols.iter().zip(b).map(|(s, bj)| (s - bj).abs()).sum();
    (row, col)
}
