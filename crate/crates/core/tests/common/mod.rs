#![allow(dead_code)]

use arcmark::modcode::GeneratorMatrix;
use arcmark::sideinfo::StepSecret;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const TEST_KEY: [u8; 32] = [0x5a; 32];

/// Minimum transport cost by successive shortest paths on the bipartite
/// network source -> rows -> cols -> sink.
pub fn lp_transport_cost(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let n = a.len();
    let m = b.len();
    // flow[i][j] on row->col edges; residual supplies and demands
    let mut flow = vec![0.0; n * m];
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let eps = 1e-15;
    loop {
        let remaining: f64 = supply.iter().sum();
        if remaining <= 1e-13 {
            break;
        }
        // nodes: rows 0..n, cols n..n+m; Bellman-Ford from all rows with supply
        let total = n + m;
        let mut dist = vec![f64::INFINITY; total];
        let mut pred: Vec<Option<usize>> = vec![None; total];
        for i in 0..n {
            if supply[i] > eps {
                dist[i] = 0.0;
            }
        }
        for _ in 0..total {
            let mut changed = false;
            for i in 0..n {
                if dist[i] == f64::INFINITY {
                    continue;
                }
                for j in 0..m {
                    let d = dist[i] + cost[i * m + j];
                    if d < dist[n + j] - 1e-15 {
                        dist[n + j] = d;
                        pred[n + j] = Some(i);
                        changed = true;
                    }
                }
            }
            for j in 0..m {
                if dist[n + j] == f64::INFINITY {
                    continue;
                }
                for i in 0..n {
                    if flow[i * m + j] > eps {
                        let d = dist[n + j] - cost[i * m + j];
                        if d < dist[i] - 1e-15 {
                            dist[i] = d;
                            pred[i] = Some(n + j);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let target = (0..m)
            .filter(|&j| demand[j] > eps && dist[n + j] < f64::INFINITY)
            .min_by(|&x, &y| dist[n + x].total_cmp(&dist[n + y]))
            .expect("feasible transport problem");
        let mut path = vec![n + target];
        let mut node = n + target;
        while let Some(p) = pred[node] {
            path.push(p);
            node = p;
        }
        path.reverse();
        let start = path[0];
        let mut amount = supply[start].min(demand[target]);
        for w in path.windows(2) {
            if w[0] >= n {
                let (j, i) = (w[0] - n, w[1]);
                amount = amount.min(flow[i * m + j]);
            }
        }
        for w in path.windows(2) {
            if w[0] < n {
                flow[w[0] * m + (w[1] - n)] += amount;
            } else {
                flow[w[1] * m + (w[0] - n)] -= amount;
            }
        }
        supply[start] -= amount;
        demand[target] -= amount;
    }
    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}

/// `m · G mod p`, one column at a time.
pub fn naive_encode(bits: &[u8], g: &GeneratorMatrix) -> Vec<u32> {
    (0..g.n())
        .map(|col| {
            let mut s = 0u64;
            for (row, &b) in bits.iter().enumerate() {
                s += b as u64 * g.get(row, col) as u64;
            }
            (s % g.p() as u64) as u32
        })
        .collect()
}

/// Distance rank `a` of `token` from the channel input of symbol `c` in the
/// theorem-2 geometry, computed in quarter-slot integer units.
pub fn theorem2_rank(token: usize, c: u32, secret: &StepSecret, vocab: usize) -> usize {
    let q = 4 * vocab as i64;
    let z = (4 * ((c as i64 + secret.v as i64) % vocab as i64) + 1) % q;
    let dist = |y: usize| {
        let d = (4 * secret.perm[y] as i64 - z).rem_euclid(q);
        d.min(q - d)
    };
    let dx = dist(token);
    1 + (0..vocab).filter(|&y| dist(y) < dx).count()
}

/// Exact maximum-likelihood message under the two-point channel law
/// `P(rank a) ∝ N − a`; `None` when every message has likelihood zero.
pub fn ml_message(tokens: &[usize], secrets: &[StepSecret], codewords: &[Vec<u32>], vocab: usize) -> Option<usize> {
    let mut best: Option<(usize, u128)> = None;
    for (idx, cw) in codewords.iter().enumerate() {
        let mut lik: u128 = 1;
        for t in 0..tokens.len() {
            let a = theorem2_rank(tokens[t], cw[t], &secrets[t], vocab);
            lik *= (vocab - a) as u128;
        }
        if lik > 0 && best.is_none_or(|(_, b)| lik > b) {
            best = Some((idx, lik));
        }
    }
    best.map(|(i, _)| i)
}

/// Pearson statistic and upper-tail p-value against expected counts.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> (f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let df = expected.iter().filter(|&&e| e > 0.0).count() - 1;
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, p)
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
