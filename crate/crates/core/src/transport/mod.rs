//! Watermarked conditionals from circular optimal transport.
//!
//! For one generation step the watermarker couples the next-token
//! distribution `Q` (rows, restricted to its support) with the uniform law of
//! the `r` key-indexed channel inputs (columns) so that the expected angular
//! distance between a token's slot and the channel input is minimal. The
//! column picked by the secret key is then the watermarked conditional.
//!
//! Plans returned here always satisfy both marginals up to floating point
//! rounding: every solver output goes through [`round_to_marginals`], so the
//! key-averaged conditional reproduces `Q` and the watermark is
//! distortion-free by construction rather than by convergence.

mod circular;
mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::circle::{angular_distance, grid_angle, position_angle, Angle, CircleParams, ANGLE_TOLERANCE};
use crate::error::{invalid, Error, Result};

/// Tolerance accepted on the total mass of an input distribution before it
/// is renormalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A next-token distribution over the full vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenDistribution {
    probs: Vec<f64>,
    support: Vec<usize>,
}

impl TokenDistribution {
    /// Accepts `probs` if it is nonnegative and sums to one within
    /// [`NORMALIZATION_TOLERANCE`]; the stored vector is renormalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total = check_weights(&probs)?;
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return invalid(format!("probabilities sum to {total}, not 1"));
        }
        Ok(Self::normalized(probs, total))
    }

    /// Normalizes arbitrary nonnegative weights with positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total = check_weights(&weights)?;
        Ok(Self::normalized(weights, total))
    }

    pub fn point_mass(vocab: usize, token: usize) -> Result<Self> {
        if token >= vocab {
            return invalid(format!("token {token} outside vocabulary of {vocab}"));
        }
        let mut probs = vec![0.0; vocab];
        probs[token] = 1.0;
        Self::new(probs)
    }

    /// Uniform on the two distinct tokens `i` and `j`.
    pub fn uniform_pair(vocab: usize, i: usize, j: usize) -> Result<Self> {
        if i == j || i >= vocab || j >= vocab {
            return invalid(format!("({i}, {j}) is not a pair of distinct tokens below {vocab}"));
        }
        let mut probs = vec![0.0; vocab];
        probs[i] = 0.5;
        probs[j] = 0.5;
        Self::new(probs)
    }

    fn normalized(mut probs: Vec<f64>, total: f64) -> Self {
        if total != 1.0 {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        let support = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect();
        TokenDistribution { probs, support }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.probs[token]
    }

    /// Tokens with positive probability, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn vocab(&self) -> usize {
        self.probs.len()
    }

    pub fn is_point_mass(&self) -> bool {
        self.support.len() == 1
    }

    /// `Some((i, j))` when the distribution is uniform on exactly two tokens.
    pub fn two_point(&self) -> Option<(usize, usize)> {
        match self.support[..] {
            [i, j] if (self.probs[i] - 0.5).abs() <= 1e-12 && (self.probs[j] - 0.5).abs() <= 1e-12 => Some((i, j)),
            _ => None,
        }
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.support
            .iter()
            .map(|&i| {
                let p = self.probs[i];
                -p * p.log2()
            })
            .sum()
    }
}

impl TryFrom<Vec<f64>> for TokenDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        TokenDistribution::new(probs)
    }
}

impl From<TokenDistribution> for Vec<f64> {
    fn from(q: TokenDistribution) -> Self {
        q.probs
    }
}

fn check_weights(w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return invalid("empty distribution");
    }
    if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return invalid(format!("invalid probability {x}"));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return invalid("distribution has no mass");
    }
    Ok(total)
}

/// Angular distances between supported tokens (rows) and channel inputs
/// (columns), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
    row_tokens: Vec<usize>,
    row_angles: Vec<Angle>,
    col_angles: Vec<Angle>,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.costs
    }

    /// Token id of each row.
    pub fn row_tokens(&self) -> &[usize] {
        &self.row_tokens
    }

    pub fn row_angles(&self) -> &[Angle] {
        &self.row_angles
    }

    /// Channel input of each column.
    pub fn col_angles(&self) -> &[Angle] {
        &self.col_angles
    }

    pub fn mean(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }
}

/// Cost of coupling each supported token with every channel input of the
/// symbol `symbol`: `d(2π·perm(i)/N, 2πc/p + 2πj/r + φ)`.
pub fn build_cost(q: &TokenDistribution, symbol: u32, perm: &[u32], params: &CircleParams) -> Result<CostMatrix> {
    params.validate()?;
    if q.vocab() != params.vocab {
        return invalid(format!(
            "distribution over {} tokens for vocabulary {}",
            q.vocab(),
            params.vocab
        ));
    }
    if perm.len() != params.vocab {
        return invalid(format!(
            "permutation has {} entries for vocabulary {}",
            perm.len(),
            params.vocab
        ));
    }
    if symbol >= params.p {
        return invalid(format!("symbol {symbol} outside [0, {})", params.p));
    }
    let row_tokens = q.support().to_vec();
    let row_angles: Vec<Angle> = row_tokens
        .iter()
        .map(|&tok| position_angle(perm[tok] as usize, params.vocab))
        .collect();
    let col_angles: Vec<Angle> = (0..params.r).map(|j| grid_angle(symbol, j, params)).collect();
    let mut costs = Vec::with_capacity(row_angles.len() * col_angles.len());
    for &a in &row_angles {
        costs.extend(col_angles.iter().map(|&z| angular_distance(a, z)));
    }
    Ok(CostMatrix {
        rows: row_tokens.len(),
        cols: col_angles.len(),
        costs,
        row_tokens,
        row_angles,
        col_angles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Log-stabilized Sinkhorn iterations with optional epsilon annealing.
    #[default]
    Sinkhorn,
    /// Exact circular transport: cut the circle where no mass crosses and
    /// couple monotonically.
    Exact,
}

/// Transport solver settings. `epsilon` values are relative to the mean of
/// the cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Entropic regularization, as a multiple of the mean cost.
    pub epsilon: f64,
    /// When below `epsilon`, the regularization is halved stage by stage down
    /// to this value, warm-starting each stage.
    pub epsilon_final: Option<f64>,
    /// Iteration budget of each regularization stage.
    pub max_iters: usize,
    /// L1 tolerance on the marginal residual before rounding.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolverMethod::Sinkhorn,
            epsilon: 0.05,
            epsilon_final: None,
            max_iters: 2000,
            tolerance: 1e-8,
        }
    }
}

impl SolverConfig {
    /// Sinkhorn annealed to `1e-5` of the mean cost; close to the
    /// unregularized optimum on small instances. Small ε converges slowly,
    /// hence the larger iteration budget.
    pub fn precise() -> Self {
        SolverConfig {
            epsilon_final: Some(1e-5),
            max_iters: 20_000,
            ..SolverConfig::default()
        }
    }

    pub fn exact() -> Self {
        SolverConfig {
            method: SolverMethod::Exact,
            ..SolverConfig::default()
        }
    }

    /// Sinkhorn at a single fixed regularization.
    pub fn fixed(epsilon: f64) -> Self {
        SolverConfig {
            epsilon,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid(format!("epsilon {} must be positive", self.epsilon));
        }
        if let Some(e) = self.epsilon_final {
            if !(e > 0.0 && e.is_finite()) {
                return invalid(format!("epsilon_final {e} must be positive"));
            }
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be positive");
        }
        if !(self.tolerance > 0.0) {
            return invalid("tolerance must be positive");
        }
        Ok(())
    }
}

/// Joint law of (supported token, channel-input column), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    joint: Vec<f64>,
    row_tokens: Vec<usize>,
    vocab: usize,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.joint[row * self.cols + col]
    }

    pub fn row_tokens(&self) -> &[usize] {
        &self.row_tokens
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.joint.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.joint.chunks(self.cols) {
            sums.iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        sums
    }

    /// Expected angular distance under the plan.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        self.joint.iter().zip(cost.as_slice()).map(|(p, c)| p * c).sum()
    }

    /// `(1/r) Σ_j r·joint[·][j]` expanded to the full vocabulary: the token law
    /// after averaging over a uniform key.
    pub fn key_average(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab];
        for (tok, s) in self.row_tokens.iter().zip(self.row_sums()) {
            out[*tok] = s;
        }
        out
    }

    /// Largest deviation between the key-averaged token law and `q`.
    pub fn mixture_deviation(&self, q: &TokenDistribution) -> f64 {
        self.key_average()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Solves the transport problem between `q` and the uniform key law.
pub fn solve_plan(q: &TokenDistribution, cost: &CostMatrix, cfg: &SolverConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let a: Vec<f64> = cost.row_tokens.iter().map(|&t| q.prob(t)).collect();
    if a.is_empty() || a.iter().any(|&x| x <= 0.0) {
        return invalid("cost rows must match the support of the distribution");
    }
    let r = cost.cols;
    let b = vec![1.0 / r as f64; r];
    let joint = if cost.rows == 1 {
        b.clone()
    } else {
        let raw = match cfg.method {
            SolverMethod::Sinkhorn => {
                let scale = cost.mean();
                let scale = if scale > 0.0 { scale } else { 1.0 };
                let start = cfg.epsilon * scale;
                let end = cfg.epsilon_final.unwrap_or(cfg.epsilon).min(cfg.epsilon) * scale;
                sinkhorn::solve(&a, &b, &cost.costs, start, end, cfg.max_iters, cfg.tolerance)?
            }
            SolverMethod::Exact => circular::solve(&a, &cost.row_angles, &b, &cost.col_angles),
        };
        round_to_marginals(raw, &a, &b)
    };
    Ok(TransportPlan {
        rows: cost.rows,
        cols: r,
        joint,
        row_tokens: cost.row_tokens.clone(),
        vocab: q.vocab(),
    })
}

/// Closed-form plan for `q` uniform on two tokens: every column sends all
/// of its mass to the strictly closer token.
///
/// Fails with [`Error::Tie`] when a column is equidistant from both tokens
/// and with [`Error::TwoPointImbalance`] when the rule does not split the
/// columns evenly, in which case the closed form is not a feasible plan.
pub fn solve_plan_twopoint(q: &TokenDistribution, cost: &CostMatrix) -> Result<TransportPlan> {
    let Some((i, j)) = q.two_point() else {
        return invalid("two-point rule needs a distribution uniform on two tokens");
    };
    if cost.row_tokens != [i, j] {
        return invalid("cost rows must be the two supported tokens");
    }
    let r = cost.cols;
    let mass = 1.0 / r as f64;
    let mut joint = vec![0.0; 2 * r];
    let mut first_columns = 0;
    for col in 0..r {
        let (d0, d1) = (cost.get(0, col), cost.get(1, col));
        if (d0 - d1).abs() <= ANGLE_TOLERANCE {
            return Err(Error::Tie {
                column: col,
                angle: cost.col_angles[col].value(),
                first: i,
                second: j,
            });
        }
        if d0 < d1 {
            joint[col] = mass;
            first_columns += 1;
        } else {
            joint[r + col] = mass;
        }
    }
    if 2 * first_columns != r {
        return Err(Error::TwoPointImbalance {
            first: i,
            first_columns,
            columns: r,
        });
    }
    Ok(TransportPlan {
        rows: 2,
        cols: r,
        joint,
        row_tokens: vec![i, j],
        vocab: q.vocab(),
    })
}

/// Watermarked conditional for key column `col`: `r · joint[·][col]` over the
/// full vocabulary.
pub fn conditional(plan: &TransportPlan, col: usize) -> Result<TokenDistribution> {
    if col >= plan.cols {
        return invalid(format!("column {col} outside [0, {})", plan.cols));
    }
    let mut probs = vec![0.0; plan.vocab];
    let r = plan.cols as f64;
    for (row, &tok) in plan.row_tokens.iter().enumerate() {
        probs[tok] = r * plan.get(row, col);
    }
    TokenDistribution::from_weights(probs)
}

/// Projects a nonnegative matrix onto the transport polytope with row
/// marginal `a` and column marginal `b`: scale rows down, scale columns
/// down, then spread the missing mass as a rank-one correction.
pub(crate) fn round_to_marginals(mut plan: Vec<f64>, a: &[f64], b: &[f64]) -> Vec<f64> {
    let cols = b.len();
    for (row, &target) in plan.chunks_mut(cols).zip(a) {
        let s: f64 = row.iter().sum();
        if s > target {
            let scale = target / s;
            row.iter_mut().for_each(|x| *x *= scale);
        }
    }
    let mut col_sums = vec![0.0; cols];
    for row in plan.chunks(cols) {
        col_sums.iter_mut().zip(row).for_each(|(s, x)| *s += x);
    }
    let col_scale: Vec<f64> = col_sums
        .iter()
        .zip(b)
        .map(|(&s, &target)| if s > target { target / s } else { 1.0 })
        .collect();
    for row in plan.chunks_mut(cols) {
        row.iter_mut().zip(&col_scale).for_each(|(x, s)| *x *= s);
    }
    let row_err: Vec<f64> = plan
        .chunks(cols)
        .zip(a)
        .map(|(row, &target)| (target - row.iter().sum::<f64>()).max(0.0))
        .collect();
    let mut col_err = vec![0.0; cols];
    for row in plan.chunks(cols) {
        col_err.iter_mut().zip(row).for_each(|(s, x)| *s += x);
    }
    col_err
        .iter_mut()
        .zip(b)
        .for_each(|(s, &target)| *s = (target - *s).max(0.0));
    let col_total: f64 = col_err.iter().sum();
    if col_total > 0.0 {
        for (row, &re) in plan.chunks_mut(cols).zip(&row_err) {
            if re > 0.0 {
                row.iter_mut()
                    .zip(&col_err)
                    .for_each(|(x, &ce)| *x += re * ce / col_total);
            }
        }
    }
    plan
}
