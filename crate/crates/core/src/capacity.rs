//! Watermarking capacity on the class of two-point distributions.
//!
//! With `Q` uniform over the `C(N,2)` distributions that put mass 1/2 on two
//! tokens, an encoder is a table `x(q, w)` choosing one of the two tokens of
//! column `q` for each letter `w`. Distortion-freeness requires every column
//! to pick each of its tokens with total letter weight 1/2, and the rate is
//! `I(W; X)`. All quantities are in bits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `C(N,2)`.
pub fn pair_count(vocab: usize) -> usize {
    vocab * (vocab - 1) / 2
}

/// `log2 N + Σ_{t=1}^{N−1} (t/C(N,2)) log2(t/C(N,2))`.
pub fn capacity_closed_form(vocab: usize) -> Result<f64> {
    if vocab < 2 {
        return invalid(format!("capacity needs N >= 2, got {vocab}"));
    }
    let c = pair_count(vocab) as f64;
    let sum: f64 = (1..vocab)
        .map(|t| {
            let x = t as f64 / c;
            x * x.log2()
        })
        .sum();
    Ok((vocab as f64).log2() + sum)
}

/// Large-`N` limit `1 − log2(e)/2`.
pub fn capacity_limit() -> f64 {
    1.0 - 0.5 * std::f64::consts::LOG2_E
}

/// Unordered token pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn pairs(vocab: usize) -> Vec<(usize, usize)> {
    (0..vocab).flat_map(|i| (i + 1..vocab).map(move |j| (i, j))).collect()
}

/// Encoder `x(q, w)` over the two-point class; tokens are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTable {
    #[serde(rename = "N")]
    pub vocab: usize,
    /// `P_W(w)` per row.
    pub weights: Vec<f64>,
    /// Column `q` is uniform on `pairs[q]`.
    pub pairs: Vec<(usize, usize)>,
    /// `cells[w][q]`: token emitted for letter `w` under column `q`.
    pub cells: Vec<Vec<usize>>,
}

impl EncoderTable {
    pub fn letters(&self) -> usize {
        self.weights.len()
    }

    /// Every cell holds a token of its column and each column picks its
    /// first token with letter weight 1/2.
    pub fn is_distortion_free(&self) -> bool {
        self.pairs.iter().enumerate().all(|(q, &(i, j))| {
            let mut first = 0.0;
            for (w, row) in self.cells.iter().enumerate() {
                let x = row[q];
                if x != i && x != j {
                    return false;
                }
                if x == i {
                    first += self.weights[w];
                }
            }
            (first - 0.5).abs() <= 1e-12
        })
    }

    /// Number of columns in which letter `w` emits each token.
    pub fn row_counts(&self, w: usize) -> Vec<usize> {
        let mut counts = vec![0; self.vocab];
        for &x in &self.cells[w] {
            counts[x] += 1;
        }
        counts
    }

    /// Joint law of `(W, X)` with `Q` uniform over the columns.
    pub fn joint(&self) -> Vec<Vec<f64>> {
        let cols = self.pairs.len() as f64;
        (0..self.letters())
            .map(|w| {
                self.row_counts(w)
                    .into_iter()
                    .map(|c| self.weights[w] * c as f64 / cols)
                    .collect()
            })
            .collect()
    }

    pub fn conditional_entropy_bits(&self) -> f64 {
        let joint = self.joint();
        joint
            .iter()
            .zip(&self.weights)
            .map(|(row, &pw)| {
                if pw <= 0.0 {
                    return 0.0;
                }
                row.iter().map(|&pwx| -pwx * plogp_ratio(pwx / pw)).sum::<f64>()
            })
            .sum()
    }

    pub fn output_entropy_bits(&self) -> f64 {
        let joint = self.joint();
        (0..self.vocab)
            .map(|x| {
                let px: f64 = joint.iter().map(|row| row[x]).sum();
                -plogp(px)
            })
            .sum()
    }

    /// `I(W; X) = H(X) − H(X | W)`.
    pub fn mutual_information_bits(&self) -> f64 {
        self.output_entropy_bits() - self.conditional_entropy_bits()
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

fn plogp_ratio(p: f64) -> f64 {
    if p > 0.0 {
        p.log2()
    } else {
        0.0
    }
}

/// Two letters of weight 1/2: `w1` emits the smaller token, `w2` the larger.
pub fn optimal_construction(vocab: usize) -> Result<EncoderTable> {
    if vocab < 2 {
        return invalid(format!("construction needs N >= 2, got {vocab}"));
    }
    let pairs = pairs(vocab);
    let cells = vec![
        pairs.iter().map(|&(i, _)| i).collect(),
        pairs.iter().map(|&(_, j)| j).collect(),
    ];
    Ok(EncoderTable {
        vocab,
        weights: vec![0.5, 0.5],
        pairs,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub bits: f64,
    pub table: EncoderTable,
    /// Letter counts searched.
    pub searched_letters: Vec<usize>,
    /// Odd letter counts, for which uniform weights cannot split a column
    /// in half.
    pub skipped_letters: Vec<usize>,
    pub tables_evaluated: u64,
}

/// Largest vocabulary accepted by [`brute_force_capacity`].
pub const MAX_BRUTE_FORCE_VOCAB: usize = 5;

/// Maximizes `I(W; X)` over all distortion-free tables with uniform `P_W` on
/// `|W| ∈ [2, max_letters]` letters.
///
/// Letters are interchangeable, so the first column is fixed to one balanced
/// assignment; every other table is a relabeling of one searched here.
pub fn brute_force_capacity(vocab: usize, max_letters: usize) -> Result<BruteForceResult> {
    if !(2..=MAX_BRUTE_FORCE_VOCAB).contains(&vocab) {
        return invalid(format!(
            "brute force supports 2 <= N <= {MAX_BRUTE_FORCE_VOCAB}, got {vocab}"
        ));
    }
    if !(2..=8).contains(&max_letters) {
        return invalid(format!("max letters {max_letters} outside [2, 8]"));
    }
    let pairs = pairs(vocab);
    let mut best: Option<(f64, EncoderTable)> = None;
    let mut searched = Vec::new();
    let mut skipped = Vec::new();
    let mut evaluated = 0u64;
    for letters in 2..=max_letters {
        if letters % 2 == 1 {
            skipped.push(letters);
            continue;
        }
        searched.push(letters);
        let (bits, masks, count) = search_letters(vocab, &pairs, letters);
        evaluated += count;
        if best.as_ref().is_none_or(|(b, _)| bits > *b + 1e-12) {
            best = Some((bits, table_from_masks(vocab, &pairs, letters, &masks)));
        }
    }
    let (bits, table) = best.expect("at least two letters searched");
    Ok(BruteForceResult {
        bits,
        table,
        searched_letters: searched,
        skipped_letters: skipped,
        tables_evaluated: evaluated,
    })
}

/// Subsets of `letters` of size `letters/2`, as bitmasks in ascending order.
fn balanced_masks(letters: usize) -> Vec<u32> {
    (0u32..1 << letters)
        .filter(|m| m.count_ones() as usize == letters / 2)
        .collect()
}

/// Bit `w` of `masks[q]` set means letter `w` emits the first token of
/// column `q`.
fn table_from_masks(vocab: usize, pairs: &[(usize, usize)], letters: usize, masks: &[u32]) -> EncoderTable {
    let cells = (0..letters)
        .map(|w| {
            pairs
                .iter()
                .zip(masks)
                .map(|(&(i, j), m)| if m >> w & 1 == 1 { i } else { j })
                .collect()
        })
        .collect();
    EncoderTable {
        vocab,
        weights: vec![1.0 / letters as f64; letters],
        pairs: pairs.to_vec(),
        cells,
    }
}

struct Search<'a> {
    pairs: &'a [(usize, usize)],
    options: &'a [u32],
    letters: usize,
    vocab: usize,
    /// `counts[w * vocab + x]`
    counts: Vec<u32>,
    masks: Vec<u32>,
    best: f64,
    best_masks: Vec<u32>,
    evaluated: u64,
    /// `c log2 c` for every count.
    clogc: Vec<f64>,
}

impl Search<'_> {
    fn apply(&mut self, q: usize, mask: u32, sign: i32) {
        let (i, j) = self.pairs[q];
        for w in 0..self.letters {
            let x = if mask >> w & 1 == 1 { i } else { j };
            let c = &mut self.counts[w * self.vocab + x];
            *c = (*c as i32 + sign) as u32;
        }
    }

    fn run(&mut self, q: usize) {
        if q == self.pairs.len() {
            self.evaluated += 1;
            // H(X|W) = log2 C − (1/(|W| C)) Σ c log2 c with uniform P_W
            let s: f64 = self.counts.iter().map(|&c| self.clogc[c as usize]).sum();
            let cols = self.pairs.len() as f64;
            let h_cond = cols.log2() - s / (self.letters as f64 * cols);
            let mi = (self.vocab as f64).log2() - h_cond;
            if mi > self.best + 1e-12 {
                self.best = mi;
                self.best_masks = self.masks.clone();
            }
            return;
        }
        for k in 0..self.options.len() {
            let m = self.options[k];
            self.masks[q] = m;
            self.apply(q, m, 1);
            self.run(q + 1);
            self.apply(q, m, -1);
        }
    }
}

/// Best mutual information, its masks and the number of tables visited.
fn search_letters(vocab: usize, pairs: &[(usize, usize)], letters: usize) -> (f64, Vec<u32>, u64) {
    let options = balanced_masks(letters);
    let cols = pairs.len();
    let clogc: Vec<f64> = (0..=cols).map(|c| plogp(c as f64)).collect();
    let fresh = |second: Option<u32>| {
        let mut s = Search {
            pairs,
            options: &options,
            letters,
            vocab,
            counts: vec![0; letters * vocab],
            masks: vec![0; cols],
            best: f64::NEG_INFINITY,
            best_masks: Vec::new(),
            evaluated: 0,
            clogc: clogc.clone(),
        };
        s.masks[0] = options[0];
        s.apply(0, options[0], 1);
        if let Some(m) = second {
            s.masks[1] = m;
            s.apply(1, m, 1);
        }
        s
    };
    if cols == 1 {
        let mut s = fresh(None);
        s.run(1);
        return (s.best, s.best_masks, s.evaluated);
    }
    let results: Vec<(f64, Vec<u32>, u64)> = options
        .par_iter()
        .map(|&m| {
            let mut s = fresh(Some(m));
            s.run(2);
            (s.best, s.best_masks, s.evaluated)
        })
        .collect();
    let evaluated = results.iter().map(|r| r.2).sum();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for (bits, masks, _) in results {
        if bits > best.0 + 1e-12 {
            best = (bits, masks);
        }
    }
    (best.0, best.1, evaluated)
}
