//! Angles on the unit circle for tokens, code symbols and keys.
//!
//! Positions are computed in turns (fractions of a full revolution) and only
//! scaled to radians at the end, which keeps rationally spaced grids free of
//! accumulated drift. Angle comparisons use [`ANGLE_TOLERANCE`].

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Tolerance for equality of angles and distances, in radians.
pub const ANGLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleParams {
    /// Vocabulary size.
    #[serde(rename = "N")]
    pub vocab: usize,
    /// Symbol alphabet size.
    pub p: u32,
    /// Key alphabet size.
    pub r: u32,
    /// Fixed angular offset of the channel input, in radians.
    #[serde(default)]
    pub phi: f64,
}

impl CircleParams {
    pub fn new(vocab: usize, p: u32, r: u32, phi: f64) -> Result<Self> {
        let params = CircleParams { vocab, p, r, phi };
        params.validate()?;
        Ok(params)
    }

    /// `p = r = N` and `phi = π / (2N)`: the geometry under which the
    /// two-point transport solution is deterministic and tie-free.
    pub fn theorem2(vocab: usize) -> Result<Self> {
        let n = u32::try_from(vocab)
            .map_err(|_| crate::Error::InvalidParameter(format!("vocabulary {vocab} too large")))?;
        CircleParams::new(vocab, n, n, theorem2_phi(vocab))
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return invalid(format!("vocabulary size N = {} must be at least 2", self.vocab));
        }
        if self.p < 2 {
            return invalid(format!("symbol alphabet p = {} must be at least 2", self.p));
        }
        if self.r < 1 {
            return invalid("key alphabet r must be at least 1");
        }
        if !self.phi.is_finite() {
            return invalid("phi must be finite");
        }
        Ok(())
    }

    pub fn is_theorem2(&self) -> bool {
        self.p as usize == self.vocab
            && self.r as usize == self.vocab
            && (self.phi - theorem2_phi(self.vocab)).abs() <= ANGLE_TOLERANCE
    }
}

/// The offset `π / (2N)`.
pub fn theorem2_phi(vocab: usize) -> f64 {
    PI / (2.0 * vocab as f64)
}

/// An angle in radians, reduced to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub fn new(radians: f64) -> Self {
        Angle::from_turns(radians / TAU)
    }

    /// Angle of `turns` revolutions, reduced mod 1.
    pub fn from_turns(turns: f64) -> Self {
        let t = turns.rem_euclid(1.0);
        let rad = t * TAU;
        Angle(if rad >= TAU { 0.0 } else { rad })
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn approx_eq(self, other: Angle) -> bool {
        angular_distance(self, other) <= ANGLE_TOLERANCE
    }
}

/// `min(|a − b|, 2π − |a − b|)`, always in `[0, π]`.
pub fn angular_distance(a: Angle, b: Angle) -> f64 {
    let diff = (a.0 - b.0).abs();
    diff.min(TAU - diff)
}

/// Angle `2π·perm(i)/N` of token `i` under the step permutation.
pub fn token_angle(token: usize, perm: &[u32], params: &CircleParams) -> Result<Angle> {
    if perm.len() != params.vocab {
        return invalid(format!(
            "permutation has {} entries for vocabulary {}",
            perm.len(),
            params.vocab
        ));
    }
    if token >= params.vocab {
        return invalid(format!("token {token} outside vocabulary of {}", params.vocab));
    }
    Ok(position_angle(perm[token] as usize, params.vocab))
}

/// Angle `2π·position/N` of a permuted vocabulary slot.
pub(crate) fn position_angle(position: usize, vocab: usize) -> Angle {
    Angle::from_turns(position as f64 / vocab as f64)
}

/// Channel input `z = 2πc/p + 2πv/r + φ (mod 2π)`.
pub fn channel_input(symbol: u32, key: u32, params: &CircleParams) -> Result<Angle> {
    if symbol >= params.p {
        return invalid(format!("symbol {symbol} outside [0, {})", params.p));
    }
    if key >= params.r {
        return invalid(format!("key {key} outside [0, {})", params.r));
    }
    Ok(grid_angle(symbol, key, params))
}

/// Unchecked channel input; callers guarantee ranges.
pub(crate) fn grid_angle(symbol: u32, key: u32, params: &CircleParams) -> Angle {
    Angle::from_turns(symbol as f64 / params.p as f64 + key as f64 / params.r as f64 + params.phi / TAU)
}

/// Angular codeword representation `2πc/p + φ` of a single symbol.
pub fn symbol_angle(symbol: u32, params: &CircleParams) -> Angle {
    Angle::from_turns(symbol as f64 / params.p as f64 + params.phi / TAU)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, p: u32, r: u32, phi: f64) -> CircleParams {
        CircleParams::new(n, p, r, phi).unwrap()
    }

    fn identity(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    #[test]
    fn token_angles_on_identity_permutation() {
        let c = params(4, 4, 4, 0.0);
        assert_eq!(token_angle(0, &identity(4), &c).unwrap().value(), 0.0);
        let a = token_angle(3, &identity(4), &c).unwrap().value();
        assert!((a - 3.0 * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_permutation_relabels_tokens() {
        let c = params(4, 4, 4, 0.0);
        let rev: Vec<u32> = (0..4).rev().collect();
        for i in 0..4 {
            assert_eq!(
                token_angle(i, &rev, &c).unwrap(),
                token_angle(3 - i, &identity(4), &c).unwrap()
            );
        }
    }

    #[test]
    fn token_out_of_range() {
        let c = params(4, 4, 4, 0.0);
        assert!(token_angle(4, &identity(4), &c).is_err());
        assert!(token_angle(0, &identity(3), &c).is_err());
    }

    #[test]
    fn channel_input_values() {
        let c = params(8, 4, 8, 0.0);
        assert_eq!(channel_input(0, 0, &c).unwrap().value(), 0.0);
        assert!((channel_input(1, 2, &c).unwrap().value() - PI).abs() < 1e-12);
        assert!(channel_input(4, 0, &c).is_err());
        assert!(channel_input(0, 8, &c).is_err());
    }

    #[test]
    fn theorem2_channel_input_is_quarter_shifted_grid() {
        for n in [2usize, 5, 16] {
            let c = CircleParams::theorem2(n).unwrap();
            for sym in 0..n as u32 {
                for key in 0..n as u32 {
                    let z = channel_input(sym, key, &c).unwrap();
                    let expected = Angle::new(TAU * (sym as f64 + key as f64 + 0.25) / n as f64);
                    assert!(z.approx_eq(expected));
                }
            }
        }
    }

    #[test]
    fn distance_special_values() {
        let d = |a: f64, b: f64| angular_distance(Angle::new(a), Angle::new(b));
        assert_eq!(d(1.3, 1.3), 0.0);
        assert!((d(0.0, PI) - PI).abs() < 1e-15);
        assert!((d(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn angles_reduce_into_range() {
        for x in [-7.0, -TAU, -1e-18, 0.0, TAU, 3.0 * TAU + 0.5, 1e6] {
            let a = Angle::new(x).value();
            assert!((0.0..TAU).contains(&a), "{x} -> {a}");
        }
    }

    #[test]
    fn keys_cover_grid_once_per_symbol() {
        for n in 2..=32usize {
            let c = CircleParams::theorem2(n).unwrap();
            for sym in 0..n as u32 {
                let mut slots: Vec<usize> = (0..n as u32)
                    .map(|v| {
                        let z = channel_input(sym, v, &c).unwrap().value() - c.phi;
                        (z / TAU * n as f64).round().rem_euclid(n as f64) as usize
                    })
                    .collect();
                slots.sort_unstable();
                assert_eq!(slots, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
