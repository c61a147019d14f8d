//! Exact transport on the circle under arc-length cost.
//!
//! With `h(θ)` the signed cumulative mass (tokens minus channel inputs)
//! counted from angle 0, the optimal cost is `min_c ∫ |h(θ) − c| dθ`, and the
//! minimizing `c` is a length-weighted median of `h`. On the arc where
//! `h = c` no mass crosses, so the circle can be cut there and the problem
//! becomes transport on a line, which the monotone (north-west corner)
//! coupling solves.

use std::f64::consts::{PI, TAU};

use crate::circle::Angle;

#[derive(Clone, Copy)]
enum Side {
    Row(usize),
    Col(usize),
}

pub(super) fn solve(a: &[f64], row_angles: &[Angle], b: &[f64], col_angles: &[Angle]) -> Vec<f64> {
    let n = a.len();
    let m = b.len();
    let mut events: Vec<(f64, Side)> = row_angles
        .iter()
        .enumerate()
        .map(|(i, ang)| (ang.value(), Side::Row(i)))
        .chain(
            col_angles
                .iter()
                .enumerate()
                .map(|(j, ang)| (ang.value(), Side::Col(j))),
        )
        .collect();
    events.sort_by(|x, y| x.0.total_cmp(&y.0));

    // h after each event, and the length of the gap that follows it
    let count = events.len();
    let mut gaps: Vec<(f64, f64)> = Vec::with_capacity(count);
    let mut h = 0.0;
    for (k, &(angle, side)) in events.iter().enumerate() {
        h += match side {
            Side::Row(i) => a[i],
            Side::Col(j) => -b[j],
        };
        let next = if k + 1 < count {
            events[k + 1].0
        } else {
            events[0].0 + TAU
        };
        gaps.push((h, next - angle));
    }

    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&x, &y| gaps[x].0.total_cmp(&gaps[y].0));
    let mut covered = 0.0;
    let mut cut = order[count - 1];
    for &k in &order {
        covered += gaps[k].1;
        if covered >= PI {
            cut = k;
            break;
        }
    }

    let mut rows = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(m);
    for step in 1..=count {
        match events[(cut + step) % count].1 {
            Side::Row(i) => rows.push(i),
            Side::Col(j) => cols.push(j),
        }
    }

    let mut plan = vec![0.0; n * m];
    let (mut i, mut j) = (0, 0);
    let mut ra = a[rows[0]];
    let mut rb = b[cols[0]];
    loop {
        let last_row = i + 1 == n;
        let last_col = j + 1 == m;
        let mass = if last_col {
            ra
        } else if last_row {
            rb
        } else {
            ra.min(rb)
        };
        plan[rows[i] * m + cols[j]] += mass.max(0.0);
        if last_row && last_col {
            break;
        }
        if last_col || (!last_row && ra <= rb) {
            rb -= mass;
            i += 1;
            ra = a[rows[i]];
        } else {
            ra -= mass;
            j += 1;
            rb = b[cols[j]];
        }
    }
    plan
}
