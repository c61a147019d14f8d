use arcmark::capacity::{
    brute_force_capacity, capacity_closed_form, capacity_limit, optimal_construction, pairs, EncoderTable,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// `log2 N + Σ_t (t/C) log2(t/C)`, summed from the top down.
fn closed_form_oracle(n: usize) -> f64 {
    let c = (n * (n - 1) / 2) as f64;
    let mut s = 0.0;
    for t in (1..n).rev() {
        let x = t as f64 / c;
        s += x * x.ln() / std::f64::consts::LN_2;
    }
    (n as f64).ln() / std::f64::consts::LN_2 + s
}

#[test]
fn closed_form_small_values() {
    assert!((capacity_closed_form(2).unwrap() - 1.0).abs() < 1e-12);
    assert!((capacity_closed_form(3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let four = 2.0 + (1..=3).map(|t| (t as f64 / 6.0) * (t as f64 / 6.0).log2()).sum::<f64>();
    assert!((capacity_closed_form(4).unwrap() - four).abs() < 1e-12);
    for n in 2..200 {
        assert!((capacity_closed_form(n).unwrap() - closed_form_oracle(n)).abs() < 1e-9);
    }
    assert!(capacity_closed_form(1).is_err());
}

#[test]
fn closed_form_decreases_to_limit() {
    let limit = capacity_limit();
    assert!((limit - (2.0 / 0.5f64.exp()).log2()).abs() < 1e-12);
    assert!((capacity_closed_form(5000).unwrap() - limit).abs() < 1e-3);
    let values: Vec<f64> = (3..=100).map(|n| capacity_closed_form(n).unwrap()).collect();
    for w in values.windows(2) {
        assert!(w[1] < w[0]);
        assert!(w[1] > limit);
    }
}

#[test]
fn brute_force_matches_closed_form() {
    for n in 2..=4 {
        let res = brute_force_capacity(n, 4).unwrap();
        assert!((res.bits - capacity_closed_form(n).unwrap()).abs() < 1e-9);
        assert!(res.table.is_distortion_free());
        assert!((res.table.mutual_information_bits() - res.bits).abs() < 1e-9);
        assert_eq!(res.skipped_letters, vec![3]);
    }
    let two = brute_force_capacity(2, 2).unwrap();
    assert!((two.bits - 1.0).abs() < 1e-12);
    assert!(brute_force_capacity(6, 2).is_err());
}

#[test]
fn three_token_construction_is_the_published_table() {
    let t = optimal_construction(3).unwrap();
    let one_based: Vec<Vec<usize>> = t.cells.iter().map(|r| r.iter().map(|x| x + 1).collect()).collect();
    assert_eq!(one_based, vec![vec![1, 1, 2], vec![2, 3, 3]]);
    assert_eq!(t.pairs, vec![(0, 1), (0, 2), (1, 2)]);
    assert!((t.conditional_entropy_bits() - (3f64.log2() - 2.0 / 3.0)).abs() < 1e-12);
    assert!((t.mutual_information_bits() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn construction_attains_closed_form() {
    for n in 2..=16 {
        let t = optimal_construction(n).unwrap();
        assert!(t.is_distortion_free());
        assert!((t.mutual_information_bits() - capacity_closed_form(n).unwrap()).abs() < 1e-9);
        let mut profile = t.row_counts(0);
        assert_eq!(profile, (0..n).rev().collect::<Vec<_>>());
        profile = t.row_counts(1);
        profile.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(profile, (0..n).rev().collect::<Vec<_>>());
    }
}

#[test]
fn random_feasible_tables_respect_the_bound() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    for trial in 0..10_000 {
        let n = 3 + trial % 3;
        let letters = 2 * rng.random_range(1..=4);
        let cols = pairs(n);
        let mut cells = vec![vec![0usize; cols.len()]; letters];
        for (q, &(i, j)) in cols.iter().enumerate() {
            let mut choice: Vec<usize> = (0..letters).map(|w| if w < letters / 2 { i } else { j }).collect();
            choice.shuffle(&mut rng);
            for w in 0..letters {
                cells[w][q] = choice[w];
            }
        }
        let table = EncoderTable {
            vocab: n,
            weights: vec![1.0 / letters as f64; letters],
            pairs: cols,
            cells,
        };
        assert!(table.is_distortion_free());
        assert!(table.mutual_information_bits() <= capacity_closed_form(n).unwrap() + 1e-12);
    }
}

#[test]
fn unbalanced_table_is_not_distortion_free() {
    let mut t = optimal_construction(3).unwrap();
    t.cells[1][0] = 0;
    assert!(!t.is_distortion_free());
}
