use std::f64::consts::{PI, TAU};

use arcmark::circle::{angular_distance, channel_input, Angle, CircleParams};
use arcmark::modcode::{encode, make_generator, CodeParams, Message};
use arcmark::sideinfo::{derive_step, MasterKey};
use arcmark::sources::{SourceKind, SourceSpec, SyntheticSource};
use arcmark::transport::{build_cost, conditional, solve_plan, SolverConfig, TokenDistribution};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn angle() -> impl Strategy<Value = f64> {
    -20.0..20.0f64
}

#[test]
fn angular_distance_is_a_metric_on_many_triples() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..100_000 {
        let (a, b, c) = (
            Angle::new(rng.random_range(0.0..TAU)),
            Angle::new(rng.random_range(0.0..TAU)),
            Angle::new(rng.random_range(0.0..TAU)),
        );
        let ab = angular_distance(a, b);
        assert_eq!(ab, angular_distance(b, a));
        assert!((0.0..=PI).contains(&ab));
        assert!(ab <= angular_distance(a, c) + angular_distance(c, b) + 1e-12);
    }
}

#[test]
fn theorem2_grid_is_a_bijection_per_symbol() {
    for vocab in 2..=32 {
        let params = CircleParams::theorem2(vocab).unwrap();
        for c in 0..vocab as u32 {
            let mut slots: Vec<u64> = (0..vocab as u32)
                .map(|v| {
                    let z = channel_input(c, v, &params).unwrap().value() - params.phi;
                    (z / TAU * vocab as f64).round() as u64 % vocab as u64
                })
                .collect();
            slots.sort_unstable();
            assert_eq!(slots, (0..vocab as u64).collect::<Vec<_>>());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distance_identity_and_symmetry(a in angle(), b in angle()) {
        let (x, y) = (Angle::new(a), Angle::new(b));
        prop_assert!((angular_distance(x, y) - angular_distance(y, x)).abs() == 0.0);
        prop_assert!(angular_distance(x, x) == 0.0);
        prop_assert!(angular_distance(x, Angle::new(a + 3.0 * TAU)) < 1e-9);
    }

    #[test]
    fn distance_is_rotation_invariant(a in angle(), b in angle(), t in angle()) {
        let d = angular_distance(Angle::new(a), Angle::new(b));
        let shifted = angular_distance(Angle::new(a + t), Angle::new(b + t));
        prop_assert!((d - shifted).abs() <= 1e-12);
    }

    #[test]
    fn zero_message_encodes_to_zero(k in 1usize..=24, n in 1usize..=64, p in 2u32..=1024, seed: u64) {
        let g = make_generator(CodeParams::new(k, n, p, seed).unwrap()).unwrap();
        let cw = encode(&Message::new(vec![0; k]).unwrap(), &g).unwrap();
        prop_assert!(cw.symbols.iter().all(|&s| s == 0));
    }

    #[test]
    fn codes_are_prefix_consistent(k in 1usize..=16, n in 2usize..=64, p in 2u32..=512, seed: u64, value: u64) {
        let short_n = 1 + (value as usize) % (n - 1);
        let m = Message::from_value(value & ((1u64 << k) - 1), k).unwrap();
        let long = make_generator(CodeParams::new(k, n, p, seed).unwrap()).unwrap();
        let short = make_generator(CodeParams::new(k, short_n, p, seed).unwrap()).unwrap();
        let a = encode(&m, &long).unwrap();
        let b = encode(&m, &short).unwrap();
        prop_assert_eq!(&a.symbols[..short_n], &b.symbols[..]);
        prop_assert!(a.symbols.iter().all(|&s| s < p));
    }

    #[test]
    fn solved_plans_are_distortion_free(
        vocab in 2usize..=24,
        log_p in 1u32..=4,
        r_mult in 1u32..=6,
        c in 0u32..16,
        seed: u64,
        exact: bool,
    ) {
        let p = 1u32 << log_p;
        let r = p * r_mult;
        let params = CircleParams::new(vocab, p, r, 0.0).unwrap();
        let mut spec = SourceSpec::new(SourceKind::Dirichlet, vocab);
        spec.source_seed = seed;
        let q = SyntheticSource::new(spec).unwrap().distribution_at(1).unwrap();
        let secret = derive_step(&MasterKey::new([3; 32], seed), 1, vocab, r);
        let cost = build_cost(&q, c % p, &secret.perm, &params).unwrap();
        let cfg = if exact { SolverConfig::exact() } else { SolverConfig::default() };
        let plan = match solve_plan(&q, &cost, &cfg) {
            Ok(plan) => plan,
            // non-convergence is a reported error, never a silent plan
            Err(arcmark::Error::SolverNonConvergence { .. }) if !exact => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(plan.mixture_deviation(&q) <= 1e-9);
        for s in plan.col_sums() {
            prop_assert!((s - 1.0 / r as f64).abs() <= 1e-9);
        }
        prop_assert!((0..plan.rows()).all(|i| (0..plan.cols()).all(|j| plan.get(i, j) >= 0.0)));
        let mut mix = vec![0.0; vocab];
        for j in 0..r as usize {
            let cond = conditional(&plan, j).unwrap();
            for (m, x) in mix.iter_mut().zip(cond.probs()) {
                *m += x / r as f64;
            }
        }
        for (m, x) in mix.iter().zip(q.probs()) {
            prop_assert!((m - x).abs() <= 1e-9);
        }
    }

    #[test]
    fn synthetic_sources_are_distributions(kind_ix in 0usize..3, vocab in 2usize..=64, seed: u64, t in 1usize..1000) {
        let kind = [SourceKind::P2Uniform, SourceKind::Dirichlet, SourceKind::TopkShaped][kind_ix];
        let mut spec = SourceSpec::new(kind, vocab);
        spec.source_seed = seed;
        spec.top_k = Some(1 + vocab / 3);
        let q: TokenDistribution = SyntheticSource::new(spec).unwrap().distribution_at(t).unwrap();
        prop_assert!((q.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(q.probs().iter().all(|&x| x >= 0.0));
    }
}
