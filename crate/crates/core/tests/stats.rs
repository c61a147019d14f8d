mod common;

use arcmark::modcode::{encode, make_generator, CodeParams, Message};
use arcmark::sideinfo::{derive_step, MasterKey};
use arcmark::sources::{build_source, SourceKind, SourceSpec, SyntheticSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn key_values_are_uniform() {
    let mk = MasterKey::new(common::TEST_KEY, 1);
    let r = 16u32;
    let mut counts = vec![0u64; r as usize];
    for t in 1..=100_000 {
        counts[derive_step(&mk, t, 4, r).v as usize] += 1;
    }
    let expected = vec![100_000.0 / r as f64; r as usize];
    let (_, p) = common::chi_square(&counts, &expected);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn permutation_positions_are_uniform() {
    for vocab in [3usize, 8, 16] {
        let mk = MasterKey::new(common::TEST_KEY, vocab as u64);
        let steps = 100_000;
        let mut counts = vec![0u64; vocab * vocab];
        for t in 1..=steps {
            let s = derive_step(&mk, t, vocab, 1);
            for (tok, &pos) in s.perm.iter().enumerate() {
                counts[tok * vocab + pos as usize] += 1;
            }
        }
        let p = 1.0 / vocab as f64;
        let mean = steps as f64 * p;
        let sd = (steps as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "N={vocab}: {c} vs {mean}");
        }
    }
}

#[test]
fn detector_rederives_identical_secrets() {
    let hex_key = "00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff";
    let embedder_side = MasterKey::from_hex(hex_key, 42).unwrap();
    let detector_side = MasterKey::from_hex(hex_key, 42).unwrap();
    for t in 1..=1000 {
        assert_eq!(
            derive_step(&embedder_side, t, 50, 64),
            derive_step(&detector_side, t, 50, 64)
        );
    }
    let other_stream = MasterKey::from_hex(hex_key, 43).unwrap();
    let same = (1..=100)
        .filter(|&t| derive_step(&embedder_side, t, 50, 64) == derive_step(&other_stream, t, 50, 64))
        .count();
    assert_eq!(same, 0);
    assert_eq!(derive_step(&embedder_side, 1, 1, 4).perm, vec![0]);
}

#[test]
fn generator_entries_are_uniform() {
    let g = make_generator(CodeParams::new(8, 10_000, 256, 17).unwrap()).unwrap();
    let mut counts = vec![0u64; 256];
    for row in 0..8 {
        for &x in g.row(row) {
            counts[x as usize] += 1;
        }
    }
    let (_, p) = common::chi_square(&counts, &vec![80_000.0 / 256.0; 256]);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn codeword_symbols_are_uniform_for_prime_alphabet() {
    let p = 7u32;
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut counts = vec![0u64; p as usize];
    for trial in 0..20_000u64 {
        let g = make_generator(CodeParams::new(12, 3, p, trial).unwrap()).unwrap();
        let m = Message::from_value(rng.random_range(0..1 << 12), 12).unwrap();
        let cw = encode(&m, &g).unwrap();
        counts[cw.symbols[(trial % 3) as usize] as usize] += 1;
    }
    let (_, pv) = common::chi_square(&counts, &vec![20_000.0 / p as f64; p as usize]);
    assert!(pv > 0.01, "p = {pv}");
}

#[test]
fn encode_matches_naive_product() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for _ in 0..500 {
        let k = rng.random_range(1..=24);
        let n = rng.random_range(1..=40);
        let p = rng.random_range(2..=300u32);
        let g = make_generator(CodeParams::new(k, n, p, rng.random()).unwrap()).unwrap();
        let bits: Vec<u8> = (0..k).map(|_| rng.random_range(0..2u8)).collect();
        let cw = encode(&Message::new(bits.clone()).unwrap(), &g).unwrap();
        assert_eq!(cw.symbols, common::naive_encode(&bits, &g));
    }
}

#[test]
fn generator_is_reproducible_and_in_range() {
    let params = CodeParams::new(2, 3, 3, 99).unwrap();
    assert_eq!(make_generator(params).unwrap(), make_generator(params).unwrap());
    for seed in 0..50 {
        let g = make_generator(CodeParams::new(1, 1, 2, seed).unwrap()).unwrap();
        assert!(g.get(0, 0) < 2);
    }
    assert!(CodeParams::new(0, 1, 2, 0).is_err());
    assert!(CodeParams::new(1, 0, 2, 0).is_err());
    assert!(CodeParams::new(1, 1, 1, 0).is_err());
}

#[test]
fn two_point_pairs_are_uniform() {
    let mut spec = SourceSpec::new(SourceKind::P2Uniform, 4);
    spec.source_seed = 5;
    let src = SyntheticSource::new(spec).unwrap();
    let pairs = arcmark::capacity::pairs(4);
    let mut counts = vec![0u64; pairs.len()];
    let mut token_counts = vec![0u64; 4];
    for t in 1..=100_000 {
        let q = src.distribution_at(t).unwrap();
        let (i, j) = q.two_point().unwrap();
        let key = (i.min(j), i.max(j));
        counts[pairs.iter().position(|&p| p == key).unwrap()] += 1;
        token_counts[i] += 1;
        token_counts[j] += 1;
    }
    let (_, p) = common::chi_square(&counts, &[100_000.0 / 6.0; 6]);
    assert!(p > 0.01, "p = {p}");
    // each draw names two tokens; every token appears with probability 1/2
    let sd = (100_000.0f64 * 0.25).sqrt();
    for c in token_counts {
        assert!((c as f64 - 50_000.0).abs() <= 3.0 * sd);
    }
}

#[test]
fn two_point_with_two_tokens_is_fixed() {
    let src = SyntheticSource::new(SourceSpec::new(SourceKind::P2Uniform, 2)).unwrap();
    for t in 1..100 {
        assert_eq!(src.distribution_at(t).unwrap().probs(), &[0.5, 0.5]);
    }
}

#[test]
fn synthetic_distributions_are_normalized_and_reproducible() {
    for kind in [SourceKind::P2Uniform, SourceKind::Dirichlet, SourceKind::TopkShaped] {
        let mut spec = SourceSpec::new(kind, 30);
        spec.top_k = Some(5);
        spec.temperature = 0.7;
        spec.source_seed = 12;
        let mut a = build_source(&spec).unwrap();
        let mut b = build_source(&spec).unwrap();
        for t in 1..=300 {
            let q = a.next_distribution(t, &[]).unwrap();
            assert!((q.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(q.probs().iter().all(|&x| x >= 0.0));
            assert_eq!(q, b.next_distribution(t, &[1, 2, 3]).unwrap());
            if kind == SourceKind::TopkShaped {
                assert!(q.support().len() <= 5);
            }
        }
    }
}

#[test]
fn top_k_equal_to_vocabulary_is_plain_dirichlet() {
    let mut spec = SourceSpec::new(SourceKind::TopkShaped, 12);
    spec.top_k = Some(12);
    spec.source_seed = 3;
    let shaped = SyntheticSource::new(spec.clone()).unwrap();
    spec.kind = SourceKind::Dirichlet;
    spec.top_k = None;
    let plain = SyntheticSource::new(spec).unwrap();
    for t in 1..50 {
        let a = shaped.distribution_at(t).unwrap();
        let b = plain.distribution_at(t).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
