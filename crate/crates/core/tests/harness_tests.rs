mod common;

use arcmark::decoder::DistanceFn;
use arcmark::embedder::EmbedConfig;
use arcmark::harness::{
    csv_string, mean_sem, run_accuracy_experiment, run_capacity_sweep, run_channel_law, run_r_ablation,
    write_sweep_csv, ExperimentSpec, SweepSpec, CSV_HEADER,
};
use arcmark::sources::{write_replay_record, ReplayPayload, ReplayRecord, SourceKind, SourceSpec};
use arcmark::transport::SolverConfig;

fn spec(embed: EmbedConfig, source: SourceSpec, trials: usize, n_grid: Vec<usize>) -> ExperimentSpec {
    ExperimentSpec {
        embed,
        source,
        distance: DistanceFn::Identity,
        trials,
        n_grid,
        master_seed: 99,
        output: None,
        max_failure_fraction: 0.05,
    }
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let s = spec(
        EmbedConfig::standard(3, 24, 12, 1).unwrap(),
        SourceSpec::new(SourceKind::Dirichlet, 12),
        40,
        vec![0, 3, 6, 12, 24],
    );
    let a = run_accuracy_experiment(&s).unwrap();
    let b = run_accuracy_experiment(&s).unwrap();
    let csv = csv_string(&a.rows, s.master_seed);
    assert_eq!(csv, csv_string(&b.rows, s.master_seed));
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + 3 * 5);
    for row in &a.rows {
        assert!(row.bit_accuracy >= row.message_accuracy);
        assert!((0.0..=1.0).contains(&row.message_accuracy));
        assert!(row.sem_message >= 0.0);
    }
}

#[test]
fn different_seed_changes_the_draws() {
    let mut s = spec(
        EmbedConfig::standard(2, 8, 8, 1).unwrap(),
        SourceSpec::new(SourceKind::Dirichlet, 8),
        30,
        vec![2],
    );
    let a = run_accuracy_experiment(&s).unwrap();
    s.master_seed = 100;
    let b = run_accuracy_experiment(&s).unwrap();
    assert_ne!(a.rows[0].mean_margin, b.rows[0].mean_margin);
}

#[test]
fn zero_tokens_give_chance_accuracy() {
    let s = spec(
        EmbedConfig::standard(2, 4, 8, 0).unwrap(),
        SourceSpec::new(SourceKind::Dirichlet, 8),
        400,
        vec![0, 4],
    );
    let out = run_accuracy_experiment(&s).unwrap();
    let row = &out.rows[0];
    let sd = (0.25f64 * 0.75 / 400.0).sqrt();
    assert!(
        (row.message_accuracy - 0.25).abs() <= 3.0 * sd,
        "{}",
        row.message_accuracy
    );
    // sem agrees with the binomial formula with Bessel's correction
    let a = row.message_accuracy;
    assert!((row.sem_message - (a * (1.0 - a) / 399.0).sqrt()).abs() < 1e-12);
}

#[test]
fn two_point_source_recovers_three_bits() {
    let mut s = spec(
        EmbedConfig::theorem2(3, 256, 16, 2).unwrap(),
        SourceSpec::new(SourceKind::P2Uniform, 16),
        200,
        vec![256],
    );
    s.distance = DistanceFn::log_ml(16);
    let out = run_accuracy_experiment(&s).unwrap();
    assert!(out.failures.is_empty());
    assert!(out.rows[0].message_accuracy >= 0.99);
}

#[test]
fn failing_trials_are_excluded_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for t in 1..=3 {
        let rec = ReplayRecord {
            t,
            payload: ReplayPayload::Probs { probs: vec![0.25; 4] },
        };
        write_replay_record(&mut f, &rec).unwrap();
    }
    let mut source = SourceSpec::new(SourceKind::Replay, 4);
    source.path = Some(path);
    let s = spec(
        EmbedConfig::standard(2, 8, 4, 0).unwrap(),
        source.clone(),
        5,
        vec![2, 8],
    );
    let out = run_accuracy_experiment(&s).unwrap();
    assert_eq!(out.failures.len(), 5);
    assert_eq!(out.rows[0].trials, 0);
    assert_eq!(out.rows[0].excluded, 5);
    assert_eq!(out.failure_fraction(5), 1.0);

    let ok = spec(EmbedConfig::standard(2, 8, 4, 0).unwrap(), source, 5, vec![1, 3]);
    let out = run_accuracy_experiment(&ok).unwrap();
    assert!(out.failures.is_empty());
}

#[test]
fn minimal_key_grid_is_valid() {
    let mut embed = EmbedConfig::standard(2, 16, 10, 0).unwrap();
    embed.circle.r = embed.circle.p;
    embed.solver = SolverConfig::exact();
    let s = spec(embed, SourceSpec::new(SourceKind::Dirichlet, 10), 10, vec![16]);
    let rows = run_r_ablation(&s, &[4, 8]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].rows[0].r, 4);
    assert_eq!(rows[0].rows[0].trials, 10);
}

#[test]
fn sweep_flags_oversized_cells() {
    let sweep = SweepSpec {
        vocab: 8,
        rates: vec![0.0, 2.0],
        n_grid: vec![16, 64],
        trials: 20,
        master_seed: 1,
        code_seed: 0,
    };
    let rows = run_capacity_sweep(&sweep).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].k, 1);
    assert!(rows[0].message_error_rate <= 0.05);
    let big = &rows[3];
    assert!(big.skipped && big.k > 24);
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows, 1).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
}

#[test]
fn channel_law_small_vocabulary() {
    let rep = run_channel_law(6, 20_000, 3).unwrap();
    assert_eq!(rep.counts.iter().sum::<u64>(), 20_000);
    assert_eq!(rep.impossible, 0);
    assert_eq!(rep.counts[5], 0);
    assert!(rep.max_z <= 3.0);
}

#[test]
fn mean_sem_edge_cases() {
    let (m, s) = mean_sem(&[]);
    assert!(m.is_nan() && s.is_nan());
    assert_eq!(mean_sem(&[1.0, 1.0, 1.0]), (1.0, 0.0));
}
