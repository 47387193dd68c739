//! The experiment driver end to end on small problems.

use std::io::Write as _;

use fone_core::harness::{
    aggregate_rows, run_experiment, run_experiment_with, Estimator, ExperimentReport,
    ExperimentSpec, ReplicationRow, RunOptions,
};
use fone_core::ModelFamily;

fn small_spec() -> ExperimentSpec {
    let mut s = ExperimentSpec::new(ModelFamily::Logistic, 4000, 4);
    s.machines = 4;
    s.replications = 4;
    s.seed = 99;
    s.n0 = Some(200);
    s.estimators = vec![
        Estimator::Init,
        Estimator::Sgd,
        Estimator::DcSgd,
        Estimator::DisFone,
        Estimator::Erm,
    ];
    s
}

fn without_timing(rows: &[ReplicationRow]) -> Vec<ReplicationRow> {
    rows.iter()
        .cloned()
        .map(|r| ReplicationRow { seconds: 0.0, ..r })
        .collect()
}

#[test]
fn worker_count_does_not_change_results() {
    let spec = small_spec();
    let one = run_experiment_with(
        &spec,
        &RunOptions {
            threads: Some(1),
            replications: None,
        },
    )
    .unwrap();
    let two = run_experiment_with(
        &spec,
        &RunOptions {
            threads: Some(2),
            replications: None,
        },
    )
    .unwrap();
    assert_eq!(without_timing(&one.rows), without_timing(&two.rows));
    assert_eq!(one.tuning, two.tuning);
}

#[test]
fn dropping_a_replication_matches_a_run_without_it() {
    let spec = small_spec();
    let full = run_experiment(&spec).unwrap();
    let kept: Vec<ReplicationRow> = full
        .rows
        .iter()
        .filter(|r| r.replication != 3)
        .cloned()
        .collect();
    let partial = run_experiment_with(
        &spec,
        &RunOptions {
            threads: None,
            replications: Some(vec![1, 2, 4]),
        },
    )
    .unwrap();
    assert_eq!(without_timing(&partial.rows), without_timing(&kept));
    let mut a = aggregate_rows(&without_timing(&kept));
    let mut b = aggregate_rows(&without_timing(&partial.rows));
    a.iter_mut()
        .chain(b.iter_mut())
        .for_each(|r| r.mean_seconds = None);
    assert_eq!(a, b);
}

#[test]
fn csv_aggregates_are_rederivable() {
    let report = run_experiment(&small_spec()).unwrap();
    let back = ExperimentReport::read_csv(report.to_csv_string().as_bytes()).unwrap();
    assert_eq!(back, report);
    assert_eq!(aggregate_rows(&back.rows), back.aggregates);
    let hash = small_spec().hash();
    assert!(report
        .to_csv_string()
        .lines()
        .skip(1)
        .all(|l| l.ends_with(&hash)));
}

#[test]
fn ledger_counts_in_report() {
    let spec = small_spec();
    let r = spec.resolved().unwrap();
    let report = run_experiment(&spec).unwrap();
    let l = spec.machines as u64;
    for row in &report.rows {
        let want = match row.estimator {
            Estimator::DcSgd => 2 * l,
            Estimator::DisFone => r.rounds as u64 * (l + 2),
            _ => 0,
        };
        assert_eq!(row.comm_vectors, want, "{}", row.estimator);
    }
}

#[test]
fn spec_files_round_trip_and_reject_typos() {
    let spec = small_spec();
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(spec.to_toml().as_bytes()).unwrap();
    let loaded = ExperimentSpec::load(f.path()).unwrap();
    assert_eq!(loaded, spec);
    assert_eq!(loaded.hash(), spec.hash());

    let typo = spec.to_toml().replace("machines", "machine");
    assert!(ExperimentSpec::from_toml(&typo).is_err());
    let mut other = spec.clone();
    other.seed += 1;
    assert_ne!(other.hash(), spec.hash());
}

#[test]
fn invalid_specs_are_rejected_before_running() {
    let mut s = small_spec();
    s.machines = 0;
    assert!(run_experiment(&s).is_err());
    let mut s = small_spec();
    s.tau = Some(1.5);
    assert!(s.resolved().is_err());
    let mut s = small_spec();
    s.grid = Some(vec![1.0, 0.5]);
    assert!(s.resolved().is_err());
}
