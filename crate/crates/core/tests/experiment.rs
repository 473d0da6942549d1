use std::path::Path;

use limao_core::config::{ExperimentConfig, SystemKind};
use limao_core::sim::{
    resume_experiment, run_experiment, DriftMode, ExperimentState, Manifest, SyntheticEnv, CHECKPOINT_FILE, CSV_HEADER,
    ITERATIONS_CSV, MANIFEST_JSON, SUMMARY_JSON,
};

/// A small but complete configuration that keeps each run to a second or two.
fn small(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.queries_per_iteration = 6;
    cfg.candidates = 4;
    cfg.test_queries = 3;
    cfg.warmup = 2;
    cfg.trainer.offline_epochs = 4;
    cfg
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn column(csv: &str, system: &str, col: usize) -> Vec<String> {
    rows(csv).into_iter().filter(|r| r[0] == system).map(|r| r[col].clone()).collect()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn static_run_writes_one_row_per_iteration_and_system() {
    let mut cfg = small(1);
    cfg.drift.mode = DriftMode::Static;
    cfg.drift.iterations = 5;
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg, vec![], Some(dir.path())).unwrap();
    let csv = read(dir.path(), ITERATIONS_CSV);
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    for system in ["limao", "baseline"] {
        assert_eq!(column(&csv, system, 1), ["1", "2", "3", "4", "5"]);
        assert!(column(&csv, system, 2).iter().all(|w| w == "A"));
    }
    let width = CSV_HEADER.split(',').count();
    assert!(rows(&csv).iter().all(|r| r.len() == width));
    assert_eq!(out.summary.iterations, 5);
    assert!(dir.path().join(SUMMARY_JSON).exists());
}

#[test]
fn periodic_switch_alternates_workloads() {
    let mut cfg = small(2);
    cfg.systems = vec![SystemKind::Limao];
    cfg.drift.iterations = 10;
    cfg.drift.period = 5;
    let out = run_experiment(&cfg, vec![], None).unwrap();
    let seq: String = out.run(SystemKind::Limao).unwrap().reports.iter().map(|r| r.workload.as_str()).collect();
    assert_eq!(seq, "AAAAABBBBB");
    let flags: Vec<bool> = out.run(SystemKind::Limao).unwrap().reports.iter().map(|r| r.drift_flag).collect();
    assert_eq!(flags.iter().filter(|f| **f).count(), 1);
    assert!(flags[5]);
}

#[test]
fn volume_switch_toggles_volume() {
    let mut cfg = small(3);
    cfg.systems = vec![SystemKind::Baseline];
    cfg.drift.mode = DriftMode::VolumeSwitch;
    cfg.drift.iterations = 6;
    cfg.drift.period = 2;
    let out = run_experiment(&cfg, vec![], None).unwrap();
    let volumes: Vec<f64> = out.run(SystemKind::Baseline).unwrap().reports.iter().map(|r| r.volume).collect();
    assert_eq!(volumes, [1.0, 1.0, 0.1, 0.1, 1.0, 1.0]);
}

#[test]
fn non_periodic_runs_stay_in_bounds() {
    let mut cfg = small(4);
    cfg.systems = vec![SystemKind::Baseline];
    cfg.drift.mode = DriftMode::NonPeriodic;
    cfg.drift.iterations = 30;
    cfg.drift.min_run = 2;
    cfg.drift.max_run = 8;
    let out = run_experiment(&cfg, vec![], None).unwrap();
    let seq: Vec<&str> = out.run(SystemKind::Baseline).unwrap().reports.iter().map(|r| r.workload.as_str()).collect();
    let mut runs = vec![1];
    for w in seq.windows(2) {
        if w[0] == w[1] {
            *runs.last_mut().unwrap() += 1;
        } else {
            runs.push(1);
        }
    }
    assert!(runs.len() > 1, "{seq:?}");
    let (last, rest) = runs.split_last().unwrap();
    assert!(rest.iter().all(|r| (2..=8).contains(r)), "{runs:?}");
    assert!(*last >= 2, "{runs:?}");
}

#[test]
fn paired_systems_see_the_same_schedule() {
    let mut cfg = small(5);
    cfg.drift.iterations = 4;
    cfg.drift.period = 2;
    let out = run_experiment(&cfg, vec![], None).unwrap();
    let l = &out.run(SystemKind::Limao).unwrap().reports;
    let b = &out.run(SystemKind::Baseline).unwrap().reports;
    for (x, y) in l.iter().zip(b) {
        assert_eq!((x.iteration, &x.workload, x.volume, x.drift_flag), (y.iteration, &y.workload, y.volume, y.drift_flag));
        assert_eq!(x.latencies.len(), y.latencies.len());
    }
    // The baseline retrains on the last iteration only and never grows its hub.
    assert!(b.iter().all(|r| r.modules == 1 && r.created_modules == 0));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let mut cfg = small(6);
    cfg.drift.iterations = 6;
    cfg.drift.period = 3;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, vec![], Some(a.path())).unwrap();
    run_experiment(&cfg, vec![], Some(b.path())).unwrap();
    for file in [ITERATIONS_CSV, SUMMARY_JSON, MANIFEST_JSON] {
        assert_eq!(read(a.path(), file), read(b.path(), file), "{file}");
    }
    cfg.seed += 1;
    let c = tempfile::tempdir().unwrap();
    run_experiment(&cfg, vec![], Some(c.path())).unwrap();
    assert_ne!(read(a.path(), ITERATIONS_CSV), read(c.path(), ITERATIONS_CSV));
}

#[test]
fn resume_from_iteration_ten_matches_uninterrupted_run() {
    let mut cfg = small(7);
    cfg.drift.iterations = 14;
    cfg.drift.period = 4;
    cfg.checkpoint_every = Some(10);
    let full = tempfile::tempdir().unwrap();
    run_experiment(&cfg, vec![], Some(full.path())).unwrap();

    let cut = tempfile::tempdir().unwrap();
    let env = SyntheticEnv::new(cfg.clone()).unwrap();
    let mut state = ExperimentState::new(&env).unwrap();
    state.advance(&env, 12, Some(cut.path())).unwrap();
    drop(state);
    let saved: ExperimentState = limao_core::checkpoint::load(&cut.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(saved.next_iteration, 11);

    let resumed = resume_experiment(cut.path(), vec![]).unwrap();
    assert_eq!(resumed.summary.iterations, 14);
    assert_eq!(read(full.path(), ITERATIONS_CSV), read(cut.path(), ITERATIONS_CSV));
    assert_eq!(read(full.path(), SUMMARY_JSON), read(cut.path(), SUMMARY_JSON));
}

#[test]
fn manifest_records_defaults_and_reconstructs_the_config() {
    let text = "seed = 8\nqueries_per_iteration = 5\ncandidates = 3\ntest_queries = 2\n[drift]\niterations = 3\n";
    let (cfg, defaulted) = ExperimentConfig::from_toml(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, defaulted.clone(), Some(dir.path())).unwrap();
    let manifest: Manifest = serde_json::from_str(&read(dir.path(), MANIFEST_JSON)).unwrap();
    assert_eq!(manifest.seed, 8);
    assert_eq!(manifest.defaulted_fields, defaulted);
    for key in ["trainer", "hub_sizes", "drift.period", "oracle", "timeout_factor"] {
        assert!(manifest.defaulted_fields.iter().any(|d| d == key), "{key}");
    }
    assert!(!manifest.defaulted_fields.iter().any(|d| d == "seed" || d == "drift.iterations"));
    assert_eq!(manifest.config, cfg);
    let (again, _) = ExperimentConfig::from_toml(&manifest.config.to_toml()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn schedules_referencing_missing_workloads_are_rejected() {
    let text = "[[drift.schedule]]\nstart = 1\nend = 3\nworkload = 2\nvolume = 1.0\n";
    let err = ExperimentConfig::from_toml(text).unwrap_err();
    assert!(err.to_string().contains("workload 2"), "{err}");
}
