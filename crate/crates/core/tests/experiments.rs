use sparse_trotter::experiments::{
    meta_path, read_csv, run, run_batch, sweep, sweep_configs, sweep_summary, write_csv, CsvTable, ExperimentConfig,
    SweepParameter,
};
use sparse_trotter::oracle::ExactPropagator;
use sparse_trotter::Error;

fn cfg(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json).unwrap()
}

const GOLDEN_CONFIG: &str = r#"{
    "model": {"kind": "xy", "sites": 6},
    "nodes": 2,
    "scheme": {"type": "stochastic", "dt_ref": 0.1, "mu": 0.3, "sigma": 0.1, "ensemble_size": 8, "base_seed": 42},
    "t_end": 2.0
}"#;

fn assert_tables_close(got: &CsvTable, want: &CsvTable, tol: f64) {
    assert_eq!(got.header, want.header);
    assert_eq!(got.rows.len(), want.rows.len());
    for (r, (a, b)) in got.rows.iter().zip(&want.rows).enumerate() {
        for (c, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "row {r} column {}: {x} vs {y}", got.header[c]);
        }
    }
}

#[test]
fn stochastic_run_matches_golden_csv() {
    let result = run(&cfg(GOLDEN_CONFIG)).unwrap();
    assert_eq!(result.to_table().to_csv_string(), include_str!("data/stochastic_xy_l6.csv"));
    let ens = result.ensemble.as_ref().unwrap();
    assert_eq!(ens.seeds, (42..50).collect::<Vec<u64>>());
    assert_eq!(ens.final_fidelity.len(), 8);
}

#[test]
fn uniform_reference_against_itself_is_perfect() {
    let result = run(&cfg(r#"{
        "model": {"kind": "tfi", "sites": 8, "field": 2.0},
        "scheme": {"type": "uniform", "dt": 0.1},
        "t_end": 1.0
    }"#))
    .unwrap();
    assert_eq!(result.times().len(), 11);
    for f in &result.test.fidelity {
        assert!((f - 1.0).abs() < 1e-12, "{f}");
    }
    assert!(result.max_magnetization_deviation().unwrap() < 1e-12);
    assert!(result.max_correlation_deviation().unwrap() < 1e-12);
}

#[test]
fn reference_matches_exact_evolution_at_small_step() {
    let c = cfg(r#"{
        "model": {"kind": "xy", "sites": 6},
        "nodes": 2,
        "scheme": {"type": "sparse", "dt": 0.01, "sparsity": 2},
        "reference": {"dt": 0.01},
        "t_end": 1.0
    }"#);
    let result = run(&c).unwrap();
    let model = c.chain_model().unwrap();
    let prop = ExactPropagator::new(&model).unwrap();
    let exact = prop.evolve(&model.initial_state().unwrap(), 1.0).unwrap();
    let m_exact = sparse_trotter::observables::magnetization(&exact);
    let (_, m_ref) = result.reference.magnetization.last().unwrap();
    for (a, b) in m_exact.iter().zip(m_ref) {
        assert!((a - b).abs() < 1e-4);
    }
    assert!(result.final_fidelity() > 0.9999);
}

#[test]
fn sweep_shares_one_reference_and_matches_single_runs() {
    let base = cfg(r#"{
        "model": {"kind": "xy", "sites": 8},
        "nodes": 2,
        "scheme": {"type": "sparse", "dt": 0.1, "sparsity": 2},
        "t_end": 2.4,
        "output": "out/run.csv",
        "sweep": {"parameter": "sparsity", "values": [2, 4, 6]}
    }"#);
    let variants = sweep_configs(&base).unwrap();
    assert_eq!(variants.len(), 3);
    assert_eq!(variants[1].output.as_deref(), Some(std::path::Path::new("out/run_sparsity4.csv")));
    let swept = sweep(&base).unwrap();
    for (v, r) in variants.iter().zip(&swept) {
        let single = run(v).unwrap();
        assert_eq!(single.test, r.test);
        assert_eq!(single.reference, r.reference);
    }
    let fids: Vec<f64> = swept.iter().map(|r| r.final_fidelity()).collect();
    assert!(fids[0] > fids[2], "{fids:?}");
    let summary = sweep_summary(SweepParameter::Sparsity, &swept).unwrap();
    assert_eq!(summary.column("sparsity").unwrap(), vec![2.0, 4.0, 6.0]);
    assert_eq!(summary.column("final_fidelity").unwrap(), fids);
}

#[test]
fn batch_rejects_mismatched_members() {
    let a = cfg(r#"{"model": {"kind": "xy", "sites": 6}, "scheme": {"type": "uniform", "dt": 0.2}, "t_end": 1.0}"#);
    let b = cfg(r#"{"model": {"kind": "xy", "sites": 8}, "scheme": {"type": "uniform", "dt": 0.2}, "t_end": 1.0}"#);
    assert!(matches!(run_batch(&[a, b]), Err(Error::Config { .. })));
}

#[test]
fn csv_and_metadata_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("run.csv");
    let result = run(&cfg(GOLDEN_CONFIG)).unwrap();
    write_csv(&result, &path).unwrap();
    let table = read_csv(&path).unwrap();
    assert_tables_close(&table, &result.to_table(), 1e-10);
    assert_eq!(table.column("fidelity_mean").unwrap().len(), 2);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(meta_path(&path)).unwrap()).unwrap();
    assert_eq!(meta["seeds"].as_array().unwrap().len(), 8);
    assert_eq!(meta["config"]["scheme"]["base_seed"], 42);
}

#[test]
fn snapshot_stride_thins_rows_but_keeps_the_end() {
    let result = run(&cfg(r#"{
        "model": {"kind": "xy", "sites": 6},
        "scheme": {"type": "uniform", "dt": 0.1},
        "t_end": 1.0,
        "snapshot_stride": 4
    }"#))
    .unwrap();
    let times = result.times();
    assert_eq!(times.len(), 4);
    assert!((times[1] - 0.4).abs() < 1e-12);
    assert_eq!(*times.last().unwrap(), 1.0);
}

#[test]
fn config_errors_carry_diagnostics() {
    let unknown = ExperimentConfig::from_json(r#"{"model": {"kind": "xy", "sites": 6}, "scheme": {"type": "uniform", "dt": 0.1}, "t_end": 1.0, "colour": 1}"#);
    assert!(matches!(unknown, Err(Error::Parse { line: 1, .. })), "{unknown:?}");
    let bad_t = ExperimentConfig::from_json(r#"{"model": {"kind": "xy", "sites": 6}, "scheme": {"type": "uniform", "dt": 0.1}, "t_end": 0}"#);
    assert!(matches!(bad_t, Err(Error::Config { ref field, .. }) if field == "t_end"), "{bad_t:?}");
    let odd = ExperimentConfig::from_json(r#"{"model": {"kind": "xy", "sites": 7}, "scheme": {"type": "uniform", "dt": 0.1}, "t_end": 1}"#);
    assert!(odd.is_err());
}

fn repo_dir(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn files_in(rel: &str) -> Vec<std::path::PathBuf> {
    let mut files: Vec<_> = std::fs::read_dir(repo_dir(rel))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no files in {rel}");
    files
}

#[test]
fn checked_in_presets_are_valid() {
    for path in files_in("configs") {
        let c = ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(c.output.is_some(), "{}", path.display());
        if c.sweep.is_some() {
            assert!(sweep_configs(&c).unwrap().len() > 1);
        }
    }
}

#[test]
fn fuzz_corpus_seeds_are_accepted() {
    for path in files_in("fuzz/corpus/config_json") {
        let text = std::fs::read_to_string(&path).unwrap();
        let c = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }
    for path in files_in("fuzz/corpus/schedule_dump") {
        let text = std::fs::read_to_string(&path).unwrap();
        let s = sparse_trotter::Schedule::parse_dump(&text).unwrap();
        assert_eq!(s.to_dump(), text, "{}", path.display());
    }
    for path in files_in("fuzz/corpus/csv_table") {
        let table = read_csv(&path).unwrap();
        assert!(!table.rows.is_empty());
    }
}
