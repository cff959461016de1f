use super::*;

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

const SPECTRUM: &str = r#"
mode = "spectrum"
[params]
n = 1
m = 1
p = 2.0
sigma = 1.5
[grid]
k_range = [2, 300]
[mesh]
resolution = 6
"#;

fn config_fields(e: Error) -> Vec<String> {
    match e {
        Error::Config(v) => v.into_iter().map(|f| f.field).collect(),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn empty_grid_is_rejected_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cfg("mode = \"bracketing\"\n[params]\nn = 1\nm = 1\np = 2.0\nsigma = 1.0\n");
    let e = run(&c, tmp.path()).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    assert_eq!(config_fields(e), ["grid.epsilon"]);
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn every_offending_field_is_reported() {
    let c = cfg(r#"
mode = "spectrum"
[params]
n = 2
m = 1
p = 3.0
sigma = 0.0
[grid]
k_range = [5, 3]
[tolerances]
eigen = 2.0
"#);
    let fields = config_fields(c.validate().unwrap_err());
    for f in ["params.sigma", "params.p", "params.n", "grid.k_range", "tolerances.eigen"] {
        assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
    }
}

#[test]
fn unknown_keys_are_config_errors() {
    let e = ExperimentConfig::from_toml("mode = \"spectrum\"\nbogus = 1\n[params]\nn=1\nm=1\np=2.0\nsigma=1.0\n");
    assert_eq!(e.unwrap_err().exit_code(), 1);
}

#[test]
fn hash_is_deterministic_and_ignores_output_dir() {
    let a = cfg(SPECTRUM);
    let mut b = cfg(SPECTRUM);
    b.output.dir = Some("elsewhere".into());
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 16);
    let round = cfg(&a.to_toml());
    assert_eq!(round.hash(), a.hash());
    let mut c = a.clone();
    c.params.sigma = 1.25;
    assert_ne!(c.hash(), a.hash());
}

#[test]
fn spectrum_run_writes_record_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cfg(SPECTRUM);
    let o = run(&c, tmp.path()).unwrap();
    assert_eq!(o.record.exit_code(), 0);
    assert_eq!(o.dir, tmp.path().join(c.hash()));
    let Some(ModeResults::Spectrum(r)) = &o.record.results else { panic!("{:?}", o.record.results) };
    assert_eq!(r.computed, 300);
    assert!(r.max_residual <= 1e-9);
    let law = r.law.expect("fit");
    assert!((law.power - 1.0).abs() < 0.15, "{law:?}");
    let rows = fs::read_to_string(o.dir.join("spectrum.csv")).unwrap();
    assert!(rows.starts_with("k,lambda,a_k,residual"));
    assert_eq!(rows.lines().count(), 301);
    let stored: ExperimentRecord =
        serde_json::from_str(&fs::read_to_string(o.dir.join("record.json")).unwrap()).unwrap();
    assert_eq!(stored, o.record);
    // A second run appends to the log.
    run(&c, tmp.path()).unwrap();
    assert_eq!(fs::read_to_string(o.dir.join("records.jsonl")).unwrap().lines().count(), 2);
}

fn certificate_sweep() -> ExperimentConfig {
    cfg(r#"
mode = "certificates"
[params]
n = 1
m = 1
p = 2.0
sigma = 1.0
[grid]
epsilon_range = { lo = 1e-4, hi = 0.1, count = 10 }
[mesh]
resolution = 4
[sweep]
p = [1.5, 3.0]
sigma = [0.5, 2.0]
"#)
}

#[test]
fn sweeps_are_reproducible() {
    let t = certificate_sweep();
    let a = sweep(&t, tempfile::tempdir().unwrap().path()).unwrap();
    let b = sweep(&t, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(a.entries.len(), 4);
    assert_eq!(a, b);
    assert!(a.entries.windows(2).all(|w| w[0].config_hash < w[1].config_hash));
}

#[test]
fn single_point_sweep_matches_run() {
    let mut t = certificate_sweep();
    t.sweep = SweepConfig { sigma: vec![2.0], p: vec![3.0], ..SweepConfig::default() };
    let tmp = tempfile::tempdir().unwrap();
    let s = sweep(&t, tmp.path()).unwrap();
    let mut single = t.clone();
    single.sweep = SweepConfig::default();
    single.params.sigma = 2.0;
    single.params.p = 3.0;
    let o = run(&single, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(s.entries.len(), 1);
    assert_eq!(s.entries[0].config_hash, o.record.config_hash);
    assert_eq!(s.entries[0].verdict, o.record.verdict);
    let stored = load_records(tmp.path()).unwrap();
    assert_eq!(stored[0].results, o.record.results);
}

#[test]
fn report_tabulates_stored_runs() {
    let store = tempfile::tempdir().unwrap();
    sweep(&certificate_sweep(), store.path()).unwrap();
    let mut r = cfg("mode = \"report\"\n[params]\nn = 1\nm = 1\np = 2.0\nsigma = 1.0\n");
    r.report.source = Some(store.path().to_path_buf());
    let o = run(&r, tempfile::tempdir().unwrap().path()).unwrap();
    let Some(ModeResults::Report(rep)) = &o.record.results else { panic!() };
    assert_eq!(rep.records, 4);
    assert_eq!(rep.rows.len(), 4);
    assert_eq!(rep.table.lines().count(), 5);
    assert!(rep.table.contains("subcritical") && rep.table.contains("supercritical"));
    assert!(rep.sandwich_violations.is_empty());
    assert!(o.record.verdict.is_none());
}

#[test]
fn fit_reads_generic_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("data.csv");
    let mut text = String::from("x,y\n");
    for i in 2..=20 {
        let e = 2f64.powi(-i);
        text += &format!("{e},{}\n", e.powf(-2.0));
    }
    fs::write(&csv, text).unwrap();
    let mut c = cfg("mode = \"fit\"\n[params]\nn = 1\nm = 1\np = 2.0\nsigma = 0.5\n");
    c.fit.input = Some(csv);
    let o = run(&c, tmp.path()).unwrap();
    let Some(ModeResults::Fit(f)) = &o.record.results else { panic!() };
    assert!((f.fit.kappa - 2.0).abs() < 1e-9);
    let v = o.record.verdict.as_ref().unwrap();
    assert_eq!(v.pass, Some(true), "{v:?}");
}

#[test]
fn numerical_failure_is_persisted() {
    // A too-narrow fit input is a numerical (range) failure, not a config error.
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("short.csv");
    fs::write(&csv, "x,y\n0.1,10\n0.05,20\n").unwrap();
    let mut c = cfg("mode = \"fit\"\n[params]\nn = 1\nm = 1\np = 2.0\nsigma = 0.5\n");
    c.fit.input = Some(csv);
    let o = run(&c, tmp.path()).unwrap();
    assert_eq!(o.record.exit_code(), 2);
    assert!(o.record.results.is_none());
    assert!(o.dir.join("record.json").is_file());
}

#[test]
fn bracketing_run_sandwiches() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cfg(r#"
mode = "bracketing"
[params]
n = 1
m = 1
p = 2.0
sigma = 1.5
[grid]
epsilon_range = { lo = 0.01, hi = 0.3, count = 6 }
levels = [2, 3]
[mesh]
resolution = 4
[calibration]
resolution = 8
k_max = 20
"#);
    let o = run(&c, tmp.path()).unwrap();
    let Some(ModeResults::Bracketing(b)) = &o.record.results else { panic!("{:?}", o.record.status) };
    assert_eq!(b.levels.len(), 2);
    assert_eq!(b.violations, 0);
    assert!(b.sandwich_violations.is_empty(), "{:?}", b.sandwich_violations);
    assert!(!o.record.provenance.calibrations.is_empty());
    let csv = fs::read_to_string(o.dir.join("counting.csv")).unwrap();
    assert!(csv.contains("factorized") && csv.contains("certificate") && csv.contains("spectral"));
}
