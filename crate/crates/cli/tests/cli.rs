use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wsob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsob")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PARAMS: &str = "[params]\nn = 1\nm = 1\np = 2.0\nsigma = 1.0\n";

#[test]
fn config_errors_exit_one_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", PARAMS);
    let out = tmp.path().join("runs");
    let o = wsob(&["bracketing", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("grid.epsilon"));
    assert!(!out.exists());

    let bad = write(tmp.path(), "bad.toml", "[params]\nn = 1\nm = 1\np = 0.5\nsigma = -1.0\n");
    let o = wsob(&["certificates", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("params.p") && err.contains("params.sigma") && err.contains("grid.epsilon"), "{err}");

    let o = wsob(&["spectrum", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn certificates_run_prints_summary_and_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        &format!("{PARAMS}[grid]\nepsilon_range = {{ lo = 1e-3, hi = 0.1, count = 12 }}\n"),
    );
    let out = tmp.path().join("runs");
    let o = wsob(&["certificates", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("certificates run") && text.contains("unsound: 0") && text.contains("above spectral: 0"), "{text}");
    let dir = fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    for f in ["config.toml", "record.json", "records.jsonl", "certificates.csv", "certificates.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(dir.join("certificates.csv")).unwrap();
    assert!(csv.starts_with("epsilon,construction,dim,alpha_lower,alpha_upper,sound,nu0_spectral"));
}

#[test]
fn sigma_sweep_detects_three_regimes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        &format!(
            "mode = \"certificates\"\n{PARAMS}[grid]\nepsilon_range = {{ lo = 1e-4, hi = 0.1, count = 10 }}\n\
             [sweep]\nsigma = [0.4, 1.0, 1.6]\n"
        ),
    );
    let out = tmp.path().join("runs");
    let o = wsob(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.contains(": ok")).count(), 3, "{text}");
    for regime in [" subcritical ", " critical ", " supercritical "] {
        assert!(text.contains(regime), "{regime} missing:\n{text}");
    }
    let again = wsob(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(stdout(&again).lines().skip(1).collect::<Vec<_>>(), text.lines().skip(1).collect::<Vec<_>>());

    let rep = write(tmp.path(), "report.toml", &format!("{PARAMS}[report]\nsource = \"runs\"\n"));
    let o = wsob(&["report", "--config", &rep, "--out", tmp.path().join("reports").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("records: 3 (0 failed)"), "{table}");
    assert!(table.contains("subcritical") && table.contains("supercritical"));
}

#[test]
fn fit_and_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut data = String::from("x,y\n");
    for i in 2..=20 {
        let e = 2f64.powi(-i);
        data += &format!("{e},{}\n", (-e.ln()) / e);
    }
    write(tmp.path(), "data.csv", &data);
    let cfg = write(tmp.path(), "fit.toml", &format!("{PARAMS}[fit]\ninput = \"data.csv\"\n"));
    let out = tmp.path().join("runs");
    let o = wsob(&["fit", "--config", &cfg, "--out", out.to_str().unwrap(), "--tolerance", "0.05"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("kappa 1.0000 rho 1.0000") && text.contains("(tol 0.05) PASS"), "{text}");

    write(tmp.path(), "short.csv", "x,y\n0.1,10\n0.05,20\n");
    let cfg = write(tmp.path(), "short.toml", &format!("{PARAMS}[fit]\ninput = \"short.csv\"\n"));
    let o = wsob(&["fit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn spectrum_writes_eigenvalue_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", &format!("{PARAMS}[grid]\nk_range = [2, 200]\n"));
    let out = tmp.path().join("runs");
    let o = wsob(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("eigenpairs: 200") && text.contains("[spectral] critical"), "{text}");
    let dir = fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let csv = fs::read_to_string(dir.join("spectrum.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201);
}
