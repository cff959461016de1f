use std::fs;
use std::path::Path;

use jsonschema::JSONSchema;
use serde_json::Value;
use wsob_core::harness::{run, ExperimentConfig};

fn docs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs"))
}

fn schema() -> JSONSchema {
    let text = fs::read_to_string(docs().join("record.schema.json")).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    JSONSchema::compile(&value).expect("schema compiles")
}

fn check(schema: &JSONSchema, record: &Value) {
    if let Err(errors) = schema.validate(record) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("record does not validate:\n{}", msgs.join("\n"));
    }
}

const PARAMS: &str = "[params]\nn = 1\nm = 1\np = 2.0\nsigma = 1.5\n";

#[test]
fn records_of_every_mode_validate() {
    let schema = schema();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let configs = [
        format!("mode = \"spectrum\"\n{PARAMS}[grid]\nk_range = [2, 300]\n"),
        format!(
            "mode = \"bracketing\"\n{PARAMS}[grid]\nepsilon_range = {{ lo = 0.02, hi = 0.3, count = 5 }}\nlevels = [2]\n\
             [calibration]\nresolution = 8\nk_max = 20\n"
        ),
        format!("mode = \"certificates\"\n{PARAMS}[grid]\nepsilon = [0.1, 0.01, 0.001]\n"),
        format!("mode = \"entropy\"\n{PARAMS}[grid]\nk_range = [2, 150]\n"),
    ];
    let mut dirs = Vec::new();
    for text in &configs {
        let c = ExperimentConfig::from_toml(text).unwrap();
        let o = run(&c, &out).unwrap();
        assert_eq!(o.record.exit_code(), 0, "{:?}", o.record.status);
        check(&schema, &serde_json::to_value(&o.record).unwrap());
        dirs.push(o.dir);
    }
    // Fit from the stored spectrum table, and a failed fit.
    let spectrum_csv = dirs[0].join("spectrum.csv");
    let mut fit = ExperimentConfig::from_toml(&format!("mode = \"fit\"\n{PARAMS}[grid]\nk_range = [2, 300]\n")).unwrap();
    fit.fit.input = Some(spectrum_csv);
    let o = run(&fit, &out).unwrap();
    assert_eq!(o.record.exit_code(), 0, "{:?}", o.record.status);
    check(&schema, &serde_json::to_value(&o.record).unwrap());
    fs::write(tmp.path().join("short.csv"), "x,y\n1,2\n").unwrap();
    fit.fit.input = Some(tmp.path().join("short.csv"));
    let o = run(&fit, &out).unwrap();
    assert_eq!(o.record.exit_code(), 2);
    check(&schema, &serde_json::from_str(&fs::read_to_string(o.dir.join("record.json")).unwrap()).unwrap());

    let mut report = ExperimentConfig::from_toml(&format!("mode = \"report\"\n{PARAMS}")).unwrap();
    report.report.source = Some(out.clone());
    let o = run(&report, &tmp.path().join("reports")).unwrap();
    check(&schema, &serde_json::to_value(&o.record).unwrap());
}

#[test]
fn schema_rejects_malformed_records() {
    let schema = schema();
    let bad = serde_json::json!({ "schema_version": 1, "config_hash": "xyz" });
    assert!(!schema.is_valid(&bad));
}

#[test]
fn documented_columns_match_written_headers() {
    let doc = fs::read_to_string(docs().join("schema.md")).unwrap();
    for header in [
        "k,lambda,a_k,residual",
        "epsilon,region,method,nu0_lo,nu0_hi,mu0_lo",
        "epsilon,construction,dim,alpha_lower,alpha_upper,sound,nu0_spectral",
        "N,lower_value,construction",
    ] {
        assert!(doc.contains(header), "{header} undocumented");
    }
    let full = ExperimentConfig::from_toml(&format!(
        "mode = \"fit\"\n{PARAMS}[grid]\nepsilon = [0.1]\nepsilon_range = {{ lo = 0.01, hi = 0.1, count = 2 }}\n\
         k_range = [1, 2]\nlevels = [2]\n[fit]\ninput = \"a.csv\"\nmodel = \"sequence\"\n[report]\nsource = \"r\"\n\
         [sweep]\nn = [1]\nm = [1]\np = [2.0]\nsigma = [1.0]\n"
    ))
    .unwrap();
    let value: toml::Value = toml::from_str(&full.to_toml()).unwrap();
    let mut keys = Vec::new();
    for (table, v) in value.as_table().unwrap() {
        match v.as_table() {
            Some(t) => keys.extend(t.keys().map(|k| format!("{table}.{k}"))),
            None => keys.push(table.clone()),
        }
    }
    for k in keys {
        assert!(doc.contains(&format!("`{k}`")), "config key {k} undocumented");
    }
}
