use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "seed": 3,
  "num_clients": 10,
  "m_active": 4,
  "horizon_virtual_seconds": 1800,
  "latency": { "uniform_min": 0, "uniform_max": 300 },
  "data": { "k": 2, "d": 4, "base_volume": 20, "feature_dim": 5 },
  "trainer": { "epochs": 1 },
  "strategy": { "name": "afbs", "c": 3 }
}"#;

fn afbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afbs")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = afbs(&["run", "--config", "/no/such/config.json", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for text in [r#"{"bogus": true}"#, r#"{"latency": {"uniform_min": 10, "uniform_max": 5}}"#, "{"] {
        let config = write_config(dir.path(), text);
        let res = afbs(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(2), "{text}");
    }
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let res = afbs(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for file in ["report.json", "timeline.csv", "timing.json"] {
        assert!(out.join(file).is_file(), "{file}");
    }
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["strategy"], "afbs");
    assert_eq!(r["seed"], 3);
    assert_eq!(r["timeline"].as_array().unwrap().len(), 4);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let res = afbs(&["run", "--config", &config, "--out", out.to_str().unwrap(), "--seed", "41"]);
    assert!(res.status.success());
    let r = report(&out);
    assert_eq!(r["seed"], 41);
    assert_eq!(r["config"]["seed"], 41);
}

#[test]
fn sweep_shares_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("sweep");
    let res = afbs(&["sweep", "--config", &config, "--strategies", "fedbuff,afbs", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let (fb, af) = (report(&out.join("fedbuff")), report(&out.join("afbs")));
    assert_eq!(fb["strategy"], "fedbuff");
    assert_eq!(fb["dataset_checksum"], af["dataset_checksum"]);
    assert_eq!(fb["trace_digest"], af["trace_digest"]);

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(summary.as_bytes());
    let header = rows.headers().unwrap().clone();
    let checksum_col = header.iter().position(|h| h == "dataset_checksum").unwrap();
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(&records[0][0], "fedbuff");
    assert_eq!(&records[1][0], "afbs");
    assert_eq!(records[0][checksum_col], records[1][checksum_col]);
    assert_eq!(&records[0][checksum_col], fb["dataset_checksum"].as_str().unwrap());
}

#[test]
fn unknown_strategy_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let res = afbs(&["sweep", "--config", &config, "--strategies", "fedprox", "--out", "unused"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn defaults_parse_back() {
    let res = afbs(&["defaults"]);
    assert!(res.status.success());
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["num_clients"], 600);
    assert_eq!(v["strategy"]["c"], 10);
}
