use std::path::PathBuf;
use std::process::{Command, Output};

fn contract(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/contracts").join(name)
}

fn statefuzz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statefuzz")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn compile_prints_a_package() {
    let o = statefuzz(&["compile", contract("crowdsale.cl").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["name"], "Crowdsale");
    assert!(v["bytecode"].is_string());
}

#[test]
fn fuzz_writes_findings_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("run.json");
    let o = statefuzz(&[
        "fuzz",
        contract("crowdsale.cl").to_str().unwrap(),
        "--energy",
        "8000",
        "--seed",
        "1",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let findings: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(findings.iter().any(|f| f["bugClass"] == "UE" && f["line"] == 31));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["branchCoveragePercent"], 100.0);
    let csv = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(csv.starts_with("round,"));

    // the witness of a finding replays to the same finding
    let seed = dir.path().join("seed.json");
    std::fs::write(&seed, findings[0]["witness"].to_string()).unwrap();
    let o = statefuzz(&["replay", seed.to_str().unwrap(), contract("crowdsale.cl").to_str().unwrap(), "--trace-format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["trace"].is_array());
    if findings[0]["bugClass"] != "EF" {
        assert_eq!(o.status.code(), Some(2));
        assert!(v["findings"].as_array().unwrap().iter().any(|h| h["class"] == findings[0]["bugClass"]));
    }

    let o = statefuzz(&["replay", seed.to_str().unwrap(), contract("guess_number.cl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("recorded against package"));
}

#[test]
fn clean_contract_exits_zero() {
    let o = statefuzz(&["fuzz", contract("stateless.cl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "[]");
}

#[test]
fn dumps_go_to_stderr() {
    let o = statefuzz(&[
        "fuzz",
        contract("guess_number.cl").to_str().unwrap(),
        "--energy",
        "3000",
        "--dump-depgraph",
        "--dump-weights",
        "--dump-mask",
        "--dump-trace",
    ]);
    let err = stderr(&o);
    assert!(err.contains("template: constructor -> guess"), "{err}");
    assert!(err.contains("branchId"));
    assert!(err.contains("stream "));
    assert!(err.contains("guess"));
    serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap();
}

#[test]
fn fuzz_accepts_a_compiled_package() {
    let dir = tempfile::tempdir().unwrap();
    let pkg = dir.path().join("pkg.json");
    let o = statefuzz(&["compile", contract("oracles/bd_vuln.cl").to_str().unwrap(), "-o", pkg.to_str().unwrap()]);
    assert!(o.status.success());
    let o = statefuzz(&["fuzz", pkg.to_str().unwrap(), "--energy", "500", "--no-energy", "--no-mask"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("\"BD\""));
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("broken.cl");
    std::fs::write(&src, "contract {").unwrap();
    let o = statefuzz(&["fuzz", src.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
    let o = statefuzz(&["fuzz", "/nonexistent.cl"]);
    assert_eq!(o.status.code(), Some(1));
}
