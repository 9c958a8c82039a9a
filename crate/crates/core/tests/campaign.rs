use std::time::Duration;

use statefuzz::campaign::{self, CampaignConfig, CampaignError};
use statefuzz::contracts;
use statefuzz::corpus::{SeedFile, SeedFileError};
use statefuzz::frontend::compile_source;
use statefuzz::oracles::{BugClass, OracleOptions};
use statefuzz::vm::VmConfig;

fn cfg(seed: u64, energy: u64) -> CampaignConfig {
    CampaignConfig {
        rng_seed: seed,
        energy_budget: energy,
        time_budget: Duration::from_secs(60),
        ..CampaignConfig::default()
    }
}

#[test]
fn stateless_contract_stops_almost_at_once() {
    let out = campaign::run_campaign_source(contracts::STATELESS, &cfg(1, 50_000)).unwrap();
    let r = out.report;
    assert!(r.executions <= 10, "{} executions", r.executions);
    assert_eq!(r.branch_coverage_percent, 100.0);
    assert!(r.findings.is_empty());
    assert_eq!(r.template, ["constructor"]);
}

#[test]
fn execution_budget_is_respected() {
    for energy in [1, 50, 3000] {
        let r = campaign::run_campaign_source(contracts::CROWDSALE, &cfg(3, energy)).unwrap().report;
        assert!(r.executions <= energy, "{} > {energy}", r.executions);
    }
}

#[test]
fn findings_replay_from_their_witness() {
    let pkg = compile_source(contracts::CROWDSALE).unwrap();
    let r = campaign::run_campaign(&pkg, &cfg(2, 20_000)).report;
    assert!(r.has_finding(BugClass::UE, 31));
    let vm = VmConfig::default();
    for f in r.findings.iter().filter(|f| f.bug_class != BugClass::EF) {
        let seed = SeedFile::from_json(&f.witness.to_json()).unwrap();
        let (traces, hits) = campaign::replay(&seed, &pkg, &vm, &OracleOptions::default()).unwrap();
        assert_eq!(traces.len(), seed.template.len());
        assert!(
            hits.iter().any(|h| h.class == f.bug_class && h.pc == f.pc),
            "{:?} at {} did not replay",
            f.bug_class,
            f.pc
        );
    }
}

#[test]
fn replay_rejects_another_package() {
    let crowd = compile_source(contracts::CROWDSALE).unwrap();
    let guess = compile_source(contracts::GUESS_NUMBER).unwrap();
    let best = campaign::run_campaign(&crowd, &cfg(1, 500)).best_seed.unwrap();
    let err = campaign::replay(&best, &guess, &VmConfig::default(), &OracleOptions::default()).unwrap_err();
    assert!(matches!(err, CampaignError::Seed(SeedFileError::PackageMismatch { .. })), "{err}");
}

#[test]
fn empty_and_malformed_seed_files() {
    let pkg = compile_source(contracts::CROWDSALE).unwrap();
    let empty = SeedFile::new(&pkg.hash(), &[], 0);
    let (traces, hits) = campaign::replay(&empty, &pkg, &VmConfig::default(), &OracleOptions::default()).unwrap();
    assert!(traces.is_empty() && hits.is_empty());

    let mut bad = empty.clone();
    bad.template.push("invest".into());
    bad.raw_bytes.push("zz".into());
    assert!(matches!(bad.inputs(&pkg), Err(SeedFileError::Hex(0, _))));
    bad.raw_bytes.clear();
    assert!(matches!(bad.inputs(&pkg), Err(SeedFileError::Shape { calls: 1, txs: 0 })));
    assert!(SeedFile::from_json("{\"template\": 3}").is_err());
}

#[test]
fn report_serializations() {
    let r = campaign::run_campaign_source(contracts::GUESS_NUMBER, &cfg(4, 2000)).unwrap().report;
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for k in ["contract", "rngSeed", "branchCoveragePercent", "findings", "rounds", "wallClock"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    let stripped: serde_json::Value = serde_json::from_str(&r.deterministic_json()).unwrap();
    assert!(stripped.get("wallClock").is_none());

    let csv = r.coverage_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("round,elapsed_seconds,executions,covered_branches,coverage_percent")
    );
    assert_eq!(lines.count(), r.rounds.len());
    let execs: Vec<u64> = r.rounds.iter().map(|x| x.executions).collect();
    assert!(execs.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn compile_errors_surface() {
    let err = campaign::run_campaign_source("contract {", &cfg(0, 10)).err().unwrap();
    assert!(matches!(err, CampaignError::Compile(_)));
}

#[test]
fn template_follows_the_sequence_switch() {
    let with = campaign::run_campaign_source(contracts::CROWDSALE, &cfg(1, 100)).unwrap().template;
    assert_eq!(with.calls, ["constructor", "invest", "refund", "invest", "refund", "withdraw"]);
    let without = CampaignConfig {
        seq_mutation: false,
        ..cfg(1, 100)
    };
    let t = campaign::run_campaign_source(contracts::CROWDSALE, &without).unwrap().template;
    assert_eq!(t.calls, ["constructor", "invest", "refund", "withdraw"]);
}
