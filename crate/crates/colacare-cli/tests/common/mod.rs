//! Shared helpers for the CLI integration and acceptance tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use colacare::llm::scripted::{tag_rule, ScriptRule};
use colacare::llm::RequestTag;

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_colacare")
}

/// Runs a subcommand against a config file and returns the output.
pub fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

pub fn run_ok(config: &Path, args: &[&str]) {
    let out = run(config, args);
    assert!(
        out.status.success(),
        "`colacare {}` failed\nstdout: {}\nstderr: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A config JSON for a synthetic-cohort run with the scripted provider.
#[allow(clippy::too_many_arguments)]
pub fn write_config(
    path: &Path,
    run_dir: &Path,
    script: &Path,
    seed: u64,
    n_patients: usize,
    n_features: usize,
    max_visits: usize,
    experts: &[serde_json::Value],
    split: (f64, f64, f64),
) -> PathBuf {
    let config = serde_json::json!({
        "run_dir": run_dir,
        "seed": seed,
        "dataset": {"synthetic": {
            "n_patients": n_patients,
            "n_features": n_features,
            "max_visits": max_visits,
        }},
        "split_ratios": {"train": split.0, "val": split.1, "test": split.2},
        "experts": experts,
        "consultation": {
            "n_doctors": experts.len(),
            "max_rounds": 3,
            "k_retrieval": 16,
            "k_top_features": 10,
        },
        "provider": {"type": "scripted", "script": script},
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path.to_path_buf()
}

/// Minimal script: generic reviews, one high-risk report, everyone agrees,
/// and a constant llm-output probability.
pub fn all_agree_rules() -> Vec<ScriptRule> {
    vec![
        tag_rule(
            RequestTag::DoctorReview,
            r#"{"reason": "risk markers reviewed against the references", "evidence_ids": []}"#,
        ),
        tag_rule(
            RequestTag::MetaReport,
            r#"{"risk": "high", "narrative": "synthesized risk assessment", "evidence": []}"#,
        ),
        tag_rule(RequestTag::DoctorStatement, r#"{"vote": "agree"}"#),
        tag_rule(RequestTag::MetaAction, r#"{"action": "stop"}"#),
        tag_rule(
            RequestTag::MetaRevision,
            r#"{"risk": "high", "narrative": "revised risk assessment", "evidence": []}"#,
        ),
        tag_rule(RequestTag::LlmOutputVariant, "0.5"),
    ]
}

pub fn write_script(path: &Path, rules: &[ScriptRule]) {
    colacare::llm::Script::save(rules, path).unwrap();
}

/// Byte-level file comparison.
pub fn file_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

pub fn assert_same_bytes(a: &Path, b: &Path) {
    assert_eq!(
        file_bytes(a),
        file_bytes(b),
        "files differ: {} vs {}",
        a.display(),
        b.display()
    );
}
