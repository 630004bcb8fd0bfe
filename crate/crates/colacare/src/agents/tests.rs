use std::collections::BTreeMap;

use super::*;
use crate::expert::ExpertOutput;
use crate::llm::scripted::{ordinal_rule, tag_rule, ScriptedProvider};
use crate::llm::{CostLedger, Pricing};

fn ledger() -> CostLedger {
    CostLedger::new(Pricing::default())
}

fn record_with(series: Vec<Vec<f64>>, statics: &[(&str, serde_json::Value)]) -> PatientRecord {
    let t = series.len();
    let f = series[0].len();
    let mut static_info = BTreeMap::new();
    for (k, v) in statics {
        static_info.insert(k.to_string(), v.clone());
    }
    PatientRecord {
        patient_id: "pt-1".to_string(),
        static_info,
        series,
        mask: vec![vec![true; f]; t],
        label: 0,
    }
}

fn fitted_specs(names: &[&str]) -> Vec<FeatureSpec> {
    names
        .iter()
        .map(|n| {
            let mut s =
                FeatureSpec::new(n, crate::data::FeatureKind::Dynamic, "unit");
            s.population_mean = Some(0.0);
            s.population_std = Some(1.0);
            s
        })
        .collect()
}

fn output(logit: f64, importances: Vec<f64>) -> ExpertOutput {
    ExpertOutput { hidden: vec![0.0; 4], logit, importances }
}

fn sample_excerpts(ids: &[&str]) -> Vec<EvidenceExcerpt> {
    ids.iter()
        .map(|id| EvidenceExcerpt {
            chunk_id: id.to_string(),
            title: format!("title of {id}"),
            excerpt: format!("excerpt text for {id}"),
        })
        .collect()
}

fn sample_report(risk: Risk, narrative: &str) -> MetaReport {
    MetaReport {
        round: 0,
        risk,
        narrative: narrative.to_string(),
        incorporated_evidence: Vec::new(),
        parse_failed: false,
    }
}

fn turn(role_id: usize, round: usize, vote: Vote, reason: &str) -> DoctorTurn {
    DoctorTurn {
        role_id,
        round,
        vote,
        reason: reason.to_string(),
        cited_chunk_ids: Vec::new(),
        raw_text: String::new(),
        parse_failed: false,
    }
}

#[test]
fn record_text_contains_z_values_and_feature_names() {
    let record = record_with(
        vec![vec![1.0, 2.0, 3.0]],
        &[("age", serde_json::json!(67)), ("sex", serde_json::json!("male"))],
    );
    let specs = fitted_specs(&["lactate", "creatinine", "spo2"]);
    let outputs = vec![("gru_last".to_string(), output(0.82, vec![0.4, -0.1, 0.2]))];
    let prt = build_patient_record(&record, &specs, &outputs, 10).unwrap();
    assert!(prt.text.contains("0.82"));
    for name in ["lactate", "creatinine", "spo2"] {
        assert!(prt.text.contains(name), "missing {name}: {}", prt.text);
    }
    assert!(prt.text.contains("pt-1"));
    assert_eq!(prt.top_features.len(), 3); // k clamps to F
}

#[test]
fn record_text_is_a_pure_function_of_inputs() {
    let record = record_with(vec![vec![0.5, 1.5]], &[("age", serde_json::json!(50))]);
    let specs = fitted_specs(&["a", "b"]);
    let outputs = vec![("m".to_string(), output(0.44, vec![0.2, 0.1]))];
    let a = build_patient_record(&record, &specs, &outputs, 2).unwrap();
    let b = build_patient_record(&record, &specs, &outputs, 2).unwrap();
    assert_eq!(a.text, b.text);
}

#[test]
fn rising_trend_from_increasing_series() {
    let record = record_with(vec![vec![1.0], vec![2.0], vec![3.0]], &[]);
    let specs = fitted_specs(&["f"]);
    assert_eq!(trend_tag(&record, &specs, 0), Trend::Rising);
}

#[test]
fn flat_trend_below_slope_threshold_and_falling_above() {
    let record = record_with(vec![vec![1.0], vec![1.005]], &[]);
    let specs = fitted_specs(&["f"]);
    assert_eq!(trend_tag(&record, &specs, 0), Trend::Flat);
    let record = record_with(vec![vec![3.0], vec![1.0]], &[]);
    assert_eq!(trend_tag(&record, &specs, 0), Trend::Falling);
}

#[test]
fn initial_review_keeps_only_retrieved_citations() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::DoctorReview,
        r#"{"reason": "elevated lactate", "evidence_ids": ["c3", "c7", "c99"]}"#,
    )]);
    let excerpts = sample_excerpts(&["c1", "c3", "c7"]);
    let record = PatientRecordText {
        text: "record".to_string(),
        z_values: BTreeMap::new(),
        top_features: vec![],
        static_summary: String::new(),
    };
    let mut led = ledger();
    let turn = doctor_initial_review(0, &record, &excerpts, &provider, &mut led).unwrap();
    assert_eq!(turn.cited_chunk_ids, vec!["c3", "c7"]);
    assert_eq!(turn.vote, Vote::None);
    assert_eq!(turn.round, 0);
    assert!(!turn.parse_failed);
    assert_eq!(led.totals().calls, 1);
}

#[test]
fn review_prompt_contains_every_retrieved_chunk_id() {
    let excerpts = sample_excerpts(&["c0", "c1", "c2", "c3", "c4"]);
    let record = PatientRecordText {
        text: "record body".to_string(),
        z_values: BTreeMap::new(),
        top_features: vec![],
        static_summary: String::new(),
    };
    let prompt = prompts::doctor_review_prompt(&record, &excerpts);
    for e in &excerpts {
        assert!(prompt.contains(&e.chunk_id));
        assert!(prompt.contains(&e.title));
    }
    assert!(prompt.contains("record body"));
}

#[test]
fn meta_synthesize_parses_risk_case_insensitively() {
    for (reply, expected) in [
        (r#"{"risk": "high", "narrative": "bad"}"#, Risk::High),
        (r#"{"risk": "LOW", "narrative": "fine"}"#, Risk::Low),
    ] {
        let provider =
            ScriptedProvider::from_rules(vec![tag_rule(crate::llm::RequestTag::MetaReport, reply)]);
        let reviews = vec![turn(0, 0, Vote::None, "review")];
        let mut led = ledger();
        let report =
            meta_synthesize(&reviews, "summary", &[0.4], &provider, &mut led).unwrap();
        assert_eq!(report.risk, expected);
        assert_eq!(report.round, 0);
        assert!(!report.parse_failed);
    }
}

#[test]
fn meta_synthesize_fallback_uses_mean_expert_logit() {
    // Two garbage replies: risk defaults to high iff mean logit >= 0.5.
    for (logits, expected) in [(vec![0.6, 0.7], Risk::High), (vec![0.2, 0.3], Risk::Low)] {
        let provider = ScriptedProvider::from_rules(vec![tag_rule(
            crate::llm::RequestTag::MetaReport,
            "no json here at all",
        )]);
        let reviews = vec![turn(0, 0, Vote::None, "review")];
        let mut led = ledger();
        let report =
            meta_synthesize(&reviews, "summary", &logits, &provider, &mut led).unwrap();
        assert_eq!(report.risk, expected);
        assert!(report.parse_failed);
        // One original call plus one retry.
        assert_eq!(led.totals().calls, 2);
    }
}

#[test]
fn statement_parses_disagreement() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::DoctorStatement,
        r#"{"vote": "disagree", "reason": "risk is understated", "evidence_ids": ["c1"]}"#,
    )]);
    let prev = turn(1, 0, Vote::None, "initial review");
    let report = sample_report(Risk::Low, "stable");
    let mut led = ledger();
    let s = doctor_statement(
        1,
        1,
        &prev,
        &report,
        &sample_excerpts(&["c1"]),
        &provider,
        &mut led,
    )
    .unwrap();
    assert_eq!(s.vote, Vote::Disagree);
    assert_eq!(s.reason, "risk is understated");
    assert_eq!(s.cited_chunk_ids, vec!["c1"]);
}

#[test]
fn statement_double_garbage_falls_back_to_agree() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::DoctorStatement,
        "completely unstructured",
    )]);
    let prev = turn(0, 0, Vote::None, "initial");
    let report = sample_report(Risk::High, "deteriorating");
    let mut led = ledger();
    let s =
        doctor_statement(0, 1, &prev, &report, &[], &provider, &mut led).unwrap();
    assert_eq!(s.vote, Vote::Agree);
    assert!(s.parse_failed);
    assert_eq!(led.totals().calls, 2);
}

#[test]
fn statement_agree_with_empty_reason_is_accepted() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::DoctorStatement,
        r#"{"vote": "AGREE"}"#,
    )]);
    let prev = turn(0, 0, Vote::None, "initial");
    let report = sample_report(Risk::High, "text");
    let mut led = ledger();
    let s = doctor_statement(0, 1, &prev, &report, &[], &provider, &mut led).unwrap();
    assert_eq!(s.vote, Vote::Agree);
    assert_eq!(s.reason, "");
    assert!(!s.parse_failed);
}

#[test]
fn statement_prompt_contains_prev_turn_and_report() {
    let prev = turn(2, 1, Vote::Disagree, "my earlier concern");
    let report = sample_report(Risk::Low, "current narrative");
    let prompt = prompts::doctor_statement_prompt(2, &prev, &report, &[]);
    assert!(prompt.contains("my earlier concern"));
    assert!(prompt.contains("current narrative"));
    assert!(prompt.contains("Round 2"));
}

#[test]
fn unanimous_agreement_stops_without_any_call() {
    // No meta_action rules exist, so a gateway call would error.
    let provider = ScriptedProvider::from_rules(vec![]);
    let statements =
        vec![turn(0, 1, Vote::Agree, ""), turn(1, 1, Vote::Agree, ""), turn(2, 1, Vote::Agree, "")];
    let mut led = ledger();
    let action = meta_action(&statements, &provider, &mut led).unwrap();
    assert_eq!(action, MetaAction::Stop);
    assert_eq!(led.totals().calls, 0);
}

#[test]
fn disagreement_asks_meta_and_parses_continue() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::MetaAction,
        r#"{"action": "continue", "rationale": "dissent has merit"}"#,
    )]);
    let statements = vec![
        turn(0, 1, Vote::Agree, ""),
        turn(1, 1, Vote::Disagree, "not convinced"),
        turn(2, 1, Vote::Agree, ""),
    ];
    let mut led = ledger();
    assert_eq!(meta_action(&statements, &provider, &mut led).unwrap(), MetaAction::Continue);
    assert_eq!(led.totals().calls, 1);
}

#[test]
fn unparseable_action_defaults_to_continue() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::MetaAction,
        "garbage",
    )]);
    let statements = vec![turn(0, 1, Vote::Disagree, "x")];
    let mut led = ledger();
    assert_eq!(meta_action(&statements, &provider, &mut led).unwrap(), MetaAction::Continue);
    assert_eq!(led.totals().calls, 2);
}

#[test]
fn revision_flips_risk_and_increments_round() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::MetaRevision,
        r#"{"risk": "low", "narrative": "revised downward"}"#,
    )]);
    let prev = sample_report(Risk::High, "was high");
    let statements = vec![turn(0, 1, Vote::Disagree, "overcalled")];
    let mut led = ledger();
    let revised = meta_revise(&prev, &statements, &[0.3], &provider, &mut led).unwrap();
    assert_eq!(revised.risk, Risk::Low);
    assert_eq!(revised.round, 1);
}

#[test]
fn revision_prompt_contains_prev_narrative_and_dissents() {
    let prev = sample_report(Risk::High, "original narrative text");
    let statements = vec![
        turn(0, 1, Vote::Disagree, "first objection"),
        turn(1, 1, Vote::Agree, ""),
        turn(2, 1, Vote::Disagree, "second objection"),
    ];
    let prompt = prompts::meta_revise_prompt(&prev, &statements);
    assert!(prompt.contains("original narrative text"));
    assert!(prompt.contains("first objection"));
    assert!(prompt.contains("second objection"));
    assert!(prompt.contains("2 dissenting"));
}

#[test]
fn llm_output_parses_plain_decimal() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::LlmOutputVariant,
        "0.87",
    )]);
    let report = sample_report(Risk::High, "n");
    let mut led = ledger();
    let p = llm_output_probability(&report, &[0.1], &provider, &mut led);
    assert_eq!(p, 0.87);
    assert_eq!(led.totals().calls, 1);
}

#[test]
fn llm_output_retries_out_of_range_then_succeeds() {
    let provider = ScriptedProvider::from_rules(vec![
        ordinal_rule(crate::llm::RequestTag::LlmOutputVariant, 0, "risk is 1.7"),
        ordinal_rule(crate::llm::RequestTag::LlmOutputVariant, 1, "0.3"),
    ]);
    let report = sample_report(Risk::High, "n");
    let mut led = ledger();
    let p = llm_output_probability(&report, &[0.9], &provider, &mut led);
    assert_eq!(p, 0.3);
    assert_eq!(led.totals().calls, 2);
}

#[test]
fn llm_output_double_failure_falls_back_to_mean_logit() {
    let provider = ScriptedProvider::from_rules(vec![tag_rule(
        crate::llm::RequestTag::LlmOutputVariant,
        "no numbers here",
    )]);
    let report = sample_report(Risk::Low, "n");
    let mut led = ledger();
    let p = llm_output_probability(&report, &[0.2, 0.4], &provider, &mut led);
    assert!((p - 0.3).abs() < 1e-12);
}

#[test]
fn json_extraction_handles_surrounding_prose_and_nesting() {
    let text = r#"Sure! Here is my answer:
    {"vote": "disagree", "reason": "see {braces} in \"quotes\"", "evidence_ids": []}
    Hope this helps."#;
    let parsed = parse::doctor_statement(text).unwrap();
    assert_eq!(parsed.vote, Vote::Disagree);
    assert!(parsed.reason.contains("braces"));

    assert!(parse::extract_json("no json").is_none());
    assert!(parse::extract_json("{broken: ").is_none());
}

#[test]
fn decimal_scan_takes_first_in_range_value() {
    assert_eq!(parse::first_decimal_in_unit_interval("1.7 or maybe 0.3"), Some(0.3));
    assert_eq!(parse::first_decimal_in_unit_interval("p = .5"), Some(0.5));
    assert_eq!(parse::first_decimal_in_unit_interval("answer: 1"), Some(1.0));
    assert_eq!(parse::first_decimal_in_unit_interval("42 and 3.5"), None);
    assert_eq!(parse::first_decimal_in_unit_interval("none"), None);
}
