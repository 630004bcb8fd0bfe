//! Prompt templates. Each builder is a pure function of its arguments, so
//! identical inputs yield byte-identical prompts.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{DoctorTurn, EvidenceExcerpt, MetaReport, Risk, TopFeature, Vote};

pub(crate) const REPORT_FORMAT_REMINDER: &str = "\n\nFormat reminder: reply with a single JSON \
object {\"risk\": \"high\"|\"low\", \"narrative\": \"...\", \"evidence\": [{\"doctor\": 0, \
\"chunk\": \"id\"}]} and nothing else.";

pub(crate) const STATEMENT_FORMAT_REMINDER: &str = "\n\nFormat reminder: reply with a single \
JSON object {\"vote\": \"agree\"|\"disagree\", \"reason\": \"...\", \"evidence_ids\": \
[\"id\"]} and nothing else.";

pub(crate) const ACTION_FORMAT_REMINDER: &str = "\n\nFormat reminder: reply with a single JSON \
object {\"action\": \"continue\"|\"stop\", \"rationale\": \"...\"} and nothing else.";

pub(crate) const NUMBER_FORMAT_REMINDER: &str =
    "\n\nFormat reminder: reply with one decimal number between 0 and 1 and nothing else.";

pub fn doctor_system(role_id: usize) -> String {
    format!(
        "You are Doctor {role_id}, an experienced ICU physician taking part in a \
         multidisciplinary consultation about one patient. You are assisted by a domain-specific \
         risk model whose prediction and feature importances are part of the patient record. \
         Ground every claim in the patient record or the retrieved reference material, and cite \
         document ids when you rely on them. Always answer with a single JSON object in the \
         requested format."
    )
}

pub fn meta_system() -> String {
    "You are the chief physician chairing a multidisciplinary consultation. You weigh the \
     reviews and statements of the participating doctors, synthesize them into a single \
     risk-assessment report, and decide whether further discussion is needed. Always answer \
     with a single JSON object in the requested format unless asked for a bare number."
        .to_string()
}

/// The textual patient record: static summary, expert risk predictions, and
/// the ranked feature-importance table.
pub fn render_record(
    patient_id: &str,
    static_summary: &str,
    z_values: &BTreeMap<String, f64>,
    top_features: &[TopFeature],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Patient ID: {patient_id}");
    if !static_summary.is_empty() {
        let _ = writeln!(out, "Background: {static_summary}");
    }
    let _ = writeln!(out, "Expert model risk assessment:");
    for (name, z) in z_values {
        let _ = writeln!(out, "- {name}: predicted mortality risk {z:.2}");
    }
    if !top_features.is_empty() {
        let _ = writeln!(out, "Most influential features (Shapley importance):");
        for (rank, f) in top_features.iter().enumerate() {
            let unit = if f.unit.is_empty() { String::new() } else { format!(" {}", f.unit) };
            let _ = writeln!(
                out,
                "{}. {}: importance {:+.4}, last value {:.2}{unit}, trend {}",
                rank + 1,
                f.name,
                f.phi,
                f.last_value,
                f.trend.as_str()
            );
        }
    }
    out
}

fn render_evidence(evidence: &[EvidenceExcerpt]) -> String {
    let mut out = String::new();
    for e in evidence {
        let _ = writeln!(out, "- [{}] {}: {}", e.chunk_id, e.title, e.excerpt);
    }
    out
}

pub fn doctor_review_prompt(
    record: &super::PatientRecordText,
    evidence: &[EvidenceExcerpt],
) -> String {
    format!(
        "[Patient Record]\n{}\n[Retrieved Reference Material]\n{}\n[Task]\nReview this \
         patient's condition. Assess the mortality risk, explain which findings drive your \
         assessment, and cite the reference documents (by id) that support it.\n\n[Output \
         Format]\nA single JSON object: {{\"reason\": \"your clinical review\", \
         \"evidence_ids\": [\"doc id\", ...]}}",
        record.text,
        render_evidence(evidence)
    )
}

fn render_reviews(reviews: &[DoctorTurn]) -> String {
    let mut out = String::new();
    for r in reviews {
        let cites = if r.cited_chunk_ids.is_empty() {
            String::new()
        } else {
            format!(" (cites: {})", r.cited_chunk_ids.join(", "))
        };
        let _ = writeln!(out, "Doctor {}{}: {}", r.role_id, cites, r.reason);
    }
    out
}

pub fn meta_synthesize_prompt(reviews: &[DoctorTurn], static_summary: &str) -> String {
    format!(
        "[Patient]\n{static_summary}\n\n[Doctor Reviews]\n{}\n[Task]\nSynthesize these \
         reviews into one report. First state the patient's mortality risk as high or low, \
         then write a narrative that selects and incorporates the pertinent comments and \
         supporting evidence from the reviews.\n\n[Output Format]\nA single JSON object: \
         {{\"risk\": \"high\"|\"low\", \"narrative\": \"...\", \"evidence\": [{{\"doctor\": \
         0, \"chunk\": \"doc id\"}}]}}",
        render_reviews(reviews)
    )
}

fn risk_str(risk: Risk) -> &'static str {
    match risk {
        Risk::High => "high",
        Risk::Low => "low",
    }
}

pub fn doctor_statement_prompt(
    round: usize,
    own_prev_turn: &DoctorTurn,
    current_report: &MetaReport,
    evidence: &[EvidenceExcerpt],
) -> String {
    format!(
        "[Round {round}]\n\n[Current Report]\nRisk: {}\n{}\n\n[Your Previous Position]\n{}\n\n\
         [Retrieved Reference Material]\n{}\n[Task]\nState whether you agree or disagree with \
         the current report. If you disagree, give a detailed rationale and support it with \
         relevant documents (by id); on agreement a reason is optional.\n\n[Output Format]\nA \
         single JSON object: {{\"vote\": \"agree\"|\"disagree\", \"reason\": \"...\", \
         \"evidence_ids\": [\"doc id\", ...]}}",
        risk_str(current_report.risk),
        current_report.narrative,
        own_prev_turn.reason,
        render_evidence(evidence)
    )
}

fn render_statements(statements: &[DoctorTurn]) -> String {
    let mut out = String::new();
    for s in statements {
        let vote = match s.vote {
            Vote::Agree => "agrees",
            Vote::Disagree => "disagrees",
            Vote::None => "gave no vote",
        };
        let cites = if s.cited_chunk_ids.is_empty() {
            String::new()
        } else {
            format!(" (cites: {})", s.cited_chunk_ids.join(", "))
        };
        let reason = if s.reason.is_empty() { String::new() } else { format!(": {}", s.reason) };
        let _ = writeln!(out, "Doctor {} {vote}{cites}{reason}", s.role_id);
    }
    out
}

pub fn meta_action_prompt(statements: &[DoctorTurn]) -> String {
    format!(
        "[Doctor Statements]\n{}\n[Task]\nThe doctors above did not reach unanimous \
         agreement. Examine the dissenting statements and their evidence. If any opposing \
         statement has merit, continue the discussion; otherwise stop.\n\n[Output Format]\nA \
         single JSON object: {{\"action\": \"continue\"|\"stop\", \"rationale\": \"...\"}}",
        render_statements(statements)
    )
}

pub fn meta_revise_prompt(prev_report: &MetaReport, statements: &[DoctorTurn]) -> String {
    let dissent = statements.iter().filter(|s| s.vote == Vote::Disagree).count();
    format!(
        "[Current Report]\nRisk: {}\n{}\n\n[Doctor Statements]\n{}\n[Task]\nRevise the report \
         in light of the statements above ({dissent} dissenting). Reassess the mortality risk, \
         address the dissenting rationales explicitly, and keep whatever remains valid.\n\n\
         [Output Format]\nA single JSON object: {{\"risk\": \"high\"|\"low\", \"narrative\": \
         \"...\", \"evidence\": [{{\"doctor\": 0, \"chunk\": \"doc id\"}}]}}",
        risk_str(prev_report.risk),
        prev_report.narrative,
        render_statements(statements)
    )
}

pub fn llm_output_prompt(final_report: &MetaReport) -> String {
    format!(
        "[Final Consultation Report]\nRisk: {}\n{}\n\n[Task]\nBased on this report, estimate \
         the patient's in-hospital mortality probability.\n\n[Output Format]\nOne decimal \
         number between 0 and 1 (closer to 1 means more likely to die). No other text.",
        risk_str(final_report.risk),
        final_report.narrative
    )
}
