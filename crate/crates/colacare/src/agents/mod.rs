//! Doctor and meta agent operations: prompt construction, gateway calls,
//! and structured reply parsing.
//!
//! Every reply is requested as a strict JSON envelope with a lenient
//! extraction fallback (first balanced JSON object in the text). Parse
//! failures follow fail-safe defaults: an unparseable doctor vote becomes
//! `agree` (terminates), an unparseable meta action becomes `continue`
//! (bounded by max rounds), and a report missing its risk falls back to the
//! mean expert probability. Each fallback is preceded by one reprompt with a
//! format reminder appended.

pub mod parse;
pub mod prompts;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attribution::{rank_by_importance, RankedFeature};
use crate::data::{FeatureSpec, PatientRecord};
use crate::error::Result;
use crate::expert::ExpertOutput;
use crate::llm::{ChatProvider, ChatRequest, CostLedger, RequestTag};
use crate::retrieval::{CorpusIndex, RetrievedEvidence};

/// Characters of chunk text quoted in prompts.
const EXCERPT_CHARS: usize = 500;

/// Trend slopes with magnitude below this count as flat.
const FLAT_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Agree,
    Disagree,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Risk {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaAction {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Rising,
    Falling,
    Flat,
}

impl Trend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Trend::Rising => "rising",
            Trend::Falling => "falling",
            Trend::Flat => "flat",
        }
    }
}

/// One ranked feature line of the textual record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopFeature {
    pub name: String,
    pub phi: f64,
    pub last_value: f64,
    pub unit: String,
    pub trend: Trend,
}

/// The textual patient record (the retrieval query and prompt core).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecordText {
    pub text: String,
    pub z_values: BTreeMap<String, f64>,
    pub top_features: Vec<TopFeature>,
    pub static_summary: String,
}

/// One doctor utterance (round 0 = initial review).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoctorTurn {
    pub role_id: usize,
    pub round: usize,
    pub vote: Vote,
    pub reason: String,
    pub cited_chunk_ids: Vec<String>,
    pub raw_text: String,
    pub parse_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub doctor: usize,
    pub chunk: String,
}

/// The meta agent's (possibly revised) report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub round: usize,
    pub risk: Risk,
    pub narrative: String,
    pub incorporated_evidence: Vec<EvidenceRef>,
    pub parse_failed: bool,
}

/// Evidence chunk as quoted in prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceExcerpt {
    pub chunk_id: String,
    pub title: String,
    pub excerpt: String,
}

/// Resolves retrieval hits into quotable excerpts (first 500 chars).
pub fn excerpts(index: &CorpusIndex, evidence: &RetrievedEvidence) -> Vec<EvidenceExcerpt> {
    evidence
        .hits
        .iter()
        .filter_map(|(chunk_id, _)| {
            index.chunk(chunk_id).map(|c| EvidenceExcerpt {
                chunk_id: c.chunk_id.clone(),
                title: c.doc_title.clone(),
                excerpt: c.text.chars().take(EXCERPT_CHARS).collect(),
            })
        })
        .collect()
}

/// Least-squares slope over a feature's observed raw-unit values; |slope|
/// below 0.01 per visit counts as flat.
pub fn trend_tag(record: &PatientRecord, specs: &[FeatureSpec], feature: usize) -> Trend {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (t, (row, mrow)) in record.series.iter().zip(&record.mask).enumerate() {
        if mrow[feature] {
            xs.push(t as f64);
            ys.push(specs[feature].denormalize(row[feature]));
        }
    }
    if xs.len() < 2 {
        return Trend::Flat;
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let var: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    if var == 0.0 {
        return Trend::Flat;
    }
    let slope = cov / var;
    if slope.abs() < FLAT_SLOPE {
        Trend::Flat
    } else if slope > 0.0 {
        Trend::Rising
    } else {
        Trend::Falling
    }
}

/// Builds the textual record from expert outputs, ranked importances (from
/// the first output), and static info. Pure function of its inputs.
pub fn build_patient_record(
    record: &PatientRecord,
    specs: &[FeatureSpec],
    expert_outputs: &[(String, ExpertOutput)],
    k_top: usize,
) -> Result<PatientRecordText> {
    if expert_outputs.is_empty() {
        return Err(crate::error::Error::parameter(
            "expert_outputs",
            "need at least one expert output",
        ));
    }
    let z_values: BTreeMap<String, f64> =
        expert_outputs.iter().map(|(n, o)| (n.clone(), o.logit)).collect();

    let primary = &expert_outputs[0];
    let ranked: Vec<RankedFeature> = if primary.1.importances.is_empty() {
        Vec::new()
    } else {
        rank_by_importance(&primary.1.importances, specs, record, k_top)?
    };
    let top_features: Vec<TopFeature> = ranked
        .iter()
        .map(|r| TopFeature {
            name: r.name.clone(),
            phi: r.phi,
            last_value: r.last_value,
            unit: specs[r.index].unit.clone(),
            trend: trend_tag(record, specs, r.index),
        })
        .collect();

    let age = record.static_text("age");
    let sex = record.static_text("sex");
    let condition = record.static_text("condition");
    let mut static_summary = format!("Patient {}:", record.patient_id);
    if !age.is_empty() || !sex.is_empty() {
        static_summary.push_str(&format!(" {age}-year-old {sex} patient."));
    }
    if !condition.is_empty() {
        static_summary.push(' ');
        static_summary.push_str(&condition);
    }

    let text = prompts::render_record(
        &record.patient_id,
        &static_summary,
        &z_values,
        &top_features,
    );
    Ok(PatientRecordText { text, z_values, top_features, static_summary })
}

fn call(
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
    role: &str,
    request: &ChatRequest,
) -> Result<crate::llm::ChatResponse> {
    let response = provider.complete(request)?;
    ledger.record(role, request, &response);
    Ok(response)
}

/// Round-0 review: the doctor reads its own record and retrieved evidence.
pub fn doctor_initial_review(
    role_id: usize,
    record_text: &PatientRecordText,
    evidence: &[EvidenceExcerpt],
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
) -> Result<DoctorTurn> {
    let request = ChatRequest::new(
        RequestTag::DoctorReview,
        prompts::doctor_system(role_id),
        prompts::doctor_review_prompt(record_text, evidence),
    );
    let response = call(provider, ledger, &format!("doctor_{role_id}"), &request)?;
    let parsed = parse::doctor_review(&response.text);
    let retrieved: Vec<&str> = evidence.iter().map(|e| e.chunk_id.as_str()).collect();
    let cited = filter_cited(parsed.evidence_ids, &retrieved, role_id);
    Ok(DoctorTurn {
        role_id,
        round: 0,
        vote: Vote::None,
        reason: parsed.reason,
        cited_chunk_ids: cited,
        raw_text: response.text,
        parse_failed: parsed.parse_failed,
    })
}

fn filter_cited(ids: Vec<String>, retrieved: &[&str], role_id: usize) -> Vec<String> {
    let mut out = Vec::new();
    for id in ids {
        if retrieved.contains(&id.as_str()) {
            if !out.contains(&id) {
                out.push(id);
            }
        } else {
            log::warn!("doctor {role_id} cited unretrieved chunk '{id}'; dropped");
        }
    }
    out
}

/// Synthesized (round-0) report from all initial reviews.
pub fn meta_synthesize(
    reviews: &[DoctorTurn],
    static_summary: &str,
    expert_logits: &[f64],
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
) -> Result<MetaReport> {
    let request = ChatRequest::new(
        RequestTag::MetaReport,
        prompts::meta_system(),
        prompts::meta_synthesize_prompt(reviews, static_summary),
    );
    meta_report_exchange(request, 0, expert_logits, provider, ledger)
}

/// Shared request/retry/fallback path for synthesize and revise.
fn meta_report_exchange(
    request: ChatRequest,
    round: usize,
    expert_logits: &[f64],
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
) -> Result<MetaReport> {
    let response = call(provider, ledger, "meta", &request)?;
    if let Some(report) = parse::meta_report(&response.text, round) {
        return Ok(report);
    }
    let mut retry = request.clone();
    retry.user_prompt.push_str(prompts::REPORT_FORMAT_REMINDER);
    let response = call(provider, ledger, "meta", &retry)?;
    if let Some(report) = parse::meta_report(&response.text, round) {
        return Ok(report);
    }
    let mean = if expert_logits.is_empty() {
        0.5
    } else {
        expert_logits.iter().sum::<f64>() / expert_logits.len() as f64
    };
    let risk = if mean >= 0.5 { Risk::High } else { Risk::Low };
    log::warn!("meta report unparseable after retry; risk defaults to {risk:?}");
    Ok(MetaReport {
        round,
        risk,
        narrative: response.text,
        incorporated_evidence: Vec::new(),
        parse_failed: true,
    })
}

/// Round ≥ 1 statement: agree or disagree with the current report.
pub fn doctor_statement(
    role_id: usize,
    round: usize,
    own_prev_turn: &DoctorTurn,
    current_report: &MetaReport,
    evidence: &[EvidenceExcerpt],
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
) -> Result<DoctorTurn> {
    let request = ChatRequest::new(
        RequestTag::DoctorStatement,
        prompts::doctor_system(role_id),
        prompts::doctor_statement_prompt(round, own_prev_turn, current_report, evidence),
    );
    let role = format!("doctor_{role_id}");
    let retrieved: Vec<&str> = evidence.iter().map(|e| e.chunk_id.as_str()).collect();

    let response = call(provider, ledger, &role, &request)?;
    if let Some(parsed) = parse::doctor_statement(&response.text) {
        return Ok(DoctorTurn {
            role_id,
            round,
            vote: parsed.vote,
            reason: parsed.reason,
            cited_chunk_ids: filter_cited(parsed.evidence_ids, &retrieved, role_id),
            raw_text: response.text,
            parse_failed: false,
        });
    }
    let mut retry = request.clone();
    retry.user_prompt.push_str(prompts::STATEMENT_FORMAT_REMINDER);
    let response = call(provider, ledger, &role, &retry)?;
    if let Some(parsed) = parse::doctor_statement(&response.text) {
        return Ok(DoctorTurn {
            role_id,
            round,
            vote: parsed.vote,
            reason: parsed.reason,
            cited_chunk_ids: filter_cited(parsed.evidence_ids, &retrieved, role_id),
            raw_text: response.text,
            parse_failed: false,
        });
    }
    log::warn!("doctor {role_id} statement unparseable after retry; treating as agree");
    Ok(DoctorTurn {
        role_id,
        round,
        vote: Vote::Agree,
        reason: String::new(),
        cited_chunk_ids: Vec::new(),
        raw_text: response.text,
        parse_failed: true,
    })
}

/// Decides whether another round is needed. Unanimous agreement stops
/// without a gateway call; otherwise the meta agent is asked and an
/// unparseable reply (after one retry) defaults to continue.
pub fn meta_action(
    statements: &[DoctorTurn],
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
) -> Result<MetaAction> {
    if statements.iter().all(|s| s.vote == Vote::Agree) {
        return Ok(MetaAction::Stop);
    }
    let request = ChatRequest::new(
        RequestTag::MetaAction,
        prompts::meta_system(),
        prompts::meta_action_prompt(statements),
    );
    let response = call(provider, ledger, "meta", &request)?;
    if let Some(action) = parse::meta_action(&response.text) {
        return Ok(action);
    }
    let mut retry = request.clone();
    retry.user_prompt.push_str(prompts::ACTION_FORMAT_REMINDER);
    let response = call(provider, ledger, "meta", &retry)?;
    if let Some(action) = parse::meta_action(&response.text) {
        return Ok(action);
    }
    log::warn!("meta action unparseable after retry; continuing discussion");
    Ok(MetaAction::Continue)
}

/// Revises the report in light of the statements; round increments by one.
pub fn meta_revise(
    prev_report: &MetaReport,
    statements: &[DoctorTurn],
    expert_logits: &[f64],
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
) -> Result<MetaReport> {
    let request = ChatRequest::new(
        RequestTag::MetaRevision,
        prompts::meta_system(),
        prompts::meta_revise_prompt(prev_report, statements),
    );
    meta_report_exchange(request, prev_report.round + 1, expert_logits, provider, ledger)
}

/// Asks the model for a numeric probability based on the final report; the
/// first decimal in [0,1] wins, with one retry and a mean-probability
/// fallback (total function).
pub fn llm_output_probability(
    final_report: &MetaReport,
    expert_logits: &[f64],
    provider: &dyn ChatProvider,
    ledger: &mut CostLedger,
) -> f64 {
    let request = ChatRequest::new(
        RequestTag::LlmOutputVariant,
        prompts::meta_system(),
        prompts::llm_output_prompt(final_report),
    );
    for attempt in 0..2 {
        let mut req = request.clone();
        if attempt == 1 {
            req.user_prompt.push_str(prompts::NUMBER_FORMAT_REMINDER);
        }
        match call(provider, ledger, "meta", &req) {
            Ok(response) => {
                if let Some(p) = parse::first_decimal_in_unit_interval(&response.text) {
                    return p;
                }
            }
            Err(e) => log::warn!("llm-output call failed: {e}"),
        }
    }
    if expert_logits.is_empty() {
        0.5
    } else {
        expert_logits.iter().sum::<f64>() / expert_logits.len() as f64
    }
}

#[cfg(test)]
mod tests;
