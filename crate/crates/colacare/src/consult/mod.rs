//! The per-patient collaborative consultation protocol and its transcript.
//!
//! Sequence per patient: every expert infers and gets attributed; every
//! doctor builds its record text, retrieves evidence, and writes an initial
//! review; the meta agent synthesizes a preliminary report; then up to
//! `max_rounds` rounds of doctor statements follow. Unanimous agreement
//! stops the consultation (without asking the meta agent); otherwise the
//! meta agent decides, and on "continue" revises the report for the next
//! round. Hitting the round cap coerces the effective action to stop.
//!
//! Gateway failures mid-run do not lose work: the transcript is returned
//! with `status = aborted` at the last completed step.

pub mod stats;

pub use stats::{compute_stats, run_cohort, ConsultationStats, DoctorVoteStats};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{
    self, DoctorTurn, EvidenceExcerpt, MetaAction, MetaReport, PatientRecordText,
};
use crate::attribution::{
    shapley_exact, shapley_sampled, AttributionResult, MAX_EXACT_FEATURES,
};
use crate::data::{FeatureSpec, PatientRecord};
use crate::error::{Error, Result};
use crate::expert::TrainedExpert;
use crate::llm::{ChatProvider, CostLedger, Pricing};
use crate::retrieval::{fnv1a, retrieve, CorpusIndex, RetrievedEvidence, TextEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    /// Exact enumeration is used up to this many features, sampling beyond.
    pub max_exact_features: usize,
    /// Permutation walks for the sampled method.
    pub n_permutations: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig { max_exact_features: MAX_EXACT_FEATURES, n_permutations: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultationConfig {
    pub n_doctors: usize,
    pub max_rounds: usize,
    pub k_retrieval: usize,
    pub k_top_features: usize,
    /// Re-retrieve evidence each round with the current report as the query
    /// (round-0 evidence is reused otherwise).
    pub reretrieve_per_round: bool,
    pub attribution: AttributionConfig,
    pub seed: u64,
}

impl Default for ConsultationConfig {
    fn default() -> Self {
        ConsultationConfig {
            n_doctors: 3,
            max_rounds: 3,
            k_retrieval: 16,
            k_top_features: 10,
            reretrieve_per_round: false,
            attribution: AttributionConfig::default(),
            seed: 0,
        }
    }
}

impl ConsultationConfig {
    pub fn validate(&self, n_experts: usize) -> Result<()> {
        if self.n_doctors == 0 {
            return Err(Error::Config("n_doctors must be at least 1".to_string()));
        }
        if self.n_doctors != n_experts {
            return Err(Error::Config(format!(
                "n_doctors is {} but {} trained experts were supplied",
                self.n_doctors, n_experts
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".to_string()));
        }
        if self.k_retrieval == 0 || self.k_top_features == 0 {
            return Err(Error::Config("k_retrieval and k_top_features must be positive".to_string()));
        }
        Ok(())
    }
}

/// Round-0 record for one doctor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoctorRound0 {
    pub expert_name: String,
    pub record: PatientRecordText,
    pub attribution: AttributionResult,
    pub evidence: RetrievedEvidence,
    pub review: DoctorTurn,
}

/// One statement round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub statements: Vec<DoctorTurn>,
    /// Effective action taken after this round (capped continues are stops).
    pub action: MetaAction,
    /// Whether the meta agent was actually asked (false on unanimity).
    pub action_called: bool,
    /// True when the meta agent wanted to continue but max_rounds was hit.
    pub capped: bool,
    /// The revised report when the consultation continued.
    pub report: Option<MetaReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TranscriptStatus {
    Completed,
    Aborted { stage: String, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultationTranscript {
    pub patient_id: String,
    pub doctors: Vec<DoctorRound0>,
    pub initial_report: Option<MetaReport>,
    pub rounds: Vec<RoundLog>,
    pub rounds_used: usize,
    pub consensus: bool,
    pub final_report: Option<MetaReport>,
    pub ledger: CostLedger,
    pub status: TranscriptStatus,
}

impl ConsultationTranscript {
    pub fn completed(&self) -> bool {
        self.status == TranscriptStatus::Completed
    }
}

/// Closed-form gateway call count for a clean-parse transcript:
/// n doctors (reviews) + 1 (synthesis) + per round [n statements
/// + 1 action if not unanimous + 1 revision if continued].
pub fn expected_gateway_calls(t: &ConsultationTranscript) -> u64 {
    let n = t.doctors.len() as u64;
    let mut calls = n + 1;
    for round in &t.rounds {
        calls += round.statements.len() as u64;
        calls += round.action_called as u64;
        calls += round.report.is_some() as u64;
    }
    calls
}

/// Runs the full consultation for one (preprocessed) patient.
///
/// `precomputed_attributions` (one per expert, in expert order) skips the
/// in-run Shapley computation when an explain stage already produced them.
#[allow(clippy::too_many_arguments)]
pub fn run_consultation(
    config: &ConsultationConfig,
    patient: &PatientRecord,
    specs: &[FeatureSpec],
    experts: &[TrainedExpert],
    index: &CorpusIndex,
    embedder: &dyn TextEmbedder,
    provider: &dyn ChatProvider,
    pricing: Pricing,
    precomputed_attributions: Option<&[AttributionResult]>,
) -> ConsultationTranscript {
    let mut transcript = ConsultationTranscript {
        patient_id: patient.patient_id.clone(),
        doctors: Vec::new(),
        initial_report: None,
        rounds: Vec::new(),
        rounds_used: 0,
        consensus: false,
        final_report: None,
        ledger: CostLedger::new(pricing),
        status: TranscriptStatus::Completed,
    };
    let mut stage = "infer";
    let outcome = drive(
        config,
        patient,
        specs,
        experts,
        index,
        embedder,
        provider,
        precomputed_attributions,
        &mut transcript,
        &mut stage,
    );
    if let Err(e) = outcome {
        transcript.status =
            TranscriptStatus::Aborted { stage: stage.to_string(), error: e.to_string() };
    }
    transcript
}

/// Computes the attribution for one (patient, expert) pair with the
/// method picked by feature count and a per-pair derived seed.
pub fn attribute_expert(
    config: &AttributionConfig,
    seed: u64,
    patient: &PatientRecord,
    expert: &TrainedExpert,
    expert_index: usize,
) -> Result<AttributionResult> {
    let value_fn = |series: &[Vec<f64>]| expert.probability(series, &patient.mask);
    let f = patient.n_features();
    if f <= config.max_exact_features.min(MAX_EXACT_FEATURES) {
        shapley_exact(value_fn, &patient.series)
    } else {
        let pair_seed =
            seed ^ fnv1a(patient.patient_id.as_bytes()) ^ (expert_index as u64).wrapping_mul(0x9e37);
        shapley_sampled(value_fn, &patient.series, config.n_permutations, pair_seed)
    }
}

#[allow(clippy::too_many_arguments)]
fn drive(
    config: &ConsultationConfig,
    patient: &PatientRecord,
    specs: &[FeatureSpec],
    experts: &[TrainedExpert],
    index: &CorpusIndex,
    embedder: &dyn TextEmbedder,
    provider: &dyn ChatProvider,
    precomputed_attributions: Option<&[AttributionResult]>,
    t: &mut ConsultationTranscript,
    stage: &mut &'static str,
) -> Result<()> {
    config.validate(experts.len())?;

    *stage = "infer";
    let mut outputs = Vec::with_capacity(experts.len());
    for expert in experts {
        outputs.push(expert.infer(patient)?);
    }
    let expert_logits: Vec<f64> = outputs.iter().map(|o| o.logit).collect();

    *stage = "attribution";
    let attributions: Vec<AttributionResult> = match precomputed_attributions {
        Some(results) => {
            if results.len() != experts.len() {
                return Err(Error::Config(format!(
                    "{} precomputed attributions for {} experts",
                    results.len(),
                    experts.len()
                )));
            }
            results.to_vec()
        }
        None => experts
            .iter()
            .enumerate()
            .map(|(i, e)| attribute_expert(&config.attribution, config.seed, patient, e, i))
            .collect::<Result<_>>()?,
    };

    // Round 0: per-doctor record, retrieval, and initial review.
    let mut round0_evidence: Vec<Vec<EvidenceExcerpt>> = Vec::with_capacity(experts.len());
    let mut reviews: Vec<DoctorTurn> = Vec::with_capacity(experts.len());
    for (d, expert) in experts.iter().enumerate() {
        *stage = "build_record";
        let mut output = outputs[d].clone();
        output.importances = attributions[d].phi.clone();
        let record_text = agents::build_patient_record(
            patient,
            specs,
            &[(expert.name.clone(), output)],
            config.k_top_features,
        )?;

        *stage = "retrieve";
        let evidence = retrieve(index, &record_text.text, config.k_retrieval, embedder)?;
        let excerpts = agents::excerpts(index, &evidence);

        *stage = "doctor_review";
        let review = agents::doctor_initial_review(
            d,
            &record_text,
            &excerpts,
            provider,
            &mut t.ledger,
        )?;
        reviews.push(review.clone());
        t.doctors.push(DoctorRound0 {
            expert_name: expert.name.clone(),
            record: record_text,
            attribution: attributions[d].clone(),
            evidence,
            review,
        });
        round0_evidence.push(excerpts);
    }

    *stage = "meta_synthesize";
    let static_summary = t.doctors[0].record.static_summary.clone();
    let mut report = agents::meta_synthesize(
        &reviews,
        &static_summary,
        &expert_logits,
        provider,
        &mut t.ledger,
    )?;
    t.initial_report = Some(report.clone());

    let mut prev_turns: Vec<DoctorTurn> = reviews;
    for round in 1..=config.max_rounds {
        *stage = "doctor_statement";
        let evidence_per_doctor: Vec<Vec<EvidenceExcerpt>> = if config.reretrieve_per_round {
            *stage = "retrieve";
            let fresh: Result<Vec<_>> = (0..experts.len())
                .map(|_| {
                    let ev = retrieve(index, &report.narrative, config.k_retrieval, embedder)?;
                    Ok(agents::excerpts(index, &ev))
                })
                .collect();
            fresh?
        } else {
            round0_evidence.clone()
        };

        *stage = "doctor_statement";
        let mut statements = Vec::with_capacity(experts.len());
        for d in 0..experts.len() {
            let statement = agents::doctor_statement(
                d,
                round,
                &prev_turns[d],
                &report,
                &evidence_per_doctor[d],
                provider,
                &mut t.ledger,
            )?;
            statements.push(statement);
        }
        let unanimous = statements.iter().all(|s| s.vote == agents::Vote::Agree);

        *stage = "meta_action";
        let action = agents::meta_action(&statements, provider, &mut t.ledger)?;
        t.rounds_used = round;

        if unanimous {
            t.consensus = true;
            t.rounds.push(RoundLog {
                round,
                statements,
                action: MetaAction::Stop,
                action_called: false,
                capped: false,
                report: None,
            });
            break;
        }
        if action == MetaAction::Stop {
            t.rounds.push(RoundLog {
                round,
                statements,
                action: MetaAction::Stop,
                action_called: true,
                capped: false,
                report: None,
            });
            break;
        }
        if round == config.max_rounds {
            // The meta agent wanted another round but the cap applies.
            t.rounds.push(RoundLog {
                round,
                statements,
                action: MetaAction::Stop,
                action_called: true,
                capped: true,
                report: None,
            });
            break;
        }

        *stage = "meta_revise";
        let revised =
            agents::meta_revise(&report, &statements, &expert_logits, provider, &mut t.ledger)?;
        prev_turns = statements.clone();
        t.rounds.push(RoundLog {
            round,
            statements,
            action: MetaAction::Continue,
            action_called: true,
            capped: false,
            report: Some(revised.clone()),
        });
        report = revised;
    }

    t.final_report = Some(report);
    Ok(())
}

/// Writes one transcript to `<dir>/<patient-id>.json`.
pub fn save_transcript(dir: &Path, t: &ConsultationTranscript) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", t.patient_id));
    std::fs::write(&path, serde_json::to_string_pretty(t)?)?;
    Ok(path)
}

pub fn load_transcript(path: &Path) -> Result<ConsultationTranscript> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
