//! Cohort-level consultation runs and aggregate statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_consultation, ConsultationConfig, ConsultationTranscript};
use crate::attribution::AttributionResult;
use crate::data::{FeatureSpec, PatientRecord};
use crate::error::Result;
use crate::expert::TrainedExpert;
use crate::llm::{ProviderFactory, Pricing, Usage};
use crate::par;
use crate::retrieval::{CorpusIndex, TextEmbedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoctorVoteStats {
    pub doctor: usize,
    /// Percentage of agreeing votes across all rounds and patients, ×100
    /// and rounded to two decimals; agree + disagree always sums to 100.
    pub agree_pct: f64,
    pub disagree_pct: f64,
    pub votes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTokenStats {
    pub calls: u64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
}

/// Aggregate consultation statistics (the agreement-analysis table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultationStats {
    pub dataset: String,
    pub n_patients: usize,
    pub n_completed: usize,
    pub n_aborted: usize,
    pub avg_rounds: f64,
    pub consensus_rate: f64,
    pub doctors: Vec<DoctorVoteStats>,
    pub tokens: BTreeMap<String, RoleTokenStats>,
    pub total_cost: f64,
}

/// Runs consultations for every patient (in parallel when enabled) and
/// aggregates statistics with a deterministic fold in patient-id order.
/// Each patient gets a fresh provider session, so transcripts do not depend
/// on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_cohort(
    config: &ConsultationConfig,
    patients: &[PatientRecord],
    specs: &[FeatureSpec],
    experts: &[TrainedExpert],
    index: &CorpusIndex,
    embedder: &dyn TextEmbedder,
    provider_factory: &dyn ProviderFactory,
    pricing: Pricing,
    dataset_name: &str,
    precomputed: Option<&BTreeMap<String, Vec<AttributionResult>>>,
    parallel: bool,
) -> Result<(Vec<ConsultationTranscript>, ConsultationStats)> {
    config.validate(experts.len())?;
    let transcripts: Vec<ConsultationTranscript> = par::map_slice(patients, parallel, |patient| {
        let provider = provider_factory.provider();
        let pre = precomputed.and_then(|m| m.get(&patient.patient_id)).map(Vec::as_slice);
        run_consultation(
            config,
            patient,
            specs,
            experts,
            index,
            embedder,
            provider.as_ref(),
            pricing,
            pre,
        )
    });
    let stats = compute_stats(&transcripts, config.n_doctors, dataset_name);
    Ok((transcripts, stats))
}

/// Folds transcripts (visited in patient-id order) into cohort statistics.
/// Aborted transcripts are excluded from the averages and counted apart.
pub fn compute_stats(
    transcripts: &[ConsultationTranscript],
    n_doctors: usize,
    dataset_name: &str,
) -> ConsultationStats {
    let mut order: Vec<&ConsultationTranscript> = transcripts.iter().collect();
    order.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));

    let mut n_completed = 0usize;
    let mut n_aborted = 0usize;
    let mut rounds_sum = 0u64;
    let mut consensus_count = 0u64;
    let mut agree = vec![0u64; n_doctors];
    let mut total = vec![0u64; n_doctors];
    let mut role_usage: BTreeMap<String, Usage> = BTreeMap::new();
    let mut total_cost = 0.0;

    for t in order {
        if !t.completed() {
            n_aborted += 1;
            continue;
        }
        n_completed += 1;
        rounds_sum += t.rounds_used as u64;
        consensus_count += t.consensus as u64;
        for round in &t.rounds {
            for s in &round.statements {
                if s.role_id < n_doctors {
                    total[s.role_id] += 1;
                    if s.vote == crate::agents::Vote::Agree {
                        agree[s.role_id] += 1;
                    }
                }
            }
        }
        for (role, usage) in &t.ledger.per_role {
            let acc = role_usage.entry(role.clone()).or_default();
            acc.calls += usage.calls;
            acc.input_tokens += usage.input_tokens;
            acc.output_tokens += usage.output_tokens;
        }
        total_cost += t.ledger.cost();
    }

    let doctors = (0..n_doctors)
        .map(|d| {
            let pct = if total[d] == 0 {
                100.0
            } else {
                round2(agree[d] as f64 / total[d] as f64 * 100.0)
            };
            DoctorVoteStats {
                doctor: d,
                agree_pct: pct,
                disagree_pct: round2(100.0 - pct),
                votes: total[d],
            }
        })
        .collect();

    let tokens = role_usage
        .into_iter()
        .map(|(role, u)| {
            (
                role,
                RoleTokenStats {
                    calls: u.calls,
                    avg_input_tokens: u.avg_input(),
                    avg_output_tokens: u.avg_output(),
                },
            )
        })
        .collect();

    ConsultationStats {
        dataset: dataset_name.to_string(),
        n_patients: transcripts.len(),
        n_completed,
        n_aborted,
        avg_rounds: if n_completed == 0 { 0.0 } else { rounds_sum as f64 / n_completed as f64 },
        consensus_rate: if n_completed == 0 {
            0.0
        } else {
            consensus_count as f64 / n_completed as f64
        },
        doctors,
        tokens,
        total_cost,
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Writes the stats file (the Table-3-style columns).
pub fn save_stats(path: &Path, stats: &ConsultationStats) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(stats)?)?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<ConsultationStats> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
