//! Run configuration: one JSON file describing every pipeline stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use colacare::consult::{AttributionConfig, ConsultationConfig};
use colacare::expert::{Architecture, ExpertConfig};
use colacare::fusion::FusionConfig;
use colacare::llm::Pricing;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split_ratios: SplitRatios,
    pub experts: Vec<ExpertEntry>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub consultation: ConsultationSettings,
    #[serde(default)]
    pub attribution: AttributionConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub pricing: Pricing,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    /// Path to an existing dataset file; mutually exclusive with `synthetic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    #[serde(default = "default_features")]
    pub n_features: usize,
    #[serde(default = "default_visits")]
    pub max_visits: usize,
}

fn default_features() -> usize {
    10
}

fn default_visits() -> usize {
    8
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, val: 0.15, test: 0.05 }
    }
}

/// Expert entry in the config; unset knobs fall back to the library
/// defaults, and an unset seed derives from the global seed and the index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertEntry {
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ExpertEntry {
    pub fn to_config(&self, global_seed: u64, index: usize) -> ExpertConfig {
        let d = ExpertConfig::default();
        ExpertConfig {
            architecture: self.architecture,
            hidden_dim: self.hidden_dim.unwrap_or(d.hidden_dim),
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: self.seed.unwrap_or(global_seed.wrapping_add(index as u64)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Corpus JSONL; defaults to the synthetic corpus the synth stage wrote.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub chunk_size_chars: usize,
    pub overlap_chars: usize,
    pub embed_dim: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { path: None, chunk_size_chars: 400, overlap_chars: 100, embed_dim: 128 }
    }
}

/// Consultation knobs minus the seed (which is global).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsultationSettings {
    pub n_doctors: usize,
    pub max_rounds: usize,
    pub k_retrieval: usize,
    pub k_top_features: usize,
    #[serde(default)]
    pub reretrieve_per_round: bool,
    /// Run patients concurrently (deterministic either way).
    #[serde(default = "default_true")]
    pub parallel_patients: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ConsultationSettings {
    fn default() -> Self {
        let d = ConsultationConfig::default();
        ConsultationSettings {
            n_doctors: d.n_doctors,
            max_rounds: d.max_rounds,
            k_retrieval: d.k_retrieval,
            k_top_features: d.k_top_features,
            reretrieve_per_round: d.reretrieve_per_round,
            parallel_patients: true,
        }
    }
}

impl ConsultationSettings {
    pub fn to_config(&self, attribution: AttributionConfig, seed: u64) -> ConsultationConfig {
        ConsultationConfig {
            n_doctors: self.n_doctors,
            max_rounds: self.max_rounds,
            k_retrieval: self.k_retrieval,
            k_top_features: self.k_top_features,
            reretrieve_per_round: self.reretrieve_per_round,
            attribution,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Replay canned responses from a script file.
    Scripted { script: PathBuf },
    /// OpenAI-compatible endpoint configured via COLACARE_LLM_* env vars.
    Http,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub bootstrap_resamples: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { bootstrap_resamples: 100 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("config file {} is not valid", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experts.is_empty() || self.experts.len() > 3 {
            bail!("between 1 and 3 expert configs are supported, got {}", self.experts.len());
        }
        if self.consultation.n_doctors != self.experts.len() {
            bail!(
                "consultation.n_doctors is {} but {} expert configs were given",
                self.consultation.n_doctors,
                self.experts.len()
            );
        }
        match (&self.dataset.path, &self.dataset.synthetic) {
            (None, None) => bail!("dataset needs either a path or synthetic parameters"),
            (Some(_), Some(_)) => bail!("dataset path and synthetic parameters are exclusive"),
            _ => {}
        }
        Ok(())
    }

    /// Expert display names: explicit name, else the architecture, deduped
    /// with a numeric suffix.
    pub fn expert_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for entry in &self.experts {
            let base = entry
                .name
                .clone()
                .unwrap_or_else(|| entry.architecture.as_str().to_string());
            let mut candidate = base.clone();
            let mut k = 2;
            while names.contains(&candidate) {
                candidate = format!("{base}_{k}");
                k += 1;
            }
            names.push(candidate);
        }
        names
    }
}
