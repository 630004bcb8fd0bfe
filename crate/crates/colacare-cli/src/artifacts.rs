//! Run-directory layout: the integration contract between subcommands.
//!
//! ```text
//! <run_dir>/
//!   dataset.json          cohort (written by synth, or external via config)
//!   corpus.jsonl          reference corpus (synth)
//!   split.json            stratified patient-id split (train-experts)
//!   specs.json            fitted feature statistics (train-experts)
//!   checkpoints/          expert + fusion parameters and sidecars
//!   attributions.json     per-patient per-expert Shapley values (explain)
//!   index/index.json      retrieval index (build-index)
//!   transcripts/          one JSON per patient (consult)
//!   stats.json            consultation statistics (consult / stats)
//!   results/results.json  bootstrap metric table (evaluate)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

use colacare::attribution::AttributionResult;
use colacare::data::{DatasetSplit, FeatureSpec, PatientRecord};
use colacare::expert::TrainedExpert;

use crate::config::RunConfig;

pub struct Paths {
    pub run_dir: PathBuf,
}

impl Paths {
    pub fn new(config: &RunConfig) -> Self {
        Paths { run_dir: config.run_dir.clone() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.run_dir.join("dataset.json")
    }

    pub fn corpus(&self) -> PathBuf {
        self.run_dir.join("corpus.jsonl")
    }

    pub fn split(&self) -> PathBuf {
        self.run_dir.join("split.json")
    }

    pub fn specs(&self) -> PathBuf {
        self.run_dir.join("specs.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.run_dir.join("checkpoints")
    }

    pub fn expert_list(&self) -> PathBuf {
        self.checkpoints().join("experts.json")
    }

    pub fn attributions(&self) -> PathBuf {
        self.run_dir.join("attributions.json")
    }

    pub fn index(&self) -> PathBuf {
        self.run_dir.join("index").join("index.json")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.run_dir.join("transcripts")
    }

    pub fn stats(&self) -> PathBuf {
        self.run_dir.join("stats.json")
    }

    pub fn results(&self) -> PathBuf {
        self.run_dir.join("results").join("results.json")
    }
}

/// Missing-artifact error pointing at the producing command.
fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(anyhow!(
            "missing {}; run `colacare {produced_by}` first",
            path.display()
        ))
    }
}

/// The dataset file: the synth output, or the external path from the config.
pub fn dataset_path(config: &RunConfig, paths: &Paths) -> PathBuf {
    config.dataset.path.clone().unwrap_or_else(|| paths.dataset())
}

pub fn load_dataset(
    config: &RunConfig,
    paths: &Paths,
) -> Result<(Vec<FeatureSpec>, Vec<PatientRecord>)> {
    let path = dataset_path(config, paths);
    require(&path, "synth")?;
    Ok(colacare::data::io::load_dataset(&path)?)
}

pub fn load_split(paths: &Paths) -> Result<DatasetSplit> {
    require(&paths.split(), "train-experts")?;
    Ok(serde_json::from_str(&std::fs::read_to_string(paths.split())?)?)
}

pub fn load_fitted_specs(paths: &Paths) -> Result<Vec<FeatureSpec>> {
    require(&paths.specs(), "train-experts")?;
    Ok(serde_json::from_str(&std::fs::read_to_string(paths.specs())?)?)
}

pub fn load_experts(paths: &Paths) -> Result<Vec<TrainedExpert>> {
    require(&paths.expert_list(), "train-experts")?;
    let names: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(paths.expert_list())?)?;
    names
        .iter()
        .map(|name| {
            TrainedExpert::load(&paths.checkpoints(), name)
                .with_context(|| format!("loading expert checkpoint '{name}'"))
        })
        .collect()
}

pub type AttributionMap = BTreeMap<String, Vec<AttributionResult>>;

pub fn load_attributions(paths: &Paths) -> Result<AttributionMap> {
    require(&paths.attributions(), "explain")?;
    Ok(serde_json::from_str(&std::fs::read_to_string(paths.attributions())?)?)
}

pub fn load_index(paths: &Paths) -> Result<colacare::retrieval::CorpusIndex> {
    require(&paths.index(), "build-index")?;
    Ok(colacare::retrieval::CorpusIndex::load(&paths.index())?)
}

pub fn load_transcripts(paths: &Paths) -> Result<Vec<colacare::consult::ConsultationTranscript>> {
    require(&paths.transcripts(), "consult")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(paths.transcripts())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            colacare::consult::load_transcript(p)
                .with_context(|| format!("loading transcript {}", p.display()))
        })
        .collect()
}

pub fn load_fusion(paths: &Paths) -> Result<colacare::fusion::FusionModel> {
    require(&paths.checkpoints().join("fusion.schema.json"), "train-fusion")?;
    Ok(colacare::fusion::FusionModel::load(&paths.checkpoints())?)
}

/// Deterministic pretty-JSON writer used by every artifact.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
