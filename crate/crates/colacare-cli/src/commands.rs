//! Subcommand implementations over the run-directory contract.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use colacare::agents;
use colacare::consult::{
    self, attribute_expert, compute_stats, run_cohort, ConsultationStats,
};
use colacare::data::{self, PatientRecord};
use colacare::expert::{train_expert, TrainedExpert};
use colacare::fusion::{embed_report, train_fusion, FusionSample, FusionSchema};
use colacare::llm::{
    ChatProvider, CostLedger, HttpFactory, HttpProvider, ProviderFactory, Script,
    ScriptedFactory, ScriptedProvider,
};
use colacare::metrics::{self, BootstrapSummary};
use colacare::retrieval::{ingest_corpus, HashEmbedder, TextEmbedder};

use crate::artifacts::{self, AttributionMap, Paths};
use crate::config::{ProviderConfig, RunConfig};

pub fn synth(config: &RunConfig) -> Result<()> {
    let paths = Paths::new(config);
    let spec = config
        .dataset
        .synthetic
        .as_ref()
        .ok_or_else(|| anyhow!("config has no synthetic dataset parameters"))?;
    std::fs::create_dir_all(&paths.run_dir)?;

    let (specs, records) = data::synth::generate_synthetic(
        spec.n_patients,
        spec.n_features,
        spec.max_visits,
        config.seed,
    )?;
    data::io::save_dataset(&paths.dataset(), &specs, &records)?;
    let positives = records.iter().filter(|r| r.label == 1).count();
    println!(
        "wrote {} ({} patients, {} features, {} positive)",
        paths.dataset().display(),
        records.len(),
        specs.len(),
        positives
    );

    if config.corpus.path.is_none() {
        let docs = data::synth::guideline_docs();
        let mut out = std::fs::File::create(paths.corpus())?;
        for doc in &docs {
            writeln!(out, "{}", serde_json::to_string(doc)?)?;
        }
        println!("wrote {} ({} documents)", paths.corpus().display(), docs.len());
    }
    Ok(())
}

pub fn train_experts(config: &RunConfig) -> Result<()> {
    let paths = Paths::new(config);
    let (mut specs, records) = artifacts::load_dataset(config, &paths)?;

    let ratios = config.split_ratios;
    let split = data::split(&records, (ratios.train, ratios.val, ratios.test), config.seed)?;
    artifacts::write_json(&paths.split(), &split)?;

    data::fit_specs(&mut specs, &records, &split.train)?;
    artifacts::write_json(&paths.specs(), &specs)?;

    let prepped = data::preprocess_all(&records, &specs)?;
    let names = config.expert_names();
    let jobs: Vec<(String, colacare::expert::ExpertConfig)> = config
        .experts
        .iter()
        .enumerate()
        .map(|(i, entry)| (names[i].clone(), entry.to_config(config.seed, i)))
        .collect();

    // Experts train on disjoint parameter stores, so they may run in
    // parallel; each training loop itself is single-threaded.
    let trained: Vec<Result<TrainedExpert>> = jobs
        .par_iter()
        .map(|(name, expert_config)| {
            train_expert(name, expert_config, &specs, &prepped, &split)
                .with_context(|| format!("training expert '{name}'"))
        })
        .collect();

    std::fs::create_dir_all(paths.checkpoints())?;
    for result in trained {
        let expert = result?;
        let best = expert
            .log
            .iter()
            .map(|e| e.val_auprc)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "trained {} ({} epochs, best val AUPRC {best:.4})",
            expert.name,
            expert.log.len()
        );
        expert.save(&paths.checkpoints())?;
    }
    artifacts::write_json(&paths.expert_list(), &names)?;
    Ok(())
}

pub fn explain(config: &RunConfig) -> Result<()> {
    let paths = Paths::new(config);
    let (_, records) = artifacts::load_dataset(config, &paths)?;
    let specs = artifacts::load_fitted_specs(&paths)?;
    let experts = artifacts::load_experts(&paths)?;
    let prepped = data::preprocess_all(&records, &specs)?;

    let attr_config = config.attribution;
    let per_patient: Vec<Result<(String, Vec<colacare::attribution::AttributionResult>)>> =
        prepped
            .par_iter()
            .map(|patient| {
                let results = experts
                    .iter()
                    .enumerate()
                    .map(|(i, expert)| {
                        attribute_expert(&attr_config, config.seed, patient, expert, i)
                    })
                    .collect::<colacare::Result<Vec<_>>>()
                    .with_context(|| format!("attributing patient '{}'", patient.patient_id))?;
                Ok((patient.patient_id.clone(), results))
            })
            .collect();

    let mut map: AttributionMap = BTreeMap::new();
    for entry in per_patient {
        let (id, results) = entry?;
        map.insert(id, results);
    }
    artifacts::write_json(&paths.attributions(), &map)?;
    println!(
        "wrote {} ({} patients x {} experts)",
        paths.attributions().display(),
        map.len(),
        experts.len()
    );
    Ok(())
}

pub fn build_index(config: &RunConfig) -> Result<()> {
    let paths = Paths::new(config);
    let corpus_path = config.corpus.path.clone().unwrap_or_else(|| paths.corpus());
    if !corpus_path.exists() {
        bail!("missing {}; run `colacare synth` first", corpus_path.display());
    }
    let embedder = HashEmbedder::new(config.corpus.embed_dim)?;
    let index = ingest_corpus(
        &corpus_path,
        config.corpus.chunk_size_chars,
        config.corpus.overlap_chars,
        &embedder,
    )?;
    if let Some(parent) = paths.index().parent() {
        std::fs::create_dir_all(parent)?;
    }
    index.save(&paths.index())?;
    println!("wrote {} ({} chunks, d={})", paths.index().display(), index.chunks.len(), index.d);
    Ok(())
}

fn provider_factory(config: &RunConfig) -> Result<Box<dyn ProviderFactory>> {
    match &config.provider {
        ProviderConfig::Scripted { script } => {
            let script = Script::load(script)?;
            Ok(Box::new(ScriptedFactory(Arc::new(script))))
        }
        ProviderConfig::Http => Ok(Box::new(HttpFactory(Arc::new(HttpProvider::from_env()?)))),
    }
}

/// A single long-lived provider session (used by the evaluate stage, which
/// iterates patients in sorted order).
fn single_provider(config: &RunConfig) -> Result<Box<dyn ChatProvider>> {
    match &config.provider {
        ProviderConfig::Scripted { script } => {
            let script = Script::load(script)?;
            Ok(Box::new(ScriptedProvider::new(Arc::new(script))))
        }
        ProviderConfig::Http => Ok(Box::new(HttpProvider::from_env()?)),
    }
}

fn dataset_name(config: &RunConfig) -> String {
    match &config.dataset.path {
        Some(p) => p
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "dataset".to_string()),
        None => "synthetic".to_string(),
    }
}

pub fn consult(config: &RunConfig, parallel_override: Option<usize>) -> Result<()> {
    let paths = Paths::new(config);
    let (_, records) = artifacts::load_dataset(config, &paths)?;
    let specs = artifacts::load_fitted_specs(&paths)?;
    let experts = artifacts::load_experts(&paths)?;
    let attributions = artifacts::load_attributions(&paths)?;
    let index = artifacts::load_index(&paths)?;
    let prepped = data::preprocess_all(&records, &specs)?;
    let embedder = HashEmbedder::new(index.d)?;
    let factory = provider_factory(config)?;

    let consult_config =
        config.consultation.to_config(config.attribution, config.seed);
    let parallel = config.consultation.parallel_patients;

    let run = || {
        run_cohort(
            &consult_config,
            &prepped,
            &specs,
            &experts,
            &index,
            &embedder,
            factory.as_ref(),
            config.pricing,
            &dataset_name(config),
            Some(&attributions),
            parallel,
        )
    };
    let (transcripts, stats) = match parallel_override {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(run)?,
        _ => run()?,
    };

    let dir = paths.transcripts();
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    for t in &transcripts {
        consult::save_transcript(&dir, t)?;
    }
    consult::stats::save_stats(&paths.stats(), &stats)?;
    println!(
        "wrote {} transcripts; avg rounds {:.2}, consensus rate {:.2}, {} aborted",
        transcripts.len(),
        stats.avg_rounds,
        stats.consensus_rate,
        stats.n_aborted
    );
    Ok(())
}

/// Builds fusion samples for the given patient ids: expert hidden states in
/// checkpoint order plus the embedded final report. Patients without a
/// completed transcript are skipped.
fn fusion_samples(
    ids: &[String],
    prepped_by_id: &HashMap<&str, &PatientRecord>,
    transcripts_by_id: &HashMap<&str, &colacare::consult::ConsultationTranscript>,
    experts: &[TrainedExpert],
    embedder: &dyn TextEmbedder,
) -> Result<Vec<FusionSample>> {
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for id in ids {
        let Some(record) = prepped_by_id.get(id.as_str()) else {
            bail!("split references unknown patient '{id}'");
        };
        let report = transcripts_by_id
            .get(id.as_str())
            .filter(|t| t.completed())
            .and_then(|t| t.final_report.as_ref());
        let Some(report) = report else {
            skipped += 1;
            continue;
        };
        let expert_hiddens = experts
            .iter()
            .map(|e| e.infer(record).map(|o| o.hidden))
            .collect::<colacare::Result<Vec<_>>>()?;
        samples.push(FusionSample {
            expert_hiddens,
            report_embedding: embed_report(&report.narrative, embedder)?,
            label: record.label,
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} patients without a completed consultation");
    }
    Ok(samples)
}

pub fn train_fusion_cmd(config: &RunConfig) -> Result<()> {
    let paths = Paths::new(config);
    let (_, records) = artifacts::load_dataset(config, &paths)?;
    let specs = artifacts::load_fitted_specs(&paths)?;
    let split = artifacts::load_split(&paths)?;
    let experts = artifacts::load_experts(&paths)?;
    let transcripts = artifacts::load_transcripts(&paths)?;
    let prepped = data::preprocess_all(&records, &specs)?;
    let embedder = HashEmbedder::new(config.corpus.embed_dim)?;

    let prepped_by_id: HashMap<&str, &PatientRecord> =
        prepped.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let transcripts_by_id: HashMap<&str, &colacare::consult::ConsultationTranscript> =
        transcripts.iter().map(|t| (t.patient_id.as_str(), t)).collect();

    let train_samples = fusion_samples(
        &split.train,
        &prepped_by_id,
        &transcripts_by_id,
        &experts,
        &embedder,
    )?;
    let val_samples =
        fusion_samples(&split.val, &prepped_by_id, &transcripts_by_id, &experts, &embedder)?;

    let mut samples = train_samples;
    let train_idx: Vec<usize> = (0..samples.len()).collect();
    let val_start = samples.len();
    samples.extend(val_samples);
    let val_idx: Vec<usize> = (val_start..samples.len()).collect();

    let schema = FusionSchema {
        expert_names: experts.iter().map(|e| e.name.clone()).collect(),
        expert_dims: experts.iter().map(|e| e.hidden_dim()).collect(),
        report_dim: config.corpus.embed_dim,
    };
    let mut fusion_config = config.fusion.clone();
    fusion_config.seed = config.seed;
    let model = train_fusion(&fusion_config, &schema, &samples, &train_idx, &val_idx)?;
    let best = model.log.iter().map(|e| e.val_auprc).fold(f64::NEG_INFINITY, f64::max);
    model.save(&paths.checkpoints())?;
    println!(
        "trained fusion network ({} epochs, best val AUPRC {best:.4}); wrote {}",
        model.log.len(),
        paths.checkpoints().join("fusion.params.json").display()
    );
    Ok(())
}

type ResultsTable = BTreeMap<String, BTreeMap<String, colacare::metrics::MeanStd>>;

fn summary_row(summary: &BootstrapSummary) -> BTreeMap<String, colacare::metrics::MeanStd> {
    let mut row = BTreeMap::new();
    row.insert("auprc".to_string(), summary.auprc.scaled());
    row.insert("auroc".to_string(), summary.auroc.scaled());
    row.insert("min_p_se".to_string(), summary.min_p_se.scaled());
    row
}

pub fn evaluate(config: &RunConfig) -> Result<()> {
    let paths = Paths::new(config);
    let (_, records) = artifacts::load_dataset(config, &paths)?;
    let specs = artifacts::load_fitted_specs(&paths)?;
    let split = artifacts::load_split(&paths)?;
    let experts = artifacts::load_experts(&paths)?;
    let transcripts = artifacts::load_transcripts(&paths)?;
    let fusion = artifacts::load_fusion(&paths)?;
    let prepped = data::preprocess_all(&records, &specs)?;
    let embedder = HashEmbedder::new(config.corpus.embed_dim)?;

    let prepped_by_id: HashMap<&str, &PatientRecord> =
        prepped.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let transcripts_by_id: HashMap<&str, &colacare::consult::ConsultationTranscript> =
        transcripts.iter().map(|t| (t.patient_id.as_str(), t)).collect();

    // Model selection: best expert by validation AUPRC.
    let val_records: Vec<&PatientRecord> = split
        .val
        .iter()
        .map(|id| prepped_by_id.get(id.as_str()).copied().context("unknown val patient"))
        .collect::<Result<_>>()?;
    let val_labels: Vec<u8> = val_records.iter().map(|r| r.label).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, expert) in experts.iter().enumerate() {
        let scores: Vec<f64> = val_records
            .iter()
            .map(|r| expert.infer(r).map(|o| o.logit))
            .collect::<colacare::Result<_>>()?;
        let auprc = metrics::auprc(&val_labels, &scores)?;
        println!("expert {} val AUPRC {auprc:.4}", expert.name);
        if best.is_none_or(|(_, b)| auprc > b) {
            best = Some((i, auprc));
        }
    }
    let (best_idx, _) = best.context("no experts")?;
    let best_expert = &experts[best_idx];
    println!("best expert: {}", best_expert.name);

    // Test patients with a completed consultation, in id order.
    let mut test_ids: Vec<&String> = split
        .test
        .iter()
        .filter(|id| {
            transcripts_by_id
                .get(id.as_str())
                .is_some_and(|t| t.completed() && t.final_report.is_some())
        })
        .collect();
    test_ids.sort();
    if test_ids.len() < split.test.len() {
        log::warn!(
            "evaluating {} of {} test patients (others lack completed consultations)",
            test_ids.len(),
            split.test.len()
        );
    }
    let labels: Vec<u8> = test_ids.iter().map(|id| prepped_by_id[id.as_str()].label).collect();

    // Method 1: best single expert.
    let expert_scores: Vec<f64> = test_ids
        .iter()
        .map(|id| best_expert.infer(prepped_by_id[id.as_str()]).map(|o| o.logit))
        .collect::<colacare::Result<_>>()?;

    // Method 2: instruct the model to read the final report and answer with
    // a probability (one provider session, patient order fixed).
    let provider = single_provider(config)?;
    let mut llm_ledger = CostLedger::new(config.pricing);
    let mut llm_scores = Vec::with_capacity(test_ids.len());
    for id in &test_ids {
        let t = transcripts_by_id[id.as_str()];
        let report = t.final_report.as_ref().expect("filtered above");
        let logits: Vec<f64> = experts
            .iter()
            .map(|e| e.infer(prepped_by_id[id.as_str()]).map(|o| o.logit))
            .collect::<colacare::Result<_>>()?;
        llm_scores.push(agents::llm_output_probability(
            report,
            &logits,
            provider.as_ref(),
            &mut llm_ledger,
        ));
    }

    // Method 3: fusion network over expert hiddens + report embedding.
    let fusion_scores: Vec<f64> = test_ids
        .iter()
        .map(|id| {
            let record = prepped_by_id[id.as_str()];
            let t = transcripts_by_id[id.as_str()];
            let named: Vec<(String, Vec<f64>)> = experts
                .iter()
                .map(|e| e.infer(record).map(|o| (e.name.clone(), o.hidden)))
                .collect::<colacare::Result<_>>()?;
            let report_embedding = embed_report(
                &t.final_report.as_ref().expect("filtered above").narrative,
                &embedder,
            )?;
            anyhow::Ok(fusion.predict_named(&named, report_embedding, record.label)?)
        })
        .collect::<Result<_>>()?;

    let b = config.evaluation.bootstrap_resamples;
    let mut table: ResultsTable = BTreeMap::new();
    for (method, scores) in [
        ("best_expert", &expert_scores),
        ("colacare_llm_output", &llm_scores),
        ("colacare", &fusion_scores),
    ] {
        let summary = metrics::bootstrap(&labels, scores, b, config.seed)?;
        println!(
            "{method}: AUPRC {} | AUROC {} | min(+P,Se) {}",
            summary.auprc.cell(),
            summary.auroc.cell(),
            summary.min_p_se.cell()
        );
        table.insert(method.to_string(), summary_row(&summary));
    }
    artifacts::write_json(&paths.results(), &table)?;
    println!("wrote {}", paths.results().display());
    Ok(())
}

pub fn stats(config: &RunConfig) -> Result<()> {
    let paths = Paths::new(config);
    let transcripts = artifacts::load_transcripts(&paths)?;
    let stats: ConsultationStats =
        compute_stats(&transcripts, config.consultation.n_doctors, &dataset_name(config));

    println!(
        "dataset {}: {} patients ({} completed, {} aborted)",
        stats.dataset, stats.n_patients, stats.n_completed, stats.n_aborted
    );
    println!(
        "avg rounds {:.2} | consensus rate {:.2} | total cost {:.4}",
        stats.avg_rounds, stats.consensus_rate, stats.total_cost
    );
    println!("doctor  agree%  disagree%  votes");
    for d in &stats.doctors {
        println!("{:>6}  {:>6.2}  {:>9.2}  {:>5}", d.doctor, d.agree_pct, d.disagree_pct, d.votes);
    }
    println!("role            calls  avg in tokens  avg out tokens");
    for (role, u) in &stats.tokens {
        println!(
            "{role:<15} {:>5}  {:>13.1}  {:>14.1}",
            u.calls, u.avg_input_tokens, u.avg_output_tokens
        );
    }
    consult::stats::save_stats(&paths.stats(), &stats)?;
    Ok(())
}
