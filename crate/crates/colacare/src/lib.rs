//! ColaCare: collaborative clinical risk prediction over structured EHR data.
//!
//! Domain-specific expert models encode a patient's multivariate time series
//! into hidden states and mortality-risk probabilities. Each expert backs an
//! LLM "doctor" agent that reviews the patient with retrieved medical
//! reference material; a meta agent chairs a multi-round consultation and
//! maintains a synthesized report. The final report embedding is fused with
//! the expert hidden states by a small MLP for the final prediction.
//!
//! Modules follow the pipeline order:
//!
//! - [`data`] — dataset schema, synthetic cohort generation, imputation,
//!   normalization, stratified splits
//! - [`nn`] — tape-based reverse-mode autodiff and a decoupled-weight-decay
//!   optimizer for the small networks used here
//! - [`expert`] — three recurrent expert architectures with full training
//! - [`attribution`] — Shapley feature importances (exact and sampled)
//! - [`retrieval`] — corpus chunking, hashed text embeddings, cosine top-K
//! - [`llm`] — chat-completion providers (HTTP and scripted) plus token and
//!   cost accounting
//! - [`agents`] — prompt construction and reply parsing for both agent roles
//! - [`consult`] — the per-patient consultation protocol and cohort stats
//! - [`fusion`] — report embedding + expert hidden state fusion network
//! - [`metrics`] — AUROC / AUPRC / min(+P, Se) and bootstrap summaries
//!
//! The `parallel` feature (on by default) runs the data-parallel inner loops
//! (coalition sweeps, bootstrap resamples, corpus scans, per-patient
//! consultations) on rayon. Without it everything falls back to sequential
//! code paths with identical results; `*_serial` entry points expose the
//! sequential kernels for benchmarking either way.

pub mod agents;
pub mod attribution;
pub mod consult;
pub mod data;
pub mod error;
pub mod expert;
pub mod fusion;
pub mod llm;
pub mod metrics;
pub mod nn;
pub(crate) mod par;
pub mod retrieval;

pub use error::{Error, Result};
