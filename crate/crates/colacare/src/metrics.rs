//! Binary-classification metrics and bootstrap reporting.
//!
//! Three metrics, all "higher is better": AUROC (Mann–Whitney formulation),
//! AUPRC (average precision, no interpolation), and min(+P, Se) — the maximum
//! over decision thresholds of the minimum of precision and sensitivity.
//! Bootstrap summaries resample the test set with replacement and report
//! mean ± std per metric, scaled by 100 for readability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

fn check_inputs(labels: &[u8], scores: &[f64]) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "labels ({}) and scores ({}) differ in length",
            labels.len(),
            scores.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve: P(score+ > score-) + 0.5 P(tie).
///
/// Computed via the rank-sum identity with average ranks for ties, which
/// equals the pairwise definition exactly.
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(labels, scores)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "auroc requires both classes present".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    // Average ranks over tied groups (ranks are 1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1) + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Average precision: sum over descending-score thresholds of
/// (recall step × precision), with tied scores grouped into one threshold.
pub fn auprc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (n_pos, _) = check_inputs(labels, scores)?;
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(
            "auprc requires at least one positive".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// max over thresholds τ ∈ {distinct scores} of min(precision(τ), recall(τ)),
/// where a patient is predicted positive when score ≥ τ.
pub fn min_p_se(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (n_pos, _) = check_inputs(labels, scores)?;
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(
            "min(+P, Se) requires at least one positive".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut best = 0.0f64;
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            predicted += 1;
            if labels[idx] == 1 {
                tp += 1;
            }
        }
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = tp as f64 / n_pos as f64;
        best = best.max(precision.min(recall));
        i = j;
    }
    Ok(best)
}

/// Mean and standard deviation of one metric over bootstrap resamples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    /// Table cell in the reporting convention: values ×100, two decimals.
    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean * 100.0, self.std * 100.0)
    }

    /// The same ×100 scaling as [`MeanStd::cell`], kept numeric.
    pub fn scaled(&self) -> MeanStd {
        MeanStd { mean: self.mean * 100.0, std: self.std * 100.0 }
    }
}

/// Per-metric bootstrap distribution summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub auroc: MeanStd,
    pub auprc: MeanStd,
    pub min_p_se: MeanStd,
    pub n_resamples: usize,
    pub n_skipped: usize,
    pub seed: u64,
}

/// Point estimates of the three metrics on the full sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricResult {
    pub auroc: f64,
    pub auprc: f64,
    pub min_p_se: f64,
    pub n_samples: usize,
    pub n_positive: usize,
}

/// Computes all three metrics at once.
pub fn evaluate_all(labels: &[u8], scores: &[f64]) -> Result<MetricResult> {
    let (n_pos, _) = check_inputs(labels, scores)?;
    Ok(MetricResult {
        auroc: auroc(labels, scores)?,
        auprc: auprc(labels, scores)?,
        min_p_se: min_p_se(labels, scores)?,
        n_samples: labels.len(),
        n_positive: n_pos,
    })
}

/// `B` resamples with replacement; resamples lacking a class are redrawn up
/// to 10 times, then skipped and counted. Resample `i` draws from its own
/// generator seeded with `seed ^ i`, so the summary is independent of
/// evaluation order.
pub fn bootstrap(labels: &[u8], scores: &[f64], b: usize, seed: u64) -> Result<BootstrapSummary> {
    bootstrap_impl(labels, scores, b, seed, true)
}

/// Sequential variant of [`bootstrap`] (same result; used by the benches).
pub fn bootstrap_serial(
    labels: &[u8],
    scores: &[f64],
    b: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    bootstrap_impl(labels, scores, b, seed, false)
}

fn bootstrap_impl(
    labels: &[u8],
    scores: &[f64],
    b: usize,
    seed: u64,
    parallel: bool,
) -> Result<BootstrapSummary> {
    if b < 2 {
        return Err(Error::parameter("B", "bootstrap requires B >= 2"));
    }
    let (n_pos, n_neg) = check_inputs(labels, scores)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "bootstrap requires both classes present".to_string(),
        ));
    }
    let n = labels.len();

    let resamples: Vec<Option<[f64; 3]>> = par::map_range(b, parallel, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        for _attempt in 0..10 {
            let mut ls = Vec::with_capacity(n);
            let mut ss = Vec::with_capacity(n);
            for _ in 0..n {
                let idx = rng.gen_range(0..n);
                ls.push(labels[idx]);
                ss.push(scores[idx]);
            }
            let pos = ls.iter().filter(|&&y| y == 1).count();
            if pos == 0 || pos == n {
                continue;
            }
            let a = auroc(&ls, &ss).expect("both classes present");
            let p = auprc(&ls, &ss).expect("positives present");
            let m = min_p_se(&ls, &ss).expect("positives present");
            return Some([a, p, m]);
        }
        None
    });

    let used: Vec<[f64; 3]> = resamples.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::UndefinedMetric(
            "all bootstrap resamples were single-class".to_string(),
        ));
    }
    let column = |k: usize| used.iter().map(|r| r[k]).collect::<Vec<_>>();
    Ok(BootstrapSummary {
        auroc: MeanStd::from_samples(&column(0)),
        auprc: MeanStd::from_samples(&column(1)),
        min_p_se: MeanStd::from_samples(&column(2)),
        n_resamples: used.len(),
        n_skipped: b - used.len(),
        seed,
    })
}
