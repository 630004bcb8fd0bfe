//! Shapley feature importances for expert predictions.
//!
//! The value function evaluates the model with the features outside a
//! coalition ablated to the normalized train-split baseline (zero) across
//! all time steps, on the post-sigmoid probability scale. Exact enumeration
//! covers F ≤ 14; antithetic permutation sampling covers the rest. Coalition
//! evaluations run in parallel; the combination into φ is a sequential fold,
//! so results are identical with or without rayon.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSpec, PatientRecord};
use crate::error::{Error, Result};
use crate::par;

/// Largest F accepted by [`shapley_exact`] (2^F coalition evaluations).
pub const MAX_EXACT_FEATURES: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    /// Per-feature Shapley value on the probability scale.
    pub phi: Vec<f64>,
    /// Model output with every feature ablated to baseline.
    pub baseline_value: f64,
    /// Model output on the unmodified input.
    pub actual_value: f64,
    pub method: AttributionMethod,
    /// Number of permutations used (0 for the exact method).
    pub n_permutations: usize,
    pub seed: u64,
}

/// Series with the features outside `coalition` (bitmask) zeroed everywhere.
fn ablate(series: &[Vec<f64>], coalition: u32) -> Vec<Vec<f64>> {
    series
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| if coalition & (1 << j) != 0 { v } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Exact Shapley values by full coalition enumeration (F ≤ 14).
pub fn shapley_exact<F>(value_fn: F, series: &[Vec<f64>]) -> Result<AttributionResult>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    shapley_exact_impl(value_fn, series, true)
}

/// Sequential variant of [`shapley_exact`] (same result; used by benches).
pub fn shapley_exact_serial<F>(value_fn: F, series: &[Vec<f64>]) -> Result<AttributionResult>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    shapley_exact_impl(value_fn, series, false)
}

fn shapley_exact_impl<F>(
    value_fn: F,
    series: &[Vec<f64>],
    parallel: bool,
) -> Result<AttributionResult>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    let f = series.first().map_or(0, Vec::len);
    if f == 0 {
        return Err(Error::parameter("series", "series must have at least one feature"));
    }
    if f > MAX_EXACT_FEATURES {
        return Err(Error::parameter(
            "series",
            format!(
                "exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {f}; \
                 use shapley_sampled"
            ),
        ));
    }
    let n_coalitions = 1usize << f;
    let values: Vec<f64> = par::map_range(n_coalitions, parallel, |mask| {
        value_fn(&ablate(series, mask as u32))
    });

    // w[s] = s!(F−1−s)!/F!
    let mut factorial = vec![1.0f64; f + 1];
    for i in 1..=f {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight: Vec<f64> =
        (0..f).map(|s| factorial[s] * factorial[f - 1 - s] / factorial[f]).collect();

    let mut phi = vec![0.0f64; f];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..n_coalitions {
            if mask & bit != 0 {
                continue;
            }
            let s = (mask as u32).count_ones() as usize;
            *phi_i += weight[s] * (values[mask | bit] - values[mask]);
        }
    }

    Ok(AttributionResult {
        phi,
        baseline_value: values[0],
        actual_value: values[n_coalitions - 1],
        method: AttributionMethod::Exact,
        n_permutations: 0,
        seed: 0,
    })
}

/// Antithetic permutation sampling: each drawn permutation is paired with
/// its reverse. `n_permutations` counts total walks (odd values round up to
/// the next even number). Deterministic for a fixed seed.
pub fn shapley_sampled<F>(
    value_fn: F,
    series: &[Vec<f64>],
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionResult>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    let f = series.first().map_or(0, Vec::len);
    if f == 0 {
        return Err(Error::parameter("series", "series must have at least one feature"));
    }
    if f > 32 {
        return Err(Error::parameter("series", "at most 32 features supported"));
    }
    if n_permutations < 10 {
        return Err(Error::parameter("n_permutations", "need at least 10 permutations"));
    }
    let n_pairs = n_permutations.div_ceil(2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walks: Vec<Vec<usize>> = Vec::with_capacity(2 * n_pairs);
    for _ in 0..n_pairs {
        let mut perm: Vec<usize> = (0..f).collect();
        perm.shuffle(&mut rng);
        let mut rev = perm.clone();
        rev.reverse();
        walks.push(perm);
        walks.push(rev);
    }

    let baseline_value = value_fn(&ablate(series, 0));
    let actual_value = value_fn(series);
    let full: u32 = if f == 32 { u32::MAX } else { (1u32 << f) - 1 };

    let contributions: Vec<Vec<f64>> = par::map_slice(&walks, true, |perm| {
        let mut contrib = vec![0.0f64; f];
        let mut coalition: u32 = 0;
        let mut prev = baseline_value;
        for &feature in perm {
            coalition |= 1 << feature;
            let cur = if coalition == full {
                actual_value
            } else {
                value_fn(&ablate(series, coalition))
            };
            contrib[feature] = cur - prev;
            prev = cur;
        }
        contrib
    });

    let mut phi = vec![0.0f64; f];
    for contrib in &contributions {
        for (p, c) in phi.iter_mut().zip(contrib) {
            *p += c;
        }
    }
    for p in &mut phi {
        *p /= walks.len() as f64;
    }

    Ok(AttributionResult {
        phi,
        baseline_value,
        actual_value,
        method: AttributionMethod::Sampled,
        n_permutations: walks.len(),
        seed,
    })
}

/// One row of the ranked importance table fed to prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub index: usize,
    pub name: String,
    pub phi: f64,
    /// Last observed value in raw units (denormalized).
    pub last_value: f64,
}

/// Top-k features by |phi| descending, ties broken by feature index
/// ascending; k beyond F returns all features.
pub fn top_features(
    result: &AttributionResult,
    specs: &[FeatureSpec],
    record: &PatientRecord,
    k: usize,
) -> Result<Vec<RankedFeature>> {
    rank_by_importance(&result.phi, specs, record, k)
}

/// Ranking core shared with the prompt builder, which holds a bare φ vector.
pub fn rank_by_importance(
    phi: &[f64],
    specs: &[FeatureSpec],
    record: &PatientRecord,
    k: usize,
) -> Result<Vec<RankedFeature>> {
    if k == 0 {
        return Err(Error::parameter("k", "k must be at least 1"));
    }
    if phi.len() != specs.len() {
        return Err(Error::Dimension(format!(
            "phi has {} entries, specs define {}",
            phi.len(),
            specs.len()
        )));
    }
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| {
        phi[b].abs().partial_cmp(&phi[a].abs()).unwrap().then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order
        .into_iter()
        .map(|j| RankedFeature {
            index: j,
            name: specs[j].name.clone(),
            phi: phi[j],
            last_value: specs[j].denormalize(record.last_observed(j)),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureKind, FeatureSpec};
    use rand::Rng;

    fn single_visit(x: &[f64]) -> Vec<Vec<f64>> {
        vec![x.to_vec()]
    }

    /// Independent oracle: average marginal contributions over all F!
    /// permutations (a different route than the coalition-weight formula).
    fn shapley_by_permutations<F: Fn(&[Vec<f64>]) -> f64>(
        value_fn: &F,
        series: &[Vec<f64>],
    ) -> Vec<f64> {
        let f = series[0].len();
        let mut perm: Vec<usize> = (0..f).collect();
        let mut phi = vec![0.0f64; f];
        let mut count = 0usize;
        permute(&mut perm, 0, &mut |p: &[usize]| {
            let mut coalition = 0u32;
            let mut prev = value_fn(&ablate(series, 0));
            for &j in p {
                coalition |= 1 << j;
                let cur = value_fn(&ablate(series, coalition));
                phi[j] += cur - prev;
                prev = cur;
            }
            count += 1;
        });
        for p in &mut phi {
            *p /= count as f64;
        }
        phi
    }

    fn permute(xs: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == xs.len() {
            visit(xs);
            return;
        }
        for i in k..xs.len() {
            xs.swap(k, i);
            permute(xs, k + 1, visit);
            xs.swap(k, i);
        }
    }

    #[test]
    fn linear_model_matches_closed_form_and_permutation_oracle() {
        // f(x) = x0 + 2·x1 at x = [1, 1] with zero baseline: phi = [1, 2].
        let value_fn = |s: &[Vec<f64>]| s[0][0] + 2.0 * s[0][1];
        let series = single_visit(&[1.0, 1.0]);
        let r = shapley_exact(&value_fn, &series).unwrap();
        assert!((r.phi[0] - 1.0).abs() < 1e-12);
        assert!((r.phi[1] - 2.0).abs() < 1e-12);
        let oracle = shapley_by_permutations(&value_fn, &series);
        for (a, b) in r.phi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dummy_feature_gets_zero_phi() {
        let value_fn = |s: &[Vec<f64>]| (s[0][0] * 1.7).tanh();
        let r = shapley_exact(&value_fn, &single_visit(&[0.8, 123.0, -55.0])).unwrap();
        assert_eq!(r.phi[1], 0.0);
        assert_eq!(r.phi[2], 0.0);
    }

    #[test]
    fn baseline_input_gets_zero_vector() {
        let value_fn = |s: &[Vec<f64>]| s[0].iter().sum::<f64>().tanh();
        let r = shapley_exact(&value_fn, &single_visit(&[0.0, 0.0, 0.0])).unwrap();
        assert!(r.phi.iter().all(|&p| p == 0.0));
        assert_eq!(r.baseline_value, r.actual_value);
    }

    #[test]
    fn exact_matches_permutation_oracle_on_nonlinear_model() {
        let value_fn = |s: &[Vec<f64>]| {
            let x = &s[0];
            (0.7 * x[0] - 1.2 * x[1] + 0.4 * x[0] * x[2] + 0.3 * x[3]).tanh()
        };
        let series = single_visit(&[0.9, -0.4, 1.3, 2.0]);
        let r = shapley_exact(&value_fn, &series).unwrap();
        let oracle = shapley_by_permutations(&value_fn, &series);
        for (a, b) in r.phi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn efficiency_holds_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _case in 0..100 {
            let f = rng.gen_range(2..=8);
            let w: Vec<f64> = (0..f).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..f).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let value_fn =
                |s: &[Vec<f64>]| s[0].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().tanh();
            let r = shapley_exact(&value_fn, &single_visit(&x)).unwrap();
            let total: f64 = r.phi.iter().sum();
            assert!(
                (total - (r.actual_value - r.baseline_value)).abs() <= 1e-9,
                "efficiency violated: {total} vs {}",
                r.actual_value - r.baseline_value
            );
        }
    }

    #[test]
    fn exchangeable_features_get_equal_phi() {
        // x0 and x1 enter only through their sum and share the same value.
        let value_fn = |s: &[Vec<f64>]| ((s[0][0] + s[0][1]) * 0.9 + 0.2 * s[0][2]).tanh();
        let r = shapley_exact(&value_fn, &single_visit(&[0.7, 0.7, -1.0])).unwrap();
        assert!((r.phi[0] - r.phi[1]).abs() <= 1e-9);
    }

    #[test]
    fn exact_refuses_beyond_max_features() {
        let value_fn = |_: &[Vec<f64>]| 0.0;
        let series = single_visit(&vec![0.0; 15]);
        let err = shapley_exact(&value_fn, &series).unwrap_err();
        assert!(err.to_string().contains("shapley_sampled"));
    }

    #[test]
    fn serial_and_parallel_exact_agree() {
        let value_fn = |s: &[Vec<f64>]| {
            (s[0][0] * 0.3 - s[0][1] * 1.1 + s[0][2] * s[0][3] * 0.2).tanh()
        };
        let series = single_visit(&[1.0, -0.5, 0.8, 0.6]);
        let a = shapley_exact(&value_fn, &series).unwrap();
        let b = shapley_exact_serial(&value_fn, &series).unwrap();
        assert_eq!(a.phi, b.phi);
    }

    #[test]
    fn sampled_close_to_exact_on_f8_linear_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let value_fn = |s: &[Vec<f64>]| s[0].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let series = single_visit(&x);
        let exact = shapley_exact(&value_fn, &series).unwrap();
        let sampled = shapley_sampled(&value_fn, &series, 200, 99).unwrap();
        let max_exact = exact.phi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let max_dev = exact
            .phi
            .iter()
            .zip(&sampled.phi)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(
            max_dev < 0.05 * max_exact,
            "max deviation {max_dev} vs bound {}",
            0.05 * max_exact
        );
        // Sampling telescopes per walk, so efficiency holds tightly.
        let total: f64 = sampled.phi.iter().sum();
        let spread = (sampled.actual_value - sampled.baseline_value).abs();
        assert!(
            (total - (sampled.actual_value - sampled.baseline_value)).abs()
                <= 0.05 * spread + 1e-6
        );
    }

    #[test]
    fn sampled_is_seed_deterministic() {
        let value_fn = |s: &[Vec<f64>]| (s[0][0] - 0.5 * s[0][1] + 0.25 * s[0][2]).tanh();
        let series = single_visit(&[1.0, 2.0, -1.0]);
        let a = shapley_sampled(&value_fn, &series, 50, 7).unwrap();
        let b = shapley_sampled(&value_fn, &series, 50, 7).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.n_permutations, 50);
    }

    #[test]
    fn sampled_rejects_tiny_permutation_counts() {
        let value_fn = |_: &[Vec<f64>]| 0.0;
        assert!(shapley_sampled(&value_fn, &single_visit(&[1.0]), 5, 0).is_err());
    }

    #[test]
    fn doubling_permutations_does_not_worsen_median_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let value_fn =
            |s: &[Vec<f64>]| s[0].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().tanh();
        let series = single_visit(&x);
        let exact = shapley_exact(&value_fn, &series).unwrap();

        let median_dev = |n: usize| -> f64 {
            let mut devs: Vec<f64> = (0..20u64)
                .map(|seed| {
                    let s = shapley_sampled(&value_fn, &series, n, seed).unwrap();
                    exact
                        .phi
                        .iter()
                        .zip(&s.phi)
                        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                })
                .collect();
            devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (devs[9] + devs[10]) / 2.0
        };
        let d20 = median_dev(20);
        let d40 = median_dev(40);
        let d80 = median_dev(80);
        assert!(d40 <= d20, "doubling 20→40 worsened: {d20} → {d40}");
        assert!(d80 <= d40, "doubling 40→80 worsened: {d40} → {d80}");
    }

    fn ranking_fixture(phi: Vec<f64>) -> (AttributionResult, Vec<FeatureSpec>, PatientRecord) {
        let f = phi.len();
        let result = AttributionResult {
            phi,
            baseline_value: 0.0,
            actual_value: 0.0,
            method: AttributionMethod::Exact,
            n_permutations: 0,
            seed: 0,
        };
        let specs: Vec<FeatureSpec> = (0..f)
            .map(|i| {
                let mut s = FeatureSpec::new(&format!("feat{i}"), FeatureKind::Dynamic, "");
                s.population_mean = Some(0.0);
                s.population_std = Some(1.0);
                s
            })
            .collect();
        let record = PatientRecord {
            patient_id: "p".to_string(),
            static_info: Default::default(),
            series: vec![(0..f).map(|i| i as f64).collect()],
            mask: vec![vec![true; f]],
            label: 0,
        };
        (result, specs, record)
    }

    #[test]
    fn top_features_sorts_by_magnitude() {
        let (result, specs, record) = ranking_fixture(vec![0.5, -0.9, 0.1]);
        let top = top_features(&result, &specs, &record, 2).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].name, "feat1");
        assert_eq!(top[1].name, "feat0");
        assert_eq!(top[0].last_value, 1.0);
    }

    #[test]
    fn top_features_clamps_k_and_breaks_ties_by_index() {
        let (result, specs, record) = ranking_fixture(vec![0.3, 0.1, -0.2, -0.3]);
        let top = top_features(&result, &specs, &record, 10).unwrap();
        assert_eq!(top.len(), 4);
        // |phi0| == |phi3|: index 0 first.
        assert_eq!(top[0].index, 0);
        assert_eq!(top[1].index, 3);
    }
}
