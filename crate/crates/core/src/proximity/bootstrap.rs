use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use super::{country_clusters, proportions, proximity_unchecked, ProximityError};
use crate::corpus::{Country, ImageRecord};
use crate::modes::ClusterModel;
use crate::seed::rng;

pub const MIN_RESAMPLES: usize = 100;

/// Upper bound on the joint outcome count for [`exhaustive_bootstrap`].
pub const MAX_EXHAUSTIVE_RESAMPLES: u128 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    /// Lower percentile of the resampled model-mean proximity.
    pub low: f64,
    pub high: f64,
    /// Variance of each model's resampled h.
    pub per_model_var: BTreeMap<String, f64>,
    /// Number of Monte Carlo resamples, or distinct joint outcomes when exhaustive.
    pub replicates: usize,
    pub exhaustive: bool,
}

struct ModelStrata {
    model: String,
    k: usize,
    a: Vec<usize>,
    b: Vec<usize>,
}

fn strata(
    records: &[ImageRecord],
    models: &BTreeMap<String, ClusterModel>,
    (a, b): (Country, Country),
) -> Result<Vec<ModelStrata>, ProximityError> {
    let mut out = Vec::new();
    for (name, cm) in models {
        let ca = country_clusters(cm, records, a);
        let cb = country_clusters(cm, records, b);
        if ca.is_empty() || cb.is_empty() {
            continue;
        }
        for (country, c) in [(a, &ca), (b, &cb)] {
            if c.len() < 2 {
                return Err(ProximityError::InsufficientData {
                    model: name.clone(),
                    country,
                    found: c.len(),
                });
            }
        }
        out.push(ModelStrata { model: name.clone(), k: cm.k, a: ca, b: cb });
    }
    if out.is_empty() {
        return Err(ProximityError::NoSharedModel);
    }
    Ok(out)
}

/// Inverse-ECDF quantile of a weighted sample: the smallest value whose
/// cumulative weight reaches `alpha` of the total.
pub fn weighted_quantile(samples: &[(f64, f64)], alpha: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = sorted.iter().map(|s| s.1).sum();
    let target = alpha * total * (1.0 - 1e-12);
    let mut cum = 0.0;
    for (v, w) in &sorted {
        cum += w;
        if cum >= target && *w > 0.0 {
            return Some(*v);
        }
    }
    sorted.last().map(|s| s.0)
}

fn weighted_variance(values: &[(f64, f64)]) -> f64 {
    let total: f64 = values.iter().map(|v| v.1).sum();
    let mean = values.iter().map(|(x, w)| x * w).sum::<f64>() / total;
    values.iter().map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total
}

fn bounds(level: f64) -> (f64, f64) {
    let tail = (1.0 - level) / 2.0;
    (tail, 1.0 - tail)
}

/// Stratified percentile bootstrap of the model-averaged proximity of `pair`.
///
/// Images are resampled with replacement inside every (model, country)
/// stratum; cluster assignments stay fixed.
pub fn bootstrap_ci(
    records: &[ImageRecord],
    models: &BTreeMap<String, ClusterModel>,
    pair: (Country, Country),
    n_boot: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapSummary, ProximityError> {
    if n_boot < MIN_RESAMPLES {
        return Err(ProximityError::TooFewResamples(n_boot));
    }
    let strata = strata(records, models, pair)?;
    let mut rng = rng(seed);
    let mut means = Vec::with_capacity(n_boot);
    let mut per_model: Vec<Vec<f64>> = vec![Vec::with_capacity(n_boot); strata.len()];

    let draw = |clusters: &[usize], k: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut counts = vec![0usize; k];
        for _ in 0..clusters.len() {
            counts[clusters[rng.random_range(0..clusters.len())]] += 1;
        }
        proportions(&counts)
    };

    for _ in 0..n_boot {
        let mut sum = 0.0;
        for (m, s) in strata.iter().enumerate() {
            let pa = draw(&s.a, s.k, &mut rng);
            let pb = draw(&s.b, s.k, &mut rng);
            let h = proximity_unchecked(&pa, &pb);
            per_model[m].push(h);
            sum += h;
        }
        means.push(sum / strata.len() as f64);
    }

    let weighted: Vec<(f64, f64)> = means.iter().map(|m| (*m, 1.0)).collect();
    let (lo, hi) = bounds(level);
    let per_model_var = strata
        .iter()
        .zip(&per_model)
        .map(|(s, hs)| (s.model.clone(), crate::vecmath::sample_variance(hs).unwrap_or(0.0)))
        .collect();
    Ok(BootstrapSummary {
        low: weighted_quantile(&weighted, lo).unwrap(),
        high: weighted_quantile(&weighted, hi).unwrap(),
        per_model_var,
        replicates: n_boot,
        exhaustive: false,
    })
}

/// Distribution of cluster-count vectors when `clusters.len()` items are drawn
/// with replacement from `clusters`, as (counts, probability) pairs.
fn resample_distribution(clusters: &[usize], k: usize) -> Vec<(Vec<usize>, f64)> {
    let n = clusters.len();
    let mut out: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut multiplicity = vec![0usize; n];
    let fact: Vec<u128> = (0..=n as u128).scan(1u128, |acc, i| {
        if i > 0 {
            *acc *= i;
        }
        Some(*acc)
    }).collect();
    let total = (n as u128).pow(n as u32) as f64;

    // Enumerate how many times each source item is drawn; each pattern has
    // multinomial weight n! / prod(m_i!) out of n^n ordered draws.
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        idx: usize,
        remaining: usize,
        multiplicity: &mut [usize],
        clusters: &[usize],
        k: usize,
        fact: &[u128],
        total: f64,
        out: &mut BTreeMap<Vec<usize>, f64>,
    ) {
        let n = multiplicity.len();
        if idx == n - 1 {
            multiplicity[idx] = remaining;
            let ways = multiplicity.iter().fold(fact[n], |acc, &m| acc / fact[m]);
            let mut counts = vec![0usize; k];
            for (i, &m) in multiplicity.iter().enumerate() {
                counts[clusters[i]] += m;
            }
            *out.entry(counts).or_default() += ways as f64 / total;
            return;
        }
        for m in 0..=remaining {
            multiplicity[idx] = m;
            recurse(idx + 1, remaining - m, multiplicity, clusters, k, fact, total, out);
        }
    }
    recurse(0, n, &mut multiplicity, clusters, k, &fact, total, &mut out);
    out.into_iter().collect()
}

/// Exact bootstrap distribution by enumerating every resample of every stratum.
///
/// Only feasible for tiny strata; used as the reference for the Monte Carlo path.
pub fn exhaustive_bootstrap(
    records: &[ImageRecord],
    models: &BTreeMap<String, ClusterModel>,
    pair: (Country, Country),
    level: f64,
) -> Result<BootstrapSummary, ProximityError> {
    let strata = strata(records, models, pair)?;
    let mut outcome_count: u128 = 1;
    for s in &strata {
        for c in [&s.a, &s.b] {
            let n = c.len() as u32;
            if n > 12 {
                return Err(ProximityError::EnumerationTooLarge(u128::MAX));
            }
            outcome_count = outcome_count.saturating_mul((c.len() as u128).pow(n));
        }
    }
    // Per model: distribution of h over the joint (a, b) resample.
    let mut per_model_dist: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut joint_size: u128 = 1;
    for s in &strata {
        let da = resample_distribution(&s.a, s.k);
        let db = resample_distribution(&s.b, s.k);
        let mut dist = Vec::with_capacity(da.len() * db.len());
        for (ca, wa) in &da {
            for (cb, wb) in &db {
                dist.push((proximity_unchecked(&proportions(ca), &proportions(cb)), wa * wb));
            }
        }
        joint_size = joint_size.saturating_mul(dist.len() as u128);
        per_model_dist.push(dist);
    }
    if joint_size > MAX_EXHAUSTIVE_RESAMPLES {
        return Err(ProximityError::EnumerationTooLarge(outcome_count));
    }

    let mut means: Vec<(f64, f64)> = Vec::with_capacity(joint_size as usize);
    let mut index = vec![0usize; strata.len()];
    'outer: loop {
        let mut sum = 0.0;
        let mut w = 1.0;
        for (m, dist) in per_model_dist.iter().enumerate() {
            sum += dist[index[m]].0;
            w *= dist[index[m]].1;
        }
        means.push((sum / strata.len() as f64, w));
        let mut pos = strata.len();
        while pos > 0 {
            pos -= 1;
            index[pos] += 1;
            if index[pos] < per_model_dist[pos].len() {
                continue 'outer;
            }
            index[pos] = 0;
        }
        break;
    }

    let (lo, hi) = bounds(level);
    let per_model_var = strata
        .iter()
        .zip(&per_model_dist)
        .map(|(s, d)| (s.model.clone(), weighted_variance(d)))
        .collect();
    Ok(BootstrapSummary {
        low: weighted_quantile(&means, lo).unwrap(),
        high: weighted_quantile(&means, hi).unwrap(),
        per_model_var,
        replicates: means.len(),
        exhaustive: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverse_ecdf() {
        let s: Vec<(f64, f64)> = [3.0, 1.0, 2.0, 4.0].iter().map(|v| (*v, 1.0)).collect();
        assert_eq!(weighted_quantile(&s, 0.25), Some(1.0));
        assert_eq!(weighted_quantile(&s, 0.26), Some(2.0));
        assert_eq!(weighted_quantile(&s, 1.0), Some(4.0));
        assert_eq!(weighted_quantile(&[(5.0, 0.0), (6.0, 1.0)], 0.0), Some(6.0));
    }

    #[test]
    fn resample_distribution_sums_to_one() {
        let d = resample_distribution(&[0, 1, 1], 2);
        let total: f64 = d.iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // P(all three draws from cluster 1) = (2/3)^3
        let all_one = d.iter().find(|(c, _)| c == &vec![0, 3]).unwrap().1;
        assert!((all_one - 8.0 / 27.0).abs() < 1e-12);
    }
}
