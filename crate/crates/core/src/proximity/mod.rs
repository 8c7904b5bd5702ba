//! Country proximity over latent-mode allocations.
//!
//! Each (model, country) is summarized by the share of its images falling in
//! every k-means cluster. Two countries are compared with the harmonic mean of
//! cosine similarity and Jensen-Shannon overlap, averaged across models with a
//! stratified bootstrap interval and a between-model heterogeneity estimate.

mod bootstrap;
mod neighbors;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bootstrap::{
    bootstrap_ci, exhaustive_bootstrap, weighted_quantile, BootstrapSummary, MAX_EXHAUSTIVE_RESAMPLES,
};
pub use neighbors::{nearest_neighbors, Neighbor, NeighborReport};

use crate::corpus::{Country, ImageRecord, Protocol};
use crate::modes::ClusterModel;
use crate::seed::derive_seed;

/// Sum-to-one tolerance for probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProximityError {
    #[error("no samples for {country} under model {model}")]
    EmptyCountry { model: String, country: Country },
    #[error("vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("not a probability vector: {0}")]
    NotDistribution(String),
    #[error("empty list")]
    EmptyList,
    #[error("stratum ({model}, {country}) has {found} samples, need at least 2")]
    InsufficientData { model: String, country: Country, found: usize },
    #[error("n_boot must be at least 100, got {0}")]
    TooFewResamples(usize),
    #[error("exhaustive enumeration would need {0} resamples")]
    EnumerationTooLarge(u128),
    #[error("variances must be positive")]
    NonPositiveVariance,
    #[error("no model contains both countries")]
    NoSharedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionVector {
    pub model: String,
    pub country: Country,
    pub p: Vec<f64>,
    pub n_samples: usize,
}

fn proportions(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Cluster indices of a country's base generations under one model.
pub(crate) fn country_clusters(cm: &ClusterModel, records: &[ImageRecord], country: Country) -> Vec<usize> {
    records
        .iter()
        .filter(|r| r.model == cm.model && r.country == country && r.protocol == Protocol::T2iBase)
        .filter_map(|r| cm.cluster_of(&r.id))
        .collect()
}

pub fn proportion_vector(
    cm: &ClusterModel,
    records: &[ImageRecord],
    country: Country,
) -> Result<ProportionVector, ProximityError> {
    let clusters = country_clusters(cm, records, country);
    if clusters.is_empty() {
        return Err(ProximityError::EmptyCountry { model: cm.model.clone(), country });
    }
    let mut counts = vec![0usize; cm.k];
    for c in &clusters {
        counts[*c] += 1;
    }
    Ok(ProportionVector {
        model: cm.model.clone(),
        country,
        p: proportions(&counts),
        n_samples: clusters.len(),
    })
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<(), ProximityError> {
    if p.len() != q.len() {
        return Err(ProximityError::LengthMismatch(p.len(), q.len()));
    }
    for v in [p, q] {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ProximityError::NotDistribution("negative or non-finite entry".into()));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(ProximityError::NotDistribution(format!("entries sum to {s}")));
        }
    }
    Ok(())
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits, within `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, ProximityError> {
    check_pair(p, q)?;
    Ok(jsd_unchecked(p, q))
}

fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m)).clamp(0.0, 1.0)
}

fn cosine_unchecked(p: &[f64], q: &[f64]) -> f64 {
    // dot / (|p| |p|) can land one ulp below 1; identical inputs are exactly aligned
    if p == q {
        return 1.0;
    }
    crate::vecmath::cosine(p, q).unwrap_or(0.0).max(0.0)
}

/// Harmonic mean of cosine similarity and `1 - JSD`; zero when the cosine is zero.
pub fn proximity_h(p: &[f64], q: &[f64]) -> Result<f64, ProximityError> {
    check_pair(p, q)?;
    Ok(proximity_unchecked(p, q))
}

pub(crate) fn proximity_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let cos = cosine_unchecked(p, q);
    let overlap = 1.0 - jsd_unchecked(p, q);
    if cos == 0.0 || cos + overlap == 0.0 {
        return 0.0;
    }
    // Symmetric in its inputs: both factors are symmetric and the expression is
    // evaluated in the same order regardless of argument order.
    (2.0 * cos * overlap / (cos + overlap)).clamp(0.0, 1.0)
}

/// Fixed-effect (unweighted) mean across models.
pub fn mean_proximity(per_model_h: &[f64]) -> Result<f64, ProximityError> {
    if per_model_h.is_empty() {
        return Err(ProximityError::EmptyList);
    }
    Ok(per_model_h.iter().sum::<f64>() / per_model_h.len() as f64)
}

/// DerSimonian-Laird between-model variance, clamped at zero.
pub fn tau_squared(per_model_h: &[f64], per_model_var: &[f64]) -> Result<f64, ProximityError> {
    if per_model_h.len() != per_model_var.len() {
        return Err(ProximityError::LengthMismatch(per_model_h.len(), per_model_var.len()));
    }
    if per_model_h.len() < 2 {
        return Err(ProximityError::EmptyList);
    }
    if per_model_var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(ProximityError::NonPositiveVariance);
    }
    let w: Vec<f64> = per_model_var.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let pooled: f64 = w.iter().zip(per_model_h).map(|(wi, hi)| wi * hi).sum::<f64>() / sw;
    let q: f64 = w.iter().zip(per_model_h).map(|(wi, hi)| wi * (hi - pooled).powi(2)).sum();
    let df = (per_model_h.len() - 1) as f64;
    let c = sw - sw2 / sw;
    if c <= 0.0 {
        return Ok(0.0);
    }
    Ok(((q - df) / c).max(0.0))
}

/// Per-model proximity for every pair of countries present under that model.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProximityTable {
    /// model -> (country_a, country_b) with `a < b` -> h
    #[serde(serialize_with = "table_as_rows")]
    pub per_model: BTreeMap<String, BTreeMap<(Country, Country), f64>>,
}

fn table_as_rows<S: serde::Serializer>(
    per_model: &BTreeMap<String, BTreeMap<(Country, Country), f64>>,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_seq(per_model.iter().flat_map(|(m, pairs)| pairs.iter().map(move |((a, b), h)| (m, a, b, h))))
}

impl ProximityTable {
    pub fn get(&self, model: &str, a: Country, b: Country) -> Option<f64> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.per_model.get(model)?.get(&key).copied()
    }
}

pub fn proximity_table(
    models: &BTreeMap<String, ClusterModel>,
    records: &[ImageRecord],
) -> ProximityTable {
    let mut table = ProximityTable::default();
    for (name, cm) in models {
        let vectors: Vec<ProportionVector> = Country::ALL
            .iter()
            .filter_map(|&c| proportion_vector(cm, records, c).ok())
            .collect();
        let entry = table.per_model.entry(name.clone()).or_default();
        for (i, a) in vectors.iter().enumerate() {
            for b in &vectors[i + 1..] {
                entry.insert((a.country, b.country), proximity_unchecked(&a.p, &b.p));
            }
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProximityConfig {
    pub n_boot: usize,
    pub level: f64,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        ProximityConfig { n_boot: 1000, level: 0.95 }
    }
}

/// Model-averaged proximity of one country pair with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximityResult {
    pub country_a: Country,
    pub country_b: Country,
    pub per_model_h: BTreeMap<String, f64>,
    pub mean_h: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Raw percentile bounds before widening to contain `mean_h`.
    pub percentile_low: f64,
    pub percentile_high: f64,
    /// `None` when a per-model bootstrap variance is zero and the h values differ.
    pub tau_squared: Option<f64>,
    pub n_models: usize,
    pub n_boot: usize,
}

/// Proximity, bootstrap interval and heterogeneity for one pair.
pub fn analyze_pair(
    models: &BTreeMap<String, ClusterModel>,
    records: &[ImageRecord],
    a: Country,
    b: Country,
    config: &ProximityConfig,
    seed: u64,
) -> Result<ProximityResult, ProximityError> {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let mut per_model_h = BTreeMap::new();
    for (name, cm) in models {
        let (Ok(pa), Ok(pb)) = (proportion_vector(cm, records, a), proportion_vector(cm, records, b)) else {
            continue;
        };
        per_model_h.insert(name.clone(), proximity_unchecked(&pa.p, &pb.p));
    }
    if per_model_h.is_empty() {
        return Err(ProximityError::NoSharedModel);
    }
    let hs: Vec<f64> = per_model_h.values().copied().collect();
    let mean_h = mean_proximity(&hs)?;
    let pair_seed = derive_seed(seed, &["bootstrap", a.as_str(), b.as_str()]);
    let boot = bootstrap_ci(records, models, (a, b), config.n_boot, pair_seed, config.level)?;
    let vars: Vec<f64> = per_model_h.keys().map(|m| boot.per_model_var[m]).collect();
    let tau = if hs.len() < 2 {
        Some(0.0)
    } else {
        match tau_squared(&hs, &vars) {
            Ok(t) => Some(t),
            Err(ProximityError::NonPositiveVariance) if hs.iter().all(|h| *h == hs[0]) => Some(0.0),
            Err(ProximityError::NonPositiveVariance) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(ProximityResult {
        country_a: a,
        country_b: b,
        n_models: per_model_h.len(),
        per_model_h,
        mean_h,
        ci_low: boot.low.min(mean_h),
        ci_high: boot.high.max(mean_h),
        percentile_low: boot.low,
        percentile_high: boot.high,
        tau_squared: tau,
        n_boot: config.n_boot,
    })
}

/// Country pairs, in country order, that share at least one model.
pub fn pairs_with_data(models: &BTreeMap<String, ClusterModel>, records: &[ImageRecord]) -> Vec<(Country, Country)> {
    let present: Vec<(Country, Vec<bool>)> = Country::ALL
        .iter()
        .map(|&c| (c, models.values().map(|cm| !country_clusters(cm, records, c).is_empty()).collect()))
        .filter(|(_, has): &(Country, Vec<bool>)| has.iter().any(|h| *h))
        .collect();
    let mut pairs = Vec::new();
    for (i, (a, ha)) in present.iter().enumerate() {
        for (b, hb) in &present[i + 1..] {
            if ha.iter().zip(hb).any(|(x, y)| *x && *y) {
                pairs.push((*a, *b));
            }
        }
    }
    pairs
}

/// Analyzes every pair from [`pairs_with_data`]; the first failing pair aborts.
pub fn analyze_all_pairs(
    models: &BTreeMap<String, ClusterModel>,
    records: &[ImageRecord],
    config: &ProximityConfig,
    seed: u64,
) -> Result<Vec<ProximityResult>, ProximityError> {
    pairs_with_data(models, records)
        .par_iter()
        .map(|&(a, b)| analyze_pair(models, records, a, b, config, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jsd_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0, epsilon = 1e-15);
        // 0.5*log2(4/3) + 0.5*(0.5*log2(2/3) + 0.5*log2(2))
        let expected = 0.5 * (4.0f64 / 3.0).log2() + 0.5 * (0.5 * (2.0f64 / 3.0).log2() + 0.5);
        assert_abs_diff_eq!(jsd(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.31128, epsilon = 1e-4);
    }

    #[test]
    fn proximity_examples() {
        let p = [0.1, 0.6, 0.3];
        assert_eq!(proximity_h(&p, &p).unwrap(), 1.0);
        assert_eq!(proximity_h(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(proximity_h(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 0.6978, epsilon = 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(jsd(&[1.0], &[0.5, 0.5]), Err(ProximityError::LengthMismatch(1, 2))));
        assert!(matches!(jsd(&[0.7, 0.7], &[0.5, 0.5]), Err(ProximityError::NotDistribution(_))));
        assert!(matches!(proximity_h(&[-0.5, 1.5], &[0.5, 0.5]), Err(ProximityError::NotDistribution(_))));
    }

    #[test]
    fn mean_proximity_examples() {
        assert_abs_diff_eq!(mean_proximity(&[0.9, 0.9, 0.9]).unwrap(), 0.9, epsilon = 1e-15);
        assert_eq!(mean_proximity(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mean_proximity(&[]), Err(ProximityError::EmptyList));
    }

    #[test]
    fn tau_squared_examples() {
        assert_eq!(tau_squared(&[0.7, 0.7, 0.7], &[0.01, 0.02, 0.03]).unwrap(), 0.0);
        // w = 100 each, pooled 0.85, Q = 0.5 < df = 1, so clamped to 0.
        assert_eq!(tau_squared(&[0.8, 0.9], &[0.01, 0.01]).unwrap(), 0.0);
        // h = (0.5, 0.9): pooled 0.7, Q = 100*0.04*2 = 8, c = 200 - 20000/200 = 100, tau2 = 7/100.
        assert_abs_diff_eq!(tau_squared(&[0.5, 0.9], &[0.01, 0.01]).unwrap(), 0.07, epsilon = 1e-12);
        assert!(matches!(tau_squared(&[0.5], &[0.1, 0.2]), Err(ProximityError::LengthMismatch(1, 2))));
        assert!(matches!(tau_squared(&[0.5, 0.6], &[0.0, 0.2]), Err(ProximityError::NonPositiveVariance)));
    }
}
