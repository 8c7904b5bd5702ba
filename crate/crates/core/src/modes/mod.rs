//! Per-model latent visual modes: PCA followed by k-means.

mod kmeans;
mod model;
mod pca;
mod select;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kmeans::{fit_kmeans, recompute_inertia, KmeansFit, KmeansParams};
pub use model::{ClusterModel, CLUSTER_MAGIC};
pub use pca::{fit_pca, PcaFit};
pub use select::{best_k, choose_k, mean_silhouette, silhouette_profile, SILHOUETTE_TIE};

use crate::corpus::{ImageRecord, Protocol, RunInputs};
use crate::seed::derive_seed;
use crate::vecmath::l2_normalized;

#[derive(Debug, thiserror::Error)]
pub enum ModesError {
    #[error("data has zero total variance")]
    DegenerateData,
    #[error("need at least {needed} points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("invalid cluster count {k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid K range [{k_min}, {k_max}] for {n} points")]
    RangeError { k_min: usize, k_max: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("zero embedding for image {0}")]
    ZeroEmbedding(String),
    #[error("malformed cluster model file: {0}")]
    Format(String),
}

/// How K_m is picked for each model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KSelection {
    /// Silhouette search independently per model.
    PerModel { k_min: usize, k_max: usize },
    /// One K for all models, maximizing the silhouette averaged over models.
    Shared { k_min: usize, k_max: usize },
    Fixed { k: usize },
}

impl Default for KSelection {
    fn default() -> Self {
        KSelection::PerModel { k_min: 4, k_max: 12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModesConfig {
    pub variance_target: f64,
    pub k_selection: KSelection,
    pub n_init: usize,
    pub max_iter: usize,
    pub normalize: bool,
}

impl Default for ModesConfig {
    fn default() -> Self {
        ModesConfig {
            variance_target: 0.95,
            k_selection: KSelection::default(),
            n_init: 8,
            max_iter: 300,
            normalize: true,
        }
    }
}

/// Embeddings of one model's base text-to-image outputs, in manifest order.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub ids: Vec<String>,
    pub x: DMatrix<f64>,
}

/// Groups base generations by model and stacks their embeddings.
/// Records whose embeddings do not resolve are skipped (validation reports them).
pub fn model_data(inputs: &RunInputs) -> BTreeMap<String, ModelData> {
    let mut rows: BTreeMap<String, (Vec<String>, Vec<f64>, usize)> = BTreeMap::new();
    for r in inputs.records.iter().filter(|r| r.protocol == Protocol::T2iBase) {
        let Some(e) = inputs.embeddings.resolve(&r.embedding_ref) else { continue };
        let entry = rows.entry(r.model.clone()).or_insert_with(|| (Vec::new(), Vec::new(), e.len()));
        entry.0.push(r.id.clone());
        entry.1.extend(e.iter().map(|v| *v as f64));
    }
    rows.into_iter()
        .map(|(m, (ids, flat, d))| {
            let n = ids.len();
            (m, ModelData { ids, x: DMatrix::from_row_slice(n, d, &flat) })
        })
        .collect()
}

fn prepare(data: &ModelData, normalize: bool) -> Result<DMatrix<f64>, ModesError> {
    if !normalize {
        return Ok(data.x.clone());
    }
    let mut x = data.x.clone();
    for (i, mut row) in x.row_iter_mut().enumerate() {
        let v: Vec<f64> = row.iter().copied().collect();
        let unit = l2_normalized(&v).ok_or_else(|| ModesError::ZeroEmbedding(data.ids[i].clone()))?;
        row.copy_from_slice(&unit);
    }
    Ok(x)
}

fn clamp_range(k_min: usize, k_max: usize, n: usize) -> Result<(usize, usize), ModesError> {
    // Silhouette needs K < n to be informative.
    let hi = k_max.min(n.saturating_sub(1));
    if hi < 2 {
        return Err(ModesError::TooFewPoints { needed: 3, found: n });
    }
    Ok((k_min.clamp(2, hi), hi))
}

fn params(config: &ModesConfig, seed: u64) -> KmeansParams {
    KmeansParams { seed, max_iter: config.max_iter, n_init: config.n_init }
}

/// Fits PCA and k-means for one model. `k` overrides the configured selection.
pub fn fit_cluster_model(
    model: &str,
    data: &ModelData,
    config: &ModesConfig,
    seed: u64,
    k: Option<usize>,
) -> Result<ClusterModel, ModesError> {
    let x = prepare(data, config.normalize)?;
    let pca = fit_pca(&x, config.variance_target)?;
    let y = pca.project(&x);
    let model_seed = derive_seed(seed, &["modes", model]);
    let p = params(config, model_seed);
    let (k, silhouette) = match (k, config.k_selection) {
        (Some(k), _) | (None, KSelection::Fixed { k }) => (k, Vec::new()),
        (None, KSelection::PerModel { k_min, k_max } | KSelection::Shared { k_min, k_max }) => {
            let (lo, hi) = clamp_range(k_min, k_max, y.nrows())?;
            let profile = silhouette_profile(&y, lo, hi, p)?;
            (best_k(&profile).expect("non-empty"), profile)
        }
    };
    let fit = fit_kmeans(&y, k, p)?;
    Ok(ClusterModel {
        model: model.to_string(),
        pca_mean: pca.mean,
        pca_basis: pca.basis,
        r: pca.r,
        k,
        centroids: fit.centroids,
        assignments: data.ids.iter().cloned().zip(fit.assignments).collect(),
        inertia: fit.inertia,
        seed: model_seed,
        normalized: config.normalize,
        variance_target: config.variance_target,
        silhouette,
    })
}

/// Fits every model. Models run in parallel; results are keyed by model id.
pub fn fit_all_models(
    data: &BTreeMap<String, ModelData>,
    config: &ModesConfig,
    seed: u64,
) -> Result<BTreeMap<String, ClusterModel>, ModesError> {
    let shared_k = match config.k_selection {
        KSelection::Shared { k_min, k_max } => Some(shared_k(data, config, seed, k_min, k_max)?),
        _ => None,
    };
    let fitted: Vec<Result<(String, ClusterModel), ModesError>> = data
        .par_iter()
        .map(|(m, d)| fit_cluster_model(m, d, config, seed, shared_k).map(|c| (m.clone(), c)))
        .collect();
    fitted.into_iter().collect()
}

fn shared_k(
    data: &BTreeMap<String, ModelData>,
    config: &ModesConfig,
    seed: u64,
    k_min: usize,
    k_max: usize,
) -> Result<usize, ModesError> {
    let n_min = data.values().map(|d| d.ids.len()).min().unwrap_or(0);
    let (lo, hi) = clamp_range(k_min, k_max, n_min)?;
    let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
    for (m, d) in data {
        let x = prepare(d, config.normalize)?;
        let pca = fit_pca(&x, config.variance_target)?;
        let y = pca.project(&x);
        let p = params(config, derive_seed(seed, &["modes", m]));
        for (k, s) in silhouette_profile(&y, lo, hi, p)? {
            *totals.entry(k).or_default() += s / data.len() as f64;
        }
    }
    let profile: Vec<(usize, f64)> = totals.into_iter().collect();
    Ok(best_k(&profile).expect("non-empty"))
}

/// Image ids of a model's base generations grouped by country.
pub fn ids_by_country<'a>(
    records: &'a [ImageRecord],
    model: &str,
) -> BTreeMap<crate::corpus::Country, Vec<&'a str>> {
    let mut out: BTreeMap<_, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.model == model && r.protocol == Protocol::T2iBase) {
        out.entry(r.country).or_default().push(&r.id);
    }
    out
}
