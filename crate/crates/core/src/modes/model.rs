use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModesError;

pub const CLUSTER_MAGIC: &[u8; 4] = b"ECM1";

/// Latent visual modes of one generator: PCA basis plus k-means partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub model: String,
    pub pca_mean: DVector<f64>,
    /// `d x r`
    pub pca_basis: DMatrix<f64>,
    pub r: usize,
    pub k: usize,
    /// `k x r`
    pub centroids: DMatrix<f64>,
    pub assignments: BTreeMap<String, usize>,
    pub inertia: f64,
    pub seed: u64,
    /// Whether embeddings were L2-normalized before PCA.
    pub normalized: bool,
    pub variance_target: f64,
    /// Mean silhouette per candidate K, empty when K was fixed.
    pub silhouette: Vec<(usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: String,
    d: usize,
    r: usize,
    k: usize,
    inertia: f64,
    seed: u64,
    normalized: bool,
    variance_target: f64,
    silhouette: Vec<(usize, f64)>,
    assignments: BTreeMap<String, usize>,
}

impl ClusterModel {
    pub fn dimension(&self) -> usize {
        self.pca_mean.len()
    }

    /// Cluster index of an image, if it was part of the fit.
    pub fn cluster_of(&self, image_id: &str) -> Option<usize> {
        self.assignments.get(image_id).copied()
    }

    /// Encodes as: magic `ECM1`, u64 LE header length, JSON header, then f64 LE
    /// arrays (mean, basis row-major, centroids row-major).
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            d: self.dimension(),
            r: self.r,
            k: self.k,
            inertia: self.inertia,
            seed: self.seed,
            normalized: self.normalized,
            variance_target: self.variance_target,
            silhouette: self.silhouette.clone(),
            assignments: self.assignments.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = CLUSTER_MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        self.pca_mean.iter().for_each(|v| put(*v));
        for i in 0..self.pca_basis.nrows() {
            self.pca_basis.row(i).iter().for_each(|v| put(*v));
        }
        for i in 0..self.centroids.nrows() {
            self.centroids.row(i).iter().for_each(|v| put(*v));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModesError> {
        let bad = |m: &str| ModesError::Format(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CLUSTER_MAGIC {
            return Err(bad("missing ECM1 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let body_start = 12usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(&bytes[12..body_start]).map_err(|e| bad(&e.to_string()))?;
        let floats: Vec<f64> = bytes[body_start..]
            .chunks(8)
            .map(|c| c.try_into().map(f64::from_le_bytes))
            .collect::<Result<_, _>>()
            .map_err(|_| bad("trailing partial value"))?;
        if floats.len() != h.d + h.d * h.r + h.k * h.r {
            return Err(bad("array section length does not match header"));
        }
        let (mean, rest) = floats.split_at(h.d);
        let (basis, centroids) = rest.split_at(h.d * h.r);
        Ok(ClusterModel {
            model: h.model,
            pca_mean: DVector::from_column_slice(mean),
            pca_basis: DMatrix::from_row_slice(h.d, h.r, basis),
            r: h.r,
            k: h.k,
            centroids: DMatrix::from_row_slice(h.k, h.r, centroids),
            assignments: h.assignments,
            inertia: h.inertia,
            seed: h.seed,
            normalized: h.normalized,
            variance_target: h.variance_target,
            silhouette: h.silhouette,
        })
    }
}
