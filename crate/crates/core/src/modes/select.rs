use nalgebra::DMatrix;
use rayon::prelude::*;

use super::kmeans::{fit_kmeans, KmeansParams};
use super::ModesError;
use crate::seed::derive_seed;

/// Silhouettes closer than this count as equal; the smaller K wins.
pub const SILHOUETTE_TIE: f64 = 1e-12;

/// Mean silhouette coefficient of a partition (Euclidean distance).
///
/// Points in singleton clusters score 0, as does a point whose intra- and
/// nearest-cluster distances are both zero.
pub fn mean_silhouette(y: &DMatrix<f64>, assignments: &[usize], k: usize) -> f64 {
    let n = y.nrows();
    if n == 0 || k < 2 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| y.row(i).iter().copied().collect()).collect();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if i != j {
                    sums[assignments[j]] += crate::vecmath::squared_distance(&rows[i], &rows[j]).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 || !b.is_finite() {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / n as f64
}

/// Mean silhouette for every K in `[k_min, k_max]`.
pub fn silhouette_profile(
    y: &DMatrix<f64>,
    k_min: usize,
    k_max: usize,
    params: KmeansParams,
) -> Result<Vec<(usize, f64)>, ModesError> {
    let n = y.nrows();
    if k_min < 2 || k_min > k_max || k_max > n {
        return Err(ModesError::RangeError { k_min, k_max, n });
    }
    (k_min..=k_max)
        .map(|k| {
            let p = KmeansParams { seed: derive_seed(params.seed, &["choose-k", &k.to_string()]), ..params };
            let fit = fit_kmeans(y, k, p)?;
            Ok((k, mean_silhouette(y, &fit.assignments, k)))
        })
        .collect()
}

/// Picks the best K from a profile; near-ties go to the smaller K.
pub fn best_k(profile: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(k, s) in profile {
        match best {
            Some((_, bs)) if s <= bs + SILHOUETTE_TIE => {}
            _ => best = Some((k, s)),
        }
    }
    best.map(|(k, _)| k)
}

/// The K in `[k_min, k_max]` with the highest mean silhouette.
pub fn choose_k(y: &DMatrix<f64>, k_min: usize, k_max: usize, params: KmeansParams) -> Result<usize, ModesError> {
    let profile = silhouette_profile(y, k_min, k_max, params)?;
    Ok(best_k(&profile).expect("non-empty range"))
}
