use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::ModesError;
use crate::seed::{derive_seed, rng};
use crate::vecmath::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KmeansParams {
    pub seed: u64,
    pub max_iter: usize,
    pub n_init: usize,
}

impl Default for KmeansParams {
    fn default() -> Self {
        KmeansParams { seed: 0, max_iter: 300, n_init: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansFit {
    /// `k x r`
    pub centroids: DMatrix<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the restart that produced this solution.
    pub restart: usize,
    /// Objective after every assignment, reseed and update step of the winning restart.
    pub inertia_history: Vec<f64>,
}

/// Row-major copy of the data for cache-friendly distance loops.
struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    fn from_matrix(y: &DMatrix<f64>) -> Self {
        let (n, dim) = y.shape();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            data.extend(y.row(i).iter());
        }
        Points { data, dim }
    }

    fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Lloyd's algorithm from greedy k-means++ seeding, best of `n_init` restarts.
///
/// Restarts run in parallel; the lowest inertia wins and equal inertia goes to
/// the lowest restart index.
pub fn fit_kmeans(y: &DMatrix<f64>, k: usize, params: KmeansParams) -> Result<KmeansFit, ModesError> {
    let n = y.nrows();
    if k == 0 || k > n {
        return Err(ModesError::InvalidK { k, n });
    }
    let points = Points::from_matrix(y);
    let restarts = params.n_init.max(1);
    let fits: Vec<KmeansFit> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(params.seed, &["kmeans-restart", &i.to_string()]);
            run_once(&points, k, seed, params.max_iter, i)
        })
        .collect();
    let best = fits
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

/// Index of the nearest centroid; exact ties go to the lowest index.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &Points, centroids: &[f64]) -> Vec<usize> {
    (0..points.len())
        .map(|i| nearest(points.row(i), centroids, points.dim).0)
        .collect()
}

fn objective(points: &Points, centroids: &[f64], assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &j)| squared_distance(points.row(i), &centroids[j * points.dim..(j + 1) * points.dim]))
        .sum()
}

fn update_means(points: &Points, k: usize, assignments: &[usize]) -> Vec<f64> {
    let dim = points.dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &j) in assignments.iter().enumerate() {
        counts[j] += 1;
        for (s, v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for j in 0..k {
        let c = counts[j].max(1) as f64;
        for s in &mut sums[j * dim..(j + 1) * dim] {
            *s /= c;
        }
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Only points from clusters with at least two members are eligible.
fn reseed_empty(points: &Points, k: usize, centroids: &mut [f64], assignments: &mut [usize]) -> bool {
    let dim = points.dim;
    let mut counts = vec![0usize; k];
    for &j in assignments.iter() {
        counts[j] += 1;
    }
    let mut changed = false;
    for empty in 0..k {
        if counts[empty] != 0 {
            continue;
        }
        let mut far = None::<(usize, f64)>;
        for (i, &j) in assignments.iter().enumerate() {
            if counts[j] < 2 {
                continue;
            }
            let d = squared_distance(points.row(i), &centroids[j * dim..(j + 1) * dim]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("k <= n guarantees a donor cluster");
        counts[assignments[i]] -= 1;
        assignments[i] = empty;
        counts[empty] = 1;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(points.row(i));
        changed = true;
    }
    changed
}

fn init_plus_plus(points: &Points, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len();
    let dim = points.dim;
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| squared_distance(points.row(i), points.row(first))).collect();

    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, d) in closest.iter().enumerate() {
                    if target < *d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = (0..n)
                .map(|i| closest[i].min(squared_distance(points.row(i), points.row(cand))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(_, p, _)| potential < *p) {
                best = Some((cand, potential, updated));
            }
        }
        let (cand, _, updated) = best.expect("at least one trial");
        centroids.extend_from_slice(points.row(cand));
        closest = updated;
    }
    centroids
}

fn run_once(points: &Points, k: usize, seed: u64, max_iter: usize, restart: usize) -> KmeansFit {
    let mut rng = rng(seed);
    let mut centroids = init_plus_plus(points, k, &mut rng);
    let mut assignments = assign(points, &centroids);
    let mut history = vec![objective(points, &centroids, &assignments)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        if reseed_empty(points, k, &mut centroids, &mut assignments) {
            history.push(objective(points, &centroids, &assignments));
        }
        centroids = update_means(points, k, &assignments);
        history.push(objective(points, &centroids, &assignments));
        let next = assign(points, &centroids);
        history.push(objective(points, &centroids, &next));
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    if !converged {
        reseed_empty(points, k, &mut centroids, &mut assignments);
        centroids = update_means(points, k, &assignments);
        history.push(objective(points, &centroids, &assignments));
    }

    debug_assert!(
        history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs())),
        "Lloyd objective increased: {history:?}"
    );

    let inertia = objective(points, &centroids, &assignments);
    KmeansFit {
        centroids: DMatrix::from_row_slice(k, points.dim, &centroids),
        assignments,
        inertia,
        iterations,
        converged,
        restart,
        inertia_history: history,
    }
}

/// Recomputes the within-cluster sum of squares of a fit against `y`.
pub fn recompute_inertia(y: &DMatrix<f64>, centroids: &DMatrix<f64>, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &j)| (y.row(i) - centroids.row(j)).norm_squared())
        .sum()
}
