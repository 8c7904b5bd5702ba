//! k-means against exhaustive enumeration of 2-partitions of four 1-D points.

use ecb_core::modes::{fit_kmeans, recompute_inertia, KmeansParams};
use itertools::Itertools;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sse(points: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let m = points.iter().sum::<f64>() / points.len() as f64;
    points.iter().map(|p| (p - m) * (p - m)).sum()
}

/// All optimal partitions as sets-of-index-groups, plus the optimal inertia.
fn brute_force(points: &[f64]) -> (f64, Vec<Vec<bool>>) {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut winners = Vec::new();
    // mask bit i = point i in group B; fix point 0 in group A to skip mirror images.
    for mask in 1u32..(1 << (n - 1)) {
        let side: Vec<bool> = (0..n).map(|i| i > 0 && mask & (1 << (i - 1)) != 0).collect();
        let a: Vec<f64> = (0..n).filter(|&i| !side[i]).map(|i| points[i]).collect();
        let b: Vec<f64> = (0..n).filter(|&i| side[i]).map(|i| points[i]).collect();
        let cost = sse(&a) + sse(&b);
        if cost < best - 1e-9 {
            best = cost;
            winners = vec![side];
        } else if (cost - best).abs() <= 1e-9 {
            winners.push(side);
        }
    }
    (best, winners)
}

fn check(points: &[f64], seed: u64) -> Result<(), String> {
    let y = DMatrix::from_column_slice(points.len(), 1, points);
    let fit = fit_kmeans(&y, 2, KmeansParams { seed, ..Default::default() }).map_err(|e| e.to_string())?;
    let (best, winners) = brute_force(points);
    let side: Vec<bool> = fit.assignments.iter().map(|&a| a != fit.assignments[0]).collect();
    // Duplicated points may be split arbitrarily between equal-cost partitions; compare on cost
    // and, when the optimum is unique, on the partition itself.
    if (fit.inertia - best).abs() > 1e-9 {
        return Err(format!("{points:?}: inertia {} vs optimum {best}", fit.inertia));
    }
    let distinct = points.iter().map(|p| p.to_bits()).unique().count();
    if distinct == points.len() && !winners.contains(&side) {
        return Err(format!("{points:?}: partition {side:?} not among {winners:?}"));
    }
    Ok(())
}

#[test]
fn all_integer_grid_fixtures_reach_the_optimum() {
    let mut failures = Vec::new();
    for combo in (0..=12).combinations_with_replacement(4) {
        let points: Vec<f64> = combo.iter().map(|&v| v as f64).collect();
        if points.iter().all(|p| *p == points[0]) {
            continue;
        }
        for perm in [vec![0, 1, 2, 3], vec![3, 1, 0, 2]] {
            let shuffled: Vec<f64> = perm.iter().map(|&i| points[i]).collect();
            if let Err(e) = check(&shuffled, 0) {
                failures.push(e);
            }
        }
    }
    assert!(failures.is_empty(), "{} failures, first: {:?}", failures.len(), failures.first());
}

#[test]
fn local_minimum_trap_is_escaped() {
    // {0,10},{11,22} is a Lloyd fixed point with inertia 110.5; the optimum is 74.
    check(&[0.0, 10.0, 11.0, 22.0], 0).unwrap();
    check(&[22.0, 11.0, 10.0, 0.0], 3).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lloyd_objective_never_increases(
        values in proptest::collection::vec(-50.0f64..50.0, 6..40),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let n = values.len() / 2;
        let y = DMatrix::from_row_slice(n, 2, &values[..n * 2]);
        let k = k.min(n);
        let fit = fit_kmeans(&y, k, KmeansParams { seed, ..Default::default() }).unwrap();
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]), "history {:?}", fit.inertia_history);
        }
        let recomputed = recompute_inertia(&y, &fit.centroids, &fit.assignments);
        prop_assert!((recomputed - fit.inertia).abs() <= 1e-9 * (1.0 + recomputed));
        if fit.converged {
            for i in 0..n {
                let d: Vec<f64> = (0..k).map(|j| (y.row(i) - fit.centroids.row(j)).norm_squared()).collect();
                let nearest = d.iter().enumerate().fold(0, |b, (j, v)| if *v < d[b] { j } else { b });
                prop_assert_eq!(fit.assignments[i], nearest);
            }
        }
    }
}
