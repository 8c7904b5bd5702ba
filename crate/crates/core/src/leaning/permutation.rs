use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::LeaningError;
use crate::corpus::Country;
use crate::seed::rng;

/// Relative slack when comparing a permuted statistic against the observed one,
/// so that mathematically equal statistics summed in another order still tie.
pub const TIE_EPS: f64 = 1e-12;

/// Upper bound on label arrangements for exact enumeration.
pub const MAX_EXACT_ARRANGEMENTS: u128 = 5_000_000;

/// Leaning scores of one category with their country labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryScores {
    pub labels: Vec<Country>,
    pub scores: Vec<f64>,
}

/// Image-level scores grouped by category; labels are permuted within each group only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupedScores {
    pub categories: BTreeMap<String, CategoryScores>,
}

impl GroupedScores {
    pub fn push(&mut self, category: &str, country: Country, score: f64) {
        let g = self.categories.entry(category.to_string()).or_default();
        g.labels.push(country);
        g.scores.push(score);
    }

    pub fn countries(&self) -> Vec<Country> {
        let mut c: Vec<Country> = self.categories.values().flat_map(|g| g.labels.iter().copied()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Scores of one country across all categories.
    pub fn scores_of(&self, country: Country) -> Vec<f64> {
        self.categories
            .values()
            .flat_map(|g| g.labels.iter().zip(&g.scores).filter(move |(l, _)| **l == country).map(|(_, s)| *s))
            .collect()
    }

    fn check(&self) -> Result<(), LeaningError> {
        let countries = self.countries();
        let permutable = self.categories.values().any(|g| {
            let first = g.labels.first();
            g.labels.iter().any(|l| Some(l) != first)
        });
        if countries.len() < 2 || !permutable {
            return Err(LeaningError::InsufficientGroups);
        }
        Ok(())
    }
}

/// Statistic evaluated on a labelling of every category (in `categories` order).
pub trait Statistic {
    fn eval(&self, scores: &[&[f64]], labels: &[&[Country]]) -> f64;
}

/// `|mean score of the target country|`.
pub struct TargetMean(pub Country);

impl Statistic for TargetMean {
    fn eval(&self, scores: &[&[f64]], labels: &[&[Country]]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (s, l) in scores.iter().zip(labels) {
            for (v, c) in s.iter().zip(l.iter()) {
                if *c == self.0 {
                    sum += v;
                    n += 1;
                }
            }
        }
        if n == 0 { 0.0 } else { (sum / n as f64).abs() }
    }
}

/// Sample variance of the per-country mean scores.
pub struct CountryMeanDispersion;

impl Statistic for CountryMeanDispersion {
    fn eval(&self, scores: &[&[f64]], labels: &[&[Country]]) -> f64 {
        let mut acc = [(0.0f64, 0usize); Country::ALL.len()];
        for (s, l) in scores.iter().zip(labels) {
            for (v, c) in s.iter().zip(l.iter()) {
                let slot = &mut acc[*c as usize];
                slot.0 += v;
                slot.1 += 1;
            }
        }
        let means: Vec<f64> = acc.iter().filter(|a| a.1 > 0).map(|a| a.0 / a.1 as f64).collect();
        crate::vecmath::sample_variance(&means).unwrap_or(0.0)
    }
}

fn at_least(perm: f64, observed: f64) -> bool {
    perm >= observed - TIE_EPS * observed.abs().max(1.0)
}

fn split(data: &GroupedScores) -> (Vec<&[f64]>, Vec<Vec<Country>>) {
    let scores = data.categories.values().map(|g| g.scores.as_slice()).collect();
    let labels = data.categories.values().map(|g| g.labels.clone()).collect();
    (scores, labels)
}

/// Monte Carlo permutation p-value `(1 + #{T_perm >= T_obs}) / (1 + n_perm)`.
pub fn monte_carlo_p(
    data: &GroupedScores,
    stat: &impl Statistic,
    n_perm: usize,
    seed: u64,
) -> Result<f64, LeaningError> {
    if n_perm < 99 {
        return Err(LeaningError::TooFewPermutations(n_perm));
    }
    data.check()?;
    let (scores, mut labels) = split(data);
    let observed = {
        let views: Vec<&[Country]> = labels.iter().map(|l| l.as_slice()).collect();
        stat.eval(&scores, &views)
    };
    let mut rng = rng(seed);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        for l in labels.iter_mut() {
            l.shuffle(&mut rng);
        }
        let views: Vec<&[Country]> = labels.iter().map(|l| l.as_slice()).collect();
        if at_least(stat.eval(&scores, &views), observed) {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}

/// Rearranges `v` into the next lexicographic permutation; false when `v` was the last one.
fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        v.reverse();
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn arrangements(labels: &[Country]) -> u128 {
    let mut counts: BTreeMap<Country, u128> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    // multinomial n! / prod(c!) built incrementally to stay exact
    let mut total: u128 = 1;
    let mut placed: u128 = 0;
    for c in counts.values() {
        for i in 1..=*c {
            placed += 1;
            total = total.saturating_mul(placed) / i;
        }
    }
    total
}

/// Number of distinct within-category relabellings, saturating.
pub fn arrangement_count(data: &GroupedScores) -> u128 {
    data.categories.values().map(|g| arrangements(&g.labels)).fold(1u128, |a, b| a.saturating_mul(b))
}

/// Exact p when every distinct relabelling fits in the `n_perm` budget,
/// Monte Carlo otherwise.
pub fn permutation_p(data: &GroupedScores, stat: &impl Statistic, n_perm: usize, seed: u64) -> Result<f64, LeaningError> {
    if n_perm < 99 {
        return Err(LeaningError::TooFewPermutations(n_perm));
    }
    if arrangement_count(data) <= n_perm as u128 {
        exact_p(data, stat)
    } else {
        monte_carlo_p(data, stat, n_perm, seed)
    }
}

/// Exact permutation p-value `#{T_perm >= T_obs} / N` over every distinct
/// within-category relabelling (the observed labelling included).
pub fn exact_p(data: &GroupedScores, stat: &impl Statistic) -> Result<f64, LeaningError> {
    data.check()?;
    let (scores, observed_labels) = split(data);
    let total = arrangement_count(data);
    if total > MAX_EXACT_ARRANGEMENTS {
        return Err(LeaningError::EnumerationTooLarge(total));
    }
    let observed = {
        let views: Vec<&[Country]> = observed_labels.iter().map(|l| l.as_slice()).collect();
        stat.eval(&scores, &views)
    };
    let mut labels: Vec<Vec<Country>> = observed_labels
        .iter()
        .map(|l| {
            let mut s = l.clone();
            s.sort();
            s
        })
        .collect();
    let mut hits: u128 = 0;
    let mut seen: u128 = 0;
    'outer: loop {
        let views: Vec<&[Country]> = labels.iter().map(|l| l.as_slice()).collect();
        if at_least(stat.eval(&scores, &views), observed) {
            hits += 1;
        }
        seen += 1;
        for l in labels.iter_mut().rev() {
            if next_permutation(l) {
                continue 'outer;
            }
        }
        break;
    }
    debug_assert_eq!(seen, total);
    Ok(hits as f64 / seen as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn next_permutation_visits_distinct_arrangements() {
        let mut v = vec![1, 1, 2, 3];
        let mut n = 1;
        while next_permutation(&mut v) {
            n += 1;
        }
        assert_eq!(n, 12);
        assert_eq!(v, vec![1, 1, 2, 3]);
    }

    #[test]
    fn arrangement_count() {
        use Country::*;
        assert_eq!(arrangements(&[China, China, India, Kenya]), 12);
        assert_eq!(arrangements(&[China; 5]), 1);
    }
}
