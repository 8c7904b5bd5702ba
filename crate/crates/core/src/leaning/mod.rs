//! Traditional versus modern leaning of each country's generations.
//!
//! Every base image is contrasted against per-category era prototypes; the
//! signed margins are aggregated per country and tested with within-category
//! label permutations.

mod fdr;
mod permutation;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fdr::bh_fdr;
pub use permutation::{
    arrangement_count, exact_p, monte_carlo_p, permutation_p, CategoryScores, CountryMeanDispersion, GroupedScores, Statistic, TargetMean,
    MAX_EXACT_ARRANGEMENTS, TIE_EPS,
};

use crate::corpus::{Country, EmbeddingSet, Era, ImageRecord, Protocol};
use crate::seed::derive_seed;
use crate::vecmath::{cosine, l2_normalized, mean, sample_variance};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LeaningError {
    #[error("model {0} has no category with both traditional and modern images")]
    NoCategories(String),
    #[error("zero vector in leaning score")]
    ZeroVector,
    #[error("need at least 2 scores, found {0}")]
    TooFew(usize),
    #[error("permutation test needs at least two countries sharing a category")]
    InsufficientGroups,
    #[error("at least 99 permutations required, got {0}")]
    TooFewPermutations(usize),
    #[error("exact enumeration needs {0} arrangements")]
    EnumerationTooLarge(u128),
    #[error("p-value {0} outside (0, 1]")]
    OutOfRange(f64),
    #[error("country {0} has no scored images")]
    TargetAbsent(Country),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prototype {
    /// Mean of unit-normalized traditional embeddings (not renormalized).
    pub trad: Vec<f64>,
    pub modern: Vec<f64>,
    pub n_trad: usize,
    pub n_mod: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrototypeSet {
    pub model: String,
    pub categories: BTreeMap<String, Prototype>,
    /// Categories that lacked one of the two eras.
    pub excluded: Vec<String>,
}

fn unit_embedding(r: &ImageRecord, embeddings: &EmbeddingSet) -> Option<Vec<f64>> {
    let e = embeddings.resolve(&r.embedding_ref)?;
    let v: Vec<f64> = e.iter().map(|x| *x as f64).collect();
    l2_normalized(&v)
}

fn base_records<'a>(records: &'a [ImageRecord], model: &'a str) -> impl Iterator<Item = &'a ImageRecord> {
    records.iter().filter(move |r| r.model == model && r.protocol == Protocol::T2iBase)
}

pub fn build_prototypes(
    records: &[ImageRecord],
    embeddings: &EmbeddingSet,
    model: &str,
) -> Result<PrototypeSet, LeaningError> {
    let mut sums: BTreeMap<&str, [(Vec<f64>, usize); 2]> = BTreeMap::new();
    for r in base_records(records, model) {
        let slot = match r.era {
            Era::Traditional => 0,
            Era::Modern => 1,
            Era::Agnostic => {
                sums.entry(&r.category).or_default();
                continue;
            }
        };
        let Some(u) = unit_embedding(r, embeddings) else { continue };
        let acc = &mut sums.entry(&r.category).or_default()[slot];
        if acc.0.is_empty() {
            acc.0 = vec![0.0; u.len()];
        }
        for (a, x) in acc.0.iter_mut().zip(&u) {
            *a += x;
        }
        acc.1 += 1;
    }
    let mut categories = BTreeMap::new();
    let mut excluded = Vec::new();
    for (cat, [(t, nt), (m, nm)]) in sums {
        if nt == 0 || nm == 0 {
            excluded.push(cat.to_string());
            continue;
        }
        let trad = t.iter().map(|v| v / nt as f64).collect();
        let modern = m.iter().map(|v| v / nm as f64).collect();
        categories.insert(cat.to_string(), Prototype { trad, modern, n_trad: nt, n_mod: nm });
    }
    if categories.is_empty() {
        return Err(LeaningError::NoCategories(model.to_string()));
    }
    Ok(PrototypeSet { model: model.to_string(), categories, excluded })
}

/// `cos(x, mu_trad) - cos(x, mu_mod)`; positive means traditional.
pub fn leaning_score(x: &[f64], trad: &[f64], modern: &[f64]) -> Result<f64, LeaningError> {
    let ct = cosine(x, trad).ok_or(LeaningError::ZeroVector)?;
    let cm = cosine(x, modern).ok_or(LeaningError::ZeroVector)?;
    Ok(ct - cm)
}

/// Mean and standard error (sample sd over sqrt(n)).
pub fn aggregate_country(scores: &[f64]) -> Result<(f64, f64), LeaningError> {
    if scores.len() < 2 {
        return Err(LeaningError::TooFew(scores.len()));
    }
    let m = mean(scores).unwrap();
    let var = sample_variance(scores).unwrap();
    Ok((m, var.sqrt() / (scores.len() as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lean {
    Traditional,
    Modern,
}

impl Lean {
    /// A margin of exactly zero counts as traditional.
    pub fn of(margin: f64) -> Lean {
        if margin >= 0.0 { Lean::Traditional } else { Lean::Modern }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lean::Traditional => "traditional",
            Lean::Modern => "modern",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaningResult {
    pub model: String,
    pub country: Country,
    pub mean_margin: f64,
    pub se: f64,
    pub cos_trad: f64,
    pub cos_mod: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub lean: Lean,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeaningConfig {
    pub n_perm: usize,
    /// Score era-tagged images against prototypes that leave them out.
    pub holdout: bool,
}

impl Default for LeaningConfig {
    fn default() -> Self {
        LeaningConfig { n_perm: 999, holdout: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub image_id: String,
    pub country: Country,
    pub category: String,
    pub cos_trad: f64,
    pub cos_mod: f64,
    pub margin: f64,
}

fn leave_one_out(mean: &[f64], n: usize, u: &[f64]) -> Option<Vec<f64>> {
    (n >= 2).then(|| mean.iter().zip(u).map(|(m, x)| (m * n as f64 - x) / (n - 1) as f64).collect())
}

/// Scores every base image of `model` whose category has prototypes.
pub fn score_images(
    records: &[ImageRecord],
    embeddings: &EmbeddingSet,
    prototypes: &PrototypeSet,
    holdout: bool,
) -> Result<Vec<ImageScore>, LeaningError> {
    let mut out = Vec::new();
    for r in base_records(records, &prototypes.model) {
        let Some(p) = prototypes.categories.get(&r.category) else { continue };
        let Some(x) = unit_embedding(r, embeddings) else { continue };
        let (trad, modern) = match (holdout, r.era) {
            (true, Era::Traditional) => match leave_one_out(&p.trad, p.n_trad, &x) {
                Some(t) => (t, p.modern.clone()),
                None => continue,
            },
            (true, Era::Modern) => match leave_one_out(&p.modern, p.n_mod, &x) {
                Some(m) => (p.trad.clone(), m),
                None => continue,
            },
            _ => (p.trad.clone(), p.modern.clone()),
        };
        let ct = cosine(&x, &trad).ok_or(LeaningError::ZeroVector)?;
        let cm = cosine(&x, &modern).ok_or(LeaningError::ZeroVector)?;
        out.push(ImageScore {
            image_id: r.id.clone(),
            country: r.country,
            category: r.category.clone(),
            cos_trad: ct,
            cos_mod: cm,
            margin: ct - cm,
        });
    }
    Ok(out)
}

pub fn group_scores(scores: &[ImageScore]) -> GroupedScores {
    let mut g = GroupedScores::default();
    for s in scores {
        g.push(&s.category, s.country, s.margin);
    }
    g
}

pub fn permutation_test_country(
    data: &GroupedScores,
    target: Country,
    n_perm: usize,
    seed: u64,
) -> Result<f64, LeaningError> {
    if data.scores_of(target).is_empty() {
        return Err(LeaningError::TargetAbsent(target));
    }
    permutation_p(data, &TargetMean(target), n_perm, seed)
}

pub fn permutation_test_dispersion(data: &GroupedScores, n_perm: usize, seed: u64) -> Result<f64, LeaningError> {
    permutation_p(data, &CountryMeanDispersion, n_perm, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelLeaning {
    pub model: String,
    pub results: Vec<LeaningResult>,
    pub dispersion_p: f64,
    pub excluded_categories: Vec<String>,
    /// Countries skipped because fewer than two images were scored.
    pub skipped_countries: Vec<Country>,
    pub n_scored: usize,
}

pub fn analyze_model(
    records: &[ImageRecord],
    embeddings: &EmbeddingSet,
    model: &str,
    config: &LeaningConfig,
    seed: u64,
) -> Result<ModelLeaning, LeaningError> {
    let protos = build_prototypes(records, embeddings, model)?;
    let scores = score_images(records, embeddings, &protos, config.holdout)?;
    let grouped = group_scores(&scores);

    let mut per_country: BTreeMap<Country, Vec<&ImageScore>> = BTreeMap::new();
    for s in &scores {
        per_country.entry(s.country).or_default().push(s);
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut p_values = Vec::new();
    for (country, list) in &per_country {
        let margins: Vec<f64> = list.iter().map(|s| s.margin).collect();
        let Ok((m, se)) = aggregate_country(&margins) else {
            skipped.push(*country);
            continue;
        };
        let task_seed = derive_seed(seed, &["leaning-country", model, country.as_str()]);
        let p = permutation_test_country(&grouped, *country, config.n_perm, task_seed)?;
        p_values.push(p);
        let ct: Vec<f64> = list.iter().map(|s| s.cos_trad).collect();
        let cm: Vec<f64> = list.iter().map(|s| s.cos_mod).collect();
        rows.push(LeaningResult {
            model: model.to_string(),
            country: *country,
            mean_margin: m,
            se,
            cos_trad: mean(&ct).unwrap(),
            cos_mod: mean(&cm).unwrap(),
            p_value: p,
            q_value: p,
            lean: Lean::of(m),
            n: list.len(),
        });
    }
    let q = bh_fdr(&p_values)?;
    for (row, q) in rows.iter_mut().zip(q) {
        row.q_value = q;
    }
    let dispersion_p =
        permutation_test_dispersion(&grouped, config.n_perm, derive_seed(seed, &["leaning-dispersion", model]))?;
    Ok(ModelLeaning {
        model: model.to_string(),
        results: rows,
        dispersion_p,
        excluded_categories: protos.excluded,
        skipped_countries: skipped,
        n_scored: scores.len(),
    })
}

/// Runs [`analyze_model`] for every model with base generations.
pub fn analyze_all(
    records: &[ImageRecord],
    embeddings: &EmbeddingSet,
    config: &LeaningConfig,
    seed: u64,
) -> Result<Vec<ModelLeaning>, LeaningError> {
    let models: BTreeSet<&str> =
        records.iter().filter(|r| r.protocol == Protocol::T2iBase).map(|r| r.model.as_str()).collect();
    let out: Vec<Result<ModelLeaning, LeaningError>> = models
        .into_par_iter()
        .map(|m| analyze_model(records, embeddings, m, config, seed))
        .collect();
    out.into_iter().collect()
}

pub const TABLE_HEADER: &str = "model,country,mean_margin,se,cos_trad,cos_mod,p,q,lean";

/// Two-decimal fields in the layout of the leaning table.
pub fn table_fields(r: &LeaningResult) -> [String; 9] {
    [
        r.model.clone(),
        r.country.to_string(),
        signed2(r.mean_margin),
        format!("{:.2}", r.se),
        format!("{:.2}", r.cos_trad),
        format!("{:.2}", r.cos_mod),
        format!("{:.2}", r.p_value),
        format!("{:.2}", r.q_value),
        r.lean.as_str().to_string(),
    ]
}

pub fn table_row(r: &LeaningResult) -> String {
    table_fields(r).join(",")
}

/// Two decimals with an explicit sign; values that round to zero print as `0.00`.
pub fn signed2(v: f64) -> String {
    let s = format!("{v:+.2}");
    if s == "+0.00" || s == "-0.00" { "0.00".to_string() } else { s }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingMatrix, EmbeddingRef};

    fn rec(id: &str, country: Country, category: &str, era: Era, row: u64) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            model: "m".into(),
            country,
            category: category.into(),
            subcategory: "s".into(),
            era,
            protocol: Protocol::T2iBase,
            step: 0,
            prompt: String::new(),
            variant: row as u32,
            embedding_ref: EmbeddingRef { file_id: "e".into(), row },
        }
    }

    #[test]
    fn prototypes_are_unrenormalized_means() {
        let emb: EmbeddingSet =
            [EmbeddingMatrix::new("e", 4, 2, vec![1., 0., 0., 2., 0., 1., 3., 3.]).unwrap()].into_iter().collect();
        let records = vec![
            rec("a", Country::China, "Food", Era::Traditional, 0),
            rec("b", Country::China, "Food", Era::Traditional, 1),
            rec("c", Country::India, "Food", Era::Modern, 2),
            rec("d", Country::India, "Art", Era::Traditional, 3),
        ];
        let p = build_prototypes(&records, &emb, "m").unwrap();
        assert_eq!(p.categories["Food"].trad, vec![0.5, 0.5]);
        assert_eq!(p.categories["Food"].modern, vec![0.0, 1.0]);
        assert_eq!(p.excluded, vec!["Art".to_string()]);
        assert_eq!(build_prototypes(&records[..1], &emb, "m"), Err(LeaningError::NoCategories("m".into())));
    }

    #[test]
    fn leaning_score_examples() {
        let s = leaning_score(&[0.9, 0.1], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let expect = 0.9 / 0.82f64.sqrt() - 0.1 / 0.82f64.sqrt();
        assert!((s - expect).abs() < 1e-12);
        assert!((s - 0.8835).abs() < 1e-3);
        assert_eq!(leaning_score(&[1.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(leaning_score(&[2.0, 0.0], &[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(leaning_score(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]), Err(LeaningError::ZeroVector));
    }

    #[test]
    fn aggregate_examples() {
        let (m, se) = aggregate_country(&[0.1, 0.1, 0.1]).unwrap();
        assert!((m - 0.1).abs() < 1e-15 && se.abs() < 1e-15);
        let (m, se) = aggregate_country(&[-0.08, -0.04]).unwrap();
        assert!((m + 0.06).abs() < 1e-12);
        assert!((se - 0.02).abs() < 1e-12);
        assert_eq!(aggregate_country(&[1.0]), Err(LeaningError::TooFew(1)));
    }

    #[test]
    fn zero_margin_leans_traditional() {
        assert_eq!(Lean::of(0.0), Lean::Traditional);
        assert_eq!(Lean::of(-1e-9), Lean::Modern);
        assert_eq!(signed2(-0.004), "0.00");
        assert_eq!(signed2(0.04), "+0.04");
    }

    #[test]
    fn identical_scores_give_p_one() {
        let mut g = GroupedScores::default();
        for c in [Country::China, Country::India, Country::Kenya] {
            for _ in 0..3 {
                g.push("Food", c, 0.25);
            }
        }
        assert_eq!(permutation_test_country(&g, Country::China, 999, 1).unwrap(), 1.0);
        assert_eq!(permutation_test_dispersion(&g, 999, 1).unwrap(), 1.0);
        assert_eq!(exact_p(&g, &CountryMeanDispersion).unwrap(), 1.0);
    }

    #[test]
    fn permutation_errors() {
        let mut g = GroupedScores::default();
        g.push("Food", Country::China, 0.1);
        g.push("Food", Country::China, 0.2);
        assert_eq!(permutation_test_dispersion(&g, 999, 0), Err(LeaningError::InsufficientGroups));
        g.push("Food", Country::Kenya, 0.3);
        assert_eq!(permutation_test_dispersion(&g, 50, 0), Err(LeaningError::TooFewPermutations(50)));
        assert_eq!(permutation_test_country(&g, Country::India, 999, 0), Err(LeaningError::TargetAbsent(Country::India)));
    }

    #[test]
    fn analyze_model_end_to_end() {
        // Two categories, each with a traditional and a modern direction; China sits near traditional.
        let mut values = Vec::new();
        let mut records = Vec::new();
        let mut row = 0u64;
        for (cat, t, m) in [("Food", [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), ("Art", [0.0, 0.0, 1.0], [0.0, 1.0, 0.0])] {
            for (era, v) in [(Era::Traditional, t), (Era::Modern, m)] {
                values.extend(v.iter().map(|x| *x as f32));
                records.push(rec(&format!("{cat}-{era:?}"), Country::CountryAgnostic, cat, era, row));
                row += 1;
            }
            for (country, w) in [(Country::China, 0.9), (Country::UnitedStates, 0.2)] {
                for j in 0..3 {
                    let jitter = 0.01 * j as f64;
                    let v: Vec<f64> = t.iter().zip(&m).map(|(a, b)| w * a + (1.0 - w) * b + jitter).collect();
                    values.extend(v.iter().map(|x| *x as f32));
                    records.push(rec(&format!("{cat}-{country}-{j}"), country, cat, Era::Agnostic, row));
                    row += 1;
                }
            }
        }
        let emb: EmbeddingSet = [EmbeddingMatrix::new("e", row as usize, 3, values).unwrap()].into_iter().collect();
        let cfg = LeaningConfig::default();
        let a = analyze_model(&records, &emb, "m", &cfg, 3).unwrap();
        let b = analyze_model(&records, &emb, "m", &cfg, 3).unwrap();
        assert_eq!(a, b);
        let china = a.results.iter().find(|r| r.country == Country::China).unwrap();
        let us = a.results.iter().find(|r| r.country == Country::UnitedStates).unwrap();
        assert_eq!(china.lean, Lean::Traditional);
        assert_eq!(us.lean, Lean::Modern);
        for r in &a.results {
            assert!(r.q_value >= r.p_value && r.p_value > 0.0 && r.p_value <= 1.0);
        }
        assert!(table_row(china).starts_with("m,China,+"));
    }
}
