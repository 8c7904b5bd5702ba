//! Metric trajectories over edit steps, metric/human correlations,
//! perceptual saturation and demographic tabulation.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::{Country, DemographicLabel, ImageRecord, Metric, MetricScoreRow, Protocol, RatingRecord};
use crate::humaneval::{change_pct, hqs};
use crate::vecmath::mean;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("{model}/{country}/{metric}: no scores at step {step}")]
    MissingStep { model: String, country: Country, metric: &'static str, step: u8 },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, found {0}")]
    TooFew(usize),
    #[error("a series has zero variance")]
    DegenerateVariance,
    #[error("delta series needs at least two non-empty steps")]
    EmptySeries,
    #[error("early deltas average to zero")]
    ZeroBaseline,
    #[error("occupation {0} has no labels")]
    EmptyOccupation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub model: String,
    pub country: Country,
    pub metric: Metric,
    pub protocol: Protocol,
    pub step_means: BTreeMap<u8, f64>,
    pub change_pct: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

/// Per-step metric means of one (model, country) edit chain family.
pub fn trajectory(
    scores: &[MetricScoreRow],
    records: &[ImageRecord],
    model: &str,
    country: Country,
    metric: Metric,
    protocol: Protocol,
) -> Result<Trajectory, AnalyticsError> {
    let steps: BTreeMap<&str, u8> = records
        .iter()
        .filter(|r| r.model == model && r.country == country && r.protocol == protocol)
        .map(|r| (r.id.as_str(), r.step))
        .collect();
    let mut per_step: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.metric == metric) {
        if let Some(step) = steps.get(s.image_id.as_str()) {
            per_step.entry(*step).or_default().push(s.value);
        }
    }
    let first = if metric == Metric::DreamsimDelta { 1 } else { 0 };
    for step in [first, 5] {
        if !per_step.contains_key(&step) {
            return Err(AnalyticsError::MissingStep {
                model: model.to_string(),
                country,
                metric: metric.as_str(),
                step,
            });
        }
    }
    let step_means: BTreeMap<u8, f64> = per_step.iter().map(|(s, v)| (*s, mean(v).unwrap())).collect();
    let base = step_means[&first];
    let last = step_means[&5];
    Ok(Trajectory {
        model: model.to_string(),
        country,
        metric,
        protocol,
        change_pct: change_pct(base, last),
        final_: last,
        step_means,
    })
}

/// Trajectories for every (model, country) cell that has the metric under `protocol`.
pub fn all_trajectories(
    scores: &[MetricScoreRow],
    records: &[ImageRecord],
    metric: Metric,
    protocol: Protocol,
) -> (Vec<Trajectory>, Vec<AnalyticsError>) {
    let scored: BTreeSet<&str> = scores.iter().filter(|s| s.metric == metric).map(|s| s.image_id.as_str()).collect();
    let cells: BTreeSet<(&str, Country)> = records
        .iter()
        .filter(|r| r.protocol == protocol && scored.contains(r.id.as_str()))
        .map(|r| (r.model.as_str(), r.country))
        .collect();
    let mut ok = Vec::new();
    let mut errs = Vec::new();
    for (m, c) in cells {
        match trajectory(scores, records, m, c, metric, protocol) {
            Ok(t) => ok.push(t),
            Err(e) => errs.push(e),
        }
    }
    (ok, errs)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalyticsError> {
    if xs.len() != ys.len() {
        return Err(AnalyticsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(AnalyticsError::TooFew(xs.len()));
    }
    let mx = mean(xs).unwrap();
    let my = mean(ys).unwrap();
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricHqsCorrelation {
    pub metric: Metric,
    pub r: f64,
    /// Images with both a metric value and at least one rating.
    pub n: usize,
}

/// Correlation between a metric and the per-image mean HQS.
pub fn metric_hqs_correlation(
    scores: &[MetricScoreRow],
    ratings: &[RatingRecord],
    metric: Metric,
) -> Result<MetricHqsCorrelation, AnalyticsError> {
    let mut per_image: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in ratings {
        if let Ok(h) = hqs(r.image_quality, r.cultural_representation) {
            per_image.entry(&r.image_id).or_default().push(h);
        }
    }
    let mut metric_values: BTreeMap<&str, f64> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.metric == metric) {
        metric_values.insert(&s.image_id, s.value);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = metric_values
        .iter()
        .filter_map(|(id, v)| per_image.get(id).map(|h| (*v, mean(h).unwrap())))
        .unzip();
    Ok(MetricHqsCorrelation { metric, r: pearson(&xs, &ys)?, n: xs.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Saturation {
    pub early_mean: f64,
    pub late_mean: f64,
    pub reduction_pct: f64,
}

/// `delta_series[i]` holds the perceptual distances of the i-th edit step.
pub fn saturation(delta_series: &[Vec<f64>]) -> Result<Saturation, AnalyticsError> {
    let steps: Vec<&Vec<f64>> = delta_series.iter().filter(|s| !s.is_empty()).collect();
    if steps.len() < 2 {
        return Err(AnalyticsError::EmptySeries);
    }
    let early = mean(steps[0]).unwrap();
    let late = mean(steps[steps.len() - 1]).unwrap();
    if early == 0.0 {
        return Err(AnalyticsError::ZeroBaseline);
    }
    Ok(Saturation { early_mean: early, late_mean: late, reduction_pct: (early - late) / early * 100.0 })
}

/// DreamSim deltas of a protocol grouped by step 1..=5.
pub fn dreamsim_series(scores: &[MetricScoreRow], records: &[ImageRecord], protocol: Protocol) -> Vec<Vec<f64>> {
    let steps: BTreeMap<&str, u8> =
        records.iter().filter(|r| r.protocol == protocol).map(|r| (r.id.as_str(), r.step)).collect();
    let mut out = vec![Vec::new(); 5];
    for s in scores.iter().filter(|s| s.metric == Metric::DreamsimDelta) {
        if let Some(&step) = steps.get(s.image_id.as_str()) {
            if (1..=5).contains(&step) {
                out[step as usize - 1].push(s.value);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicAxis {
    Gender,
    SkinTone,
}

impl DemographicAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            DemographicAxis::Gender => "gender",
            DemographicAxis::SkinTone => "skin_tone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemographicTable {
    pub occupation: String,
    pub axis: DemographicAxis,
    pub counts: BTreeMap<String, usize>,
    pub percentages: BTreeMap<String, f64>,
}

/// Stacked class percentages per occupation and axis. Every occupation in
/// `expected` must have labels.
pub fn demographic_table(
    labels: &[DemographicLabel],
    expected: &[&str],
) -> Result<Vec<DemographicTable>, AnalyticsError> {
    let mut grouped: BTreeMap<&str, [BTreeMap<String, usize>; 2]> = BTreeMap::new();
    for l in labels {
        let g = grouped.entry(&l.occupation).or_default();
        *g[0].entry(l.gender.clone()).or_default() += 1;
        *g[1].entry(l.skin_tone.clone()).or_default() += 1;
    }
    if let Some(missing) = expected.iter().find(|o| !grouped.contains_key(**o)) {
        return Err(AnalyticsError::EmptyOccupation(missing.to_string()));
    }
    let mut out = Vec::new();
    for (occupation, [gender, skin]) in grouped {
        for (axis, counts) in [(DemographicAxis::Gender, gender), (DemographicAxis::SkinTone, skin)] {
            let total: usize = counts.values().sum();
            let percentages = counts.iter().map(|(k, v)| (k.clone(), *v as f64 * 100.0 / total as f64)).collect();
            out.push(DemographicTable { occupation: occupation.to_string(), axis, counts, percentages });
        }
    }
    Ok(out)
}

/// Demographic tables per model, joining labels to image records.
pub fn demographic_tables_by_model(
    labels: &[DemographicLabel],
    records: &[ImageRecord],
) -> BTreeMap<String, Vec<DemographicTable>> {
    let model_of: BTreeMap<&str, &str> = records.iter().map(|r| (r.id.as_str(), r.model.as_str())).collect();
    let mut per_model: BTreeMap<&str, Vec<DemographicLabel>> = BTreeMap::new();
    for l in labels {
        if let Some(m) = model_of.get(l.image_id.as_str()) {
            per_model.entry(m).or_default().push(l.clone());
        }
    }
    per_model
        .into_iter()
        .map(|(m, ls)| (m.to_string(), demographic_table(&ls, &[]).expect("no expected occupations")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingRef, Era};

    fn image(id: &str, step: u8) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            model: "m".into(),
            country: Country::Kenya,
            category: "Food".into(),
            subcategory: "Dish".into(),
            era: Era::Agnostic,
            protocol: Protocol::Multiloop,
            step,
            prompt: String::new(),
            variant: 0,
            embedding_ref: EmbeddingRef { file_id: "e".into(), row: 0 },
        }
    }

    fn score(id: &str, metric: Metric, value: f64) -> MetricScoreRow {
        MetricScoreRow { image_id: id.into(), metric, value }
    }

    #[test]
    fn trajectory_examples() {
        let records: Vec<_> = (0..=5).map(|s| image(&format!("i{s}"), s)).collect();
        let flat: Vec<_> = (0..=5).map(|s| score(&format!("i{s}"), Metric::Clip, 2.0)).collect();
        let t = trajectory(&flat, &records, "m", Country::Kenya, Metric::Clip, Protocol::Multiloop).unwrap();
        assert_eq!((t.change_pct, t.final_), (0.0, 2.0));

        let halving: Vec<_> =
            (0..=5).map(|s| score(&format!("i{s}"), Metric::Clip, 2.0 - s as f64 / 5.0)).collect();
        let t = trajectory(&halving, &records, "m", Country::Kenya, Metric::Clip, Protocol::Multiloop).unwrap();
        assert!((t.change_pct + 50.0).abs() < 1e-12 && (t.final_ - 1.0).abs() < 1e-12);

        let err = trajectory(&halving[..5], &records, "m", Country::Kenya, Metric::Clip, Protocol::Multiloop);
        assert!(matches!(err, Err(AnalyticsError::MissingStep { step: 5, .. })));
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&xs, &[1.0; 4]), Err(AnalyticsError::DegenerateVariance));
        assert_eq!(pearson(&xs, &[1.0]), Err(AnalyticsError::LengthMismatch(4, 1)));
    }

    #[test]
    fn saturation_examples() {
        let s = saturation(&[vec![0.1, 0.1], vec![0.1], vec![0.1]]).unwrap();
        assert_eq!(s.reduction_pct, 0.0);
        let s = saturation(&[vec![0.16, 0.20], vec![0.1], vec![0.02, 0.04]]).unwrap();
        assert!((s.reduction_pct - (0.18 - 0.03) / 0.18 * 100.0).abs() < 1e-9);
        assert!((s.reduction_pct - 83.3).abs() < 0.05);
        assert_eq!(saturation(&[vec![0.1], vec![]]), Err(AnalyticsError::EmptySeries));
        assert_eq!(saturation(&[vec![0.0], vec![0.1]]), Err(AnalyticsError::ZeroBaseline));
    }

    fn label(occ: &str, gender: &str, skin: &str) -> DemographicLabel {
        DemographicLabel { image_id: String::new(), occupation: occ.into(), gender: gender.into(), skin_tone: skin.into() }
    }

    #[test]
    fn demographic_examples() {
        let all_male: Vec<_> = (0..10).map(|_| label("nurse", "male", "light")).collect();
        let t = demographic_table(&all_male, &["nurse"]).unwrap();
        assert_eq!(t[0].percentages["male"], 100.0);

        let mut mixed: Vec<_> = (0..6).map(|_| label("cook", "male", "dark")).collect();
        mixed.extend((0..4).map(|_| label("cook", "female", "light")));
        let t = demographic_table(&mixed, &[]).unwrap();
        assert_eq!((t[0].percentages["male"], t[0].percentages["female"]), (60.0, 40.0));
        assert_eq!(t[1].axis, DemographicAxis::SkinTone);
        assert_eq!(demographic_table(&mixed, &["pilot"]), Err(AnalyticsError::EmptyOccupation("pilot".into())));
    }

    #[test]
    fn correlation_joins_images() {
        let mk = |id: &str, iq: u8| RatingRecord {
            rater_id: "r".into(),
            task_id: "t".into(),
            image_id: id.into(),
            image_quality: iq,
            cultural_representation: iq,
            prompt_alignment: None,
            best_of_task: false,
            worst_of_task: false,
            rationale: None,
            elapsed_ms: 0,
        };
        let ratings = vec![mk("a", 1), mk("b", 3), mk("c", 5)];
        let scores = vec![score("a", Metric::Aesthetic, 4.0), score("b", Metric::Aesthetic, 5.0),
            score("c", Metric::Aesthetic, 6.0), score("z", Metric::Aesthetic, 1.0)];
        let c = metric_hqs_correlation(&scores, &ratings, Metric::Aesthetic).unwrap();
        assert_eq!(c.n, 3);
        assert!((c.r - 1.0).abs() < 1e-12);
    }
}
