//! Human ratings: quality scores per edit step and rater quality control.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Country, GoldItem, GoldResponse, ImageRecord, RatingRecord, SurveyStep};
use crate::vecmath::{mean, median};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HumanEvalError {
    #[error("Likert value {0} outside 1..=5")]
    OutOfRange(u8),
    #[error("{model}/{country}: no ratings at step {step}")]
    MissingStep { model: String, country: Country, step: SurveyStep },
}

/// Human quality score: mean of the image-quality and cultural-representation ratings.
pub fn hqs(iq: u8, cr: u8) -> Result<f64, HumanEvalError> {
    for v in [iq, cr] {
        if !(1..=5).contains(&v) {
            return Err(HumanEvalError::OutOfRange(v));
        }
    }
    Ok((iq as f64 + cr as f64) / 2.0)
}

/// Percent change from `base` to `last`.
pub fn change_pct(base: f64, last: f64) -> f64 {
    (last - base) / base * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HqsSummary {
    pub model: String,
    pub country: Country,
    /// Pooled mean over all ratings at each step.
    pub step_means: BTreeMap<SurveyStep, f64>,
    pub step_counts: BTreeMap<SurveyStep, usize>,
    pub change_pct: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    /// Reported alongside, never mixed into the quality score.
    pub prompt_alignment_mean: Option<f64>,
}

fn rated_steps<'a>(
    ratings: &'a [RatingRecord],
    records: &'a [ImageRecord],
) -> impl Iterator<Item = (&'a RatingRecord, &'a ImageRecord, SurveyStep)> {
    let by_id: BTreeMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    ratings.iter().filter_map(move |r| {
        let img = *by_id.get(r.image_id.as_str())?;
        Some((r, img, SurveyStep::from_step(img.step)?))
    })
}

pub fn summarize_hqs(
    ratings: &[RatingRecord],
    records: &[ImageRecord],
    model: &str,
    country: Country,
) -> Result<HqsSummary, HumanEvalError> {
    let mut per_step: BTreeMap<SurveyStep, Vec<f64>> = BTreeMap::new();
    let mut alignment = Vec::new();
    for (r, img, step) in rated_steps(ratings, records) {
        if img.model != model || img.country != country {
            continue;
        }
        per_step.entry(step).or_default().push(hqs(r.image_quality, r.cultural_representation)?);
        if let Some(pa) = r.prompt_alignment {
            alignment.push(pa as f64);
        }
    }
    for step in SurveyStep::ALL {
        if !per_step.contains_key(&step) {
            return Err(HumanEvalError::MissingStep { model: model.to_string(), country, step });
        }
    }
    let step_means: BTreeMap<SurveyStep, f64> = per_step.iter().map(|(s, v)| (*s, mean(v).unwrap())).collect();
    let base = step_means[&SurveyStep::Base];
    let last = step_means[&SurveyStep::Step5];
    Ok(HqsSummary {
        model: model.to_string(),
        country,
        step_counts: per_step.iter().map(|(s, v)| (*s, v.len())).collect(),
        change_pct: change_pct(base, last),
        final_: last,
        step_means,
        prompt_alignment_mean: mean(&alignment),
    })
}

/// Summaries for every (model, country) with ratings; cells missing a step are reported as errors.
pub fn summarize_all(
    ratings: &[RatingRecord],
    records: &[ImageRecord],
) -> (Vec<HqsSummary>, Vec<HumanEvalError>) {
    let cells: BTreeSet<(String, Country)> =
        rated_steps(ratings, records).map(|(_, img, _)| (img.model.clone(), img.country)).collect();
    let mut ok = Vec::new();
    let mut missing = Vec::new();
    for (model, country) in cells {
        match summarize_hqs(ratings, records, &model, country) {
            Ok(s) => ok.push(s),
            Err(e) => missing.push(e),
        }
    }
    (ok, missing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcKind {
    GoldFail,
    IdenticalRationale,
    Speed,
    Inconsistent,
}

impl QcKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QcKind::GoldFail => "gold_fail",
            QcKind::IdenticalRationale => "identical_rationale",
            QcKind::Speed => "speed",
            QcKind::Inconsistent => "inconsistent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct QcFlag {
    pub rater_id: String,
    pub kind: QcKind,
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    /// Median per-task time below this is flagged.
    pub speed_floor_ms: u64,
    pub identical_rationale_tasks: usize,
    pub inconsistent_tasks: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig { speed_floor_ms: 5000, identical_rationale_tasks: 3, inconsistent_tasks: 2 }
    }
}

/// Advisory quality-control flags; exclusion is left to a reviewer.
pub fn qc_scan(
    ratings: &[RatingRecord],
    gold_items: &[GoldItem],
    gold_responses: &[GoldResponse],
    config: &QcConfig,
) -> Vec<QcFlag> {
    let mut flags = Vec::new();

    let expected: BTreeMap<&str, &GoldItem> = gold_items.iter().map(|g| (g.task_id.as_str(), g)).collect();
    let mut failed: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for resp in gold_responses {
        if let Some(item) = expected.get(resp.task_id.as_str()) {
            if item.expected != resp.answer {
                failed.entry(&resp.rater_id).or_default().push(&resp.task_id);
            }
        }
    }
    for (rater, tasks) in failed {
        flags.push(QcFlag { rater_id: rater.into(), kind: QcKind::GoldFail, evidence: format!("tasks={}", tasks.join(";")) });
    }

    // rater -> task -> ratings
    let mut by_task: BTreeMap<&str, BTreeMap<&str, Vec<&RatingRecord>>> = BTreeMap::new();
    for r in ratings {
        by_task.entry(&r.rater_id).or_default().entry(&r.task_id).or_default().push(r);
    }
    for (rater, tasks) in &by_task {
        let mut rationales: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut elapsed = Vec::new();
        let mut inconsistent = Vec::new();
        for (task, rs) in tasks {
            for r in rs {
                if let Some(text) = r.rationale.as_deref().filter(|t| !t.trim().is_empty()) {
                    rationales.entry(text).or_default().insert(task);
                }
            }
            elapsed.push(rs.iter().map(|r| r.elapsed_ms).max().unwrap_or(0) as f64);
            let scores: Vec<(bool, f64)> = rs
                .iter()
                .filter_map(|r| hqs(r.image_quality, r.cultural_representation).ok().map(|h| (r.best_of_task, h)))
                .collect();
            if let Some((_, best)) = scores.iter().find(|(b, _)| *b) {
                let others: Vec<f64> = scores.iter().filter(|(b, _)| !*b).map(|(_, h)| *h).collect();
                if !others.is_empty() && others.iter().all(|h| best < h) {
                    inconsistent.push(*task);
                }
            }
        }
        for (text, ts) in rationales {
            if ts.len() >= config.identical_rationale_tasks {
                let list: Vec<&str> = ts.into_iter().collect();
                flags.push(QcFlag {
                    rater_id: rater.to_string(),
                    kind: QcKind::IdenticalRationale,
                    evidence: format!("text={text:?} tasks={}", list.join(";")),
                });
            }
        }
        if let Some(m) = median(&elapsed) {
            if m < config.speed_floor_ms as f64 {
                flags.push(QcFlag {
                    rater_id: rater.to_string(),
                    kind: QcKind::Speed,
                    evidence: format!("median_ms={m} floor_ms={} tasks={}", config.speed_floor_ms, elapsed.len()),
                });
            }
        }
        if inconsistent.len() >= config.inconsistent_tasks {
            flags.push(QcFlag {
                rater_id: rater.to_string(),
                kind: QcKind::Inconsistent,
                evidence: format!("tasks={}", inconsistent.join(";")),
            });
        }
    }
    flags.sort();
    flags
}
