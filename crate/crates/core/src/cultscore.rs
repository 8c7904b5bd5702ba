//! Culture-aware metric layer: yes/no answer aggregation, QA audit,
//! best/worst selection per edit chain, and agreement with human picks.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::{Answer, AnswerRecord, Axis, Country, ImageRecord, RatingRecord, SurveyStep, YesNo};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CultScoreError {
    #[error("no answers")]
    NoAnswers,
    #[error("answers mix images {0} and {1}")]
    MixedImages(String, String),
    #[error("task {task}: step {step} missing or without a cultural-representation score")]
    MissingStep { task: String, step: SurveyStep },
    #[error("no task is shared between metric and human selections")]
    NoOverlap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AxisCounts {
    pub image_quality: usize,
    pub cultural_representation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CultureScore {
    pub image_id: String,
    /// Absent when the axis has no non-abstain answers.
    pub iq_axis: Option<f64>,
    pub cr_axis: Option<f64>,
    /// Questions per axis, abstains included.
    pub n_questions: AxisCounts,
    pub abstain_rate: f64,
    /// Share of negative checks answered "no"; absent without answered negative checks.
    pub negative_check_pass_rate: Option<f64>,
}

fn matches(a: &AnswerRecord) -> Option<bool> {
    a.answered.as_yes_no().map(|v| v == a.expected)
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Polarity-match fraction per axis; abstains are excluded from both counts.
pub fn score_image(answers: &[AnswerRecord]) -> Result<CultureScore, CultScoreError> {
    let first = answers.first().ok_or(CultScoreError::NoAnswers)?;
    if let Some(other) = answers.iter().find(|a| a.image_id != first.image_id) {
        return Err(CultScoreError::MixedImages(first.image_id.clone(), other.image_id.clone()));
    }
    let mut hit = [0usize; 2];
    let mut answered = [0usize; 2];
    let mut asked = [0usize; 2];
    let mut abstains = 0;
    let (mut neg_pass, mut neg_total) = (0, 0);
    for a in answers {
        let axis = a.axis as usize;
        asked[axis] += 1;
        match matches(a) {
            None => abstains += 1,
            Some(m) => {
                answered[axis] += 1;
                hit[axis] += m as usize;
                if a.is_negative_check {
                    neg_total += 1;
                    neg_pass += (a.answered == Answer::No) as usize;
                }
            }
        }
    }
    let iq = Axis::ImageQuality as usize;
    let cr = Axis::CulturalRepresentation as usize;
    Ok(CultureScore {
        image_id: first.image_id.clone(),
        iq_axis: fraction(hit[iq], answered[iq]),
        cr_axis: fraction(hit[cr], answered[cr]),
        n_questions: AxisCounts { image_quality: asked[iq], cultural_representation: asked[cr] },
        abstain_rate: abstains as f64 / answers.len() as f64,
        negative_check_pass_rate: fraction(neg_pass, neg_total),
    })
}

/// Scores every image that has answers, in image-id order.
pub fn score_all(answers: &[AnswerRecord]) -> BTreeMap<String, CultureScore> {
    let mut by_image: BTreeMap<&str, Vec<AnswerRecord>> = BTreeMap::new();
    for a in answers {
        by_image.entry(&a.image_id).or_default().push(a.clone());
    }
    by_image
        .into_iter()
        .map(|(id, list)| (id.to_string(), score_image(&list).expect("grouped by image")))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AxisAudit {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A zero denominator forced one of the ratios to 0.
    pub degenerate: bool,
}

impl AxisAudit {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> AxisAudit {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        AxisAudit { tp, fp, fn_, tn, precision, recall, f1, degenerate: tp + fp == 0 || tp + fn_ == 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QaAudit {
    pub image_quality: AxisAudit,
    pub cultural_representation: AxisAudit,
}

/// Confusion-matrix audit with expected "yes" as the positive class; abstains are skipped.
pub fn qa_audit(answers: &[AnswerRecord]) -> QaAudit {
    let mut counts = [[0usize; 4]; 2];
    for a in answers {
        let Some(pred) = a.answered.as_yes_no() else { continue };
        let slot = match (a.expected, pred) {
            (YesNo::Yes, YesNo::Yes) => 0,
            (YesNo::No, YesNo::Yes) => 1,
            (YesNo::Yes, YesNo::No) => 2,
            (YesNo::No, YesNo::No) => 3,
        };
        counts[a.axis as usize][slot] += 1;
    }
    let audit = |c: [usize; 4]| AxisAudit::from_counts(c[0], c[1], c[2], c[3]);
    QaAudit {
        image_quality: audit(counts[Axis::ImageQuality as usize]),
        cultural_representation: audit(counts[Axis::CulturalRepresentation as usize]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionOutcome {
    pub task_id: String,
    pub best_step: SurveyStep,
    pub worst_step: SurveyStep,
    pub rationale: String,
    /// The best or worst pick needed a tie-break beyond the cultural axis.
    pub tie_broken: bool,
}

/// Ranks steps by cultural representation, then image quality; ties go to the
/// earlier step for best and the later step for worst.
pub fn select_best_worst(
    task_id: &str,
    scores: &BTreeMap<SurveyStep, CultureScore>,
) -> Result<SelectionOutcome, CultScoreError> {
    let mut rows = Vec::with_capacity(4);
    for step in SurveyStep::ALL {
        let cr = scores.get(&step).and_then(|s| s.cr_axis);
        let Some(cr) = cr else {
            return Err(CultScoreError::MissingStep { task: task_id.to_string(), step });
        };
        rows.push((step, cr, scores[&step].iq_axis.unwrap_or(f64::NEG_INFINITY)));
    }
    let key = |r: &(SurveyStep, f64, f64)| (r.1, r.2);
    let cmp = |a: &(f64, f64), b: &(f64, f64)| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1));
    // rows are in step order, so strict comparisons keep the earliest best and latest worst
    let mut best = rows[0];
    let mut worst = rows[0];
    for r in &rows[1..] {
        if cmp(&key(r), &key(&best)).is_gt() {
            best = *r;
        }
        if cmp(&key(r), &key(&worst)).is_le() {
            worst = *r;
        }
    }
    let cr_ties = |target: f64| rows.iter().filter(|r| r.1 == target).count() > 1;
    let tie_broken = cr_ties(best.1) || cr_ties(worst.1);
    let runner_up = rows.iter().filter(|r| r.0 != best.0).map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let next_lowest = rows.iter().filter(|r| r.0 != worst.0).map(|r| r.1).fold(f64::INFINITY, f64::min);
    let rationale = format!(
        "best step {} (cr {:.3}, iq {:.3}) leads by {:.3} cr; worst step {} (cr {:.3}, iq {:.3}) trails by {:.3} cr{}",
        best.0,
        best.1,
        best.2,
        best.1 - runner_up,
        worst.0,
        worst.1,
        worst.2,
        next_lowest - worst.1,
        if tie_broken { "; tie broken by image quality then step order" } else { "" }
    );
    Ok(SelectionOutcome {
        task_id: task_id.to_string(),
        best_step: best.0,
        worst_step: worst.0,
        rationale,
        tie_broken,
    })
}

/// Task id -> step -> image id, from the images referenced by ratings.
pub fn task_images(
    ratings: &[RatingRecord],
    records: &[ImageRecord],
) -> BTreeMap<String, BTreeMap<SurveyStep, String>> {
    let by_id: BTreeMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out: BTreeMap<String, BTreeMap<SurveyStep, String>> = BTreeMap::new();
    for r in ratings {
        let Some(step) = by_id.get(r.image_id.as_str()).and_then(|i| SurveyStep::from_step(i.step)) else {
            continue;
        };
        out.entry(r.task_id.clone()).or_default().insert(step, r.image_id.clone());
    }
    out
}

/// Metric best/worst per human task. Tasks that cannot be scored are returned separately.
pub fn metric_selections(
    tasks: &BTreeMap<String, BTreeMap<SurveyStep, String>>,
    scores: &BTreeMap<String, CultureScore>,
) -> (Vec<SelectionOutcome>, Vec<CultScoreError>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (task, images) in tasks {
        let per_step: BTreeMap<SurveyStep, CultureScore> = images
            .iter()
            .filter_map(|(step, id)| scores.get(id).map(|s| (*step, s.clone())))
            .collect();
        match select_best_worst(task, &per_step) {
            Ok(s) => ok.push(s),
            Err(e) => skipped.push(e),
        }
    }
    (ok, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    Best,
    Worst,
}

/// One human pick: which step a rater chose in a task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanPick {
    pub rater_id: String,
    pub task_id: String,
    pub step: SurveyStep,
}

pub fn human_picks(ratings: &[RatingRecord], records: &[ImageRecord], kind: SelectionKind) -> Vec<HumanPick> {
    let steps: BTreeMap<&str, u8> = records.iter().map(|r| (r.id.as_str(), r.step)).collect();
    ratings
        .iter()
        .filter(|r| match kind {
            SelectionKind::Best => r.best_of_task,
            SelectionKind::Worst => r.worst_of_task,
        })
        .filter_map(|r| {
            let step = SurveyStep::from_step(*steps.get(r.image_id.as_str())?)?;
            Some(HumanPick { rater_id: r.rater_id.clone(), task_id: r.task_id.clone(), step })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    /// Share of joined rater-task pairs whose pick equals the metric pick.
    pub rate: f64,
    /// Joined rater-task pairs.
    pub count: usize,
    /// Share of joined tasks whose modal human pick equals the metric pick.
    pub modal_rate: f64,
    pub tasks: usize,
    /// Tasks whose modal pick was tied (scored as disagreement).
    pub modal_ties: usize,
}

pub fn agreement_rate(
    metric: &[SelectionOutcome],
    human: &[HumanPick],
    kind: SelectionKind,
) -> Result<Agreement, CultScoreError> {
    let chosen: BTreeMap<&str, SurveyStep> = metric
        .iter()
        .map(|m| {
            let step = match kind {
                SelectionKind::Best => m.best_step,
                SelectionKind::Worst => m.worst_step,
            };
            (m.task_id.as_str(), step)
        })
        .collect();
    let mut agree = 0usize;
    let mut count = 0usize;
    let mut votes: BTreeMap<&str, BTreeMap<SurveyStep, usize>> = BTreeMap::new();
    for h in human {
        let Some(m) = chosen.get(h.task_id.as_str()) else { continue };
        count += 1;
        agree += (*m == h.step) as usize;
        *votes.entry(&h.task_id).or_default().entry(h.step).or_default() += 1;
    }
    if count == 0 {
        return Err(CultScoreError::NoOverlap);
    }
    let mut modal_agree = 0;
    let mut ties = 0;
    for (task, v) in &votes {
        let top = v.values().max().copied().unwrap_or(0);
        let leaders: Vec<SurveyStep> = v.iter().filter(|(_, c)| **c == top).map(|(s, _)| *s).collect();
        if leaders.len() > 1 {
            ties += 1;
        } else if leaders[0] == chosen[task] {
            modal_agree += 1;
        }
    }
    Ok(Agreement {
        rate: agree as f64 / count as f64,
        count,
        modal_rate: modal_agree as f64 / votes.len() as f64,
        tasks: votes.len(),
        modal_ties: ties,
    })
}

/// Agreement per (country, model) cell, for tasks whose images share one model and country.
pub fn agreement_table(
    metric: &[SelectionOutcome],
    human: &[HumanPick],
    tasks: &BTreeMap<String, BTreeMap<SurveyStep, String>>,
    records: &[ImageRecord],
    kind: SelectionKind,
) -> BTreeMap<(Country, String), Agreement> {
    let by_id: BTreeMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut cell_of: BTreeMap<&str, (Country, String)> = BTreeMap::new();
    for (task, images) in tasks {
        let cells: BTreeSet<(Country, &str)> = images
            .values()
            .filter_map(|id| by_id.get(id.as_str()).map(|r| (r.country, r.model.as_str())))
            .collect();
        if let [(c, m)] = cells.into_iter().collect::<Vec<_>>()[..] {
            cell_of.insert(task, (c, m.to_string()));
        }
    }
    let mut groups: BTreeMap<(Country, String), (Vec<SelectionOutcome>, Vec<HumanPick>)> = BTreeMap::new();
    for m in metric {
        if let Some(cell) = cell_of.get(m.task_id.as_str()) {
            groups.entry(cell.clone()).or_default().0.push(m.clone());
        }
    }
    for h in human {
        if let Some(cell) = cell_of.get(h.task_id.as_str()) {
            groups.entry(cell.clone()).or_default().1.push(h.clone());
        }
    }
    groups
        .into_iter()
        .filter_map(|(cell, (m, h))| agreement_rate(&m, &h, kind).ok().map(|a| (cell, a)))
        .collect()
}
