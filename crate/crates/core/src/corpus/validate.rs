use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use super::types::*;
use super::EmbeddingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Fatal,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: &'static str,
    pub subject: String,
    pub message: String,
}

/// Cross-table integrity findings for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_fatal(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Fatal)
    }

    pub fn fatal(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Fatal)
    }

    fn push(&mut self, severity: Severity, code: &'static str, subject: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity,
            code,
            subject: subject.into(),
            message: message.into(),
        });
    }
}

/// Everything ingested for one analysis run.
#[derive(Debug, Clone, Default)]
pub struct RunInputs {
    pub records: Vec<ImageRecord>,
    pub embeddings: EmbeddingSet,
    pub scores: Vec<MetricScoreRow>,
    pub answers: Vec<AnswerRecord>,
    pub ratings: Vec<RatingRecord>,
    pub gold_items: Vec<GoldItem>,
    pub gold_responses: Vec<GoldResponse>,
    pub demographics: Vec<DemographicLabel>,
}

pub fn validate_run(inputs: &RunInputs) -> ValidationReport {
    use Severity::*;
    let mut report = ValidationReport::default();

    let mut by_id: HashMap<&str, &ImageRecord> = HashMap::new();
    let mut keys = HashSet::new();
    for r in &inputs.records {
        if by_id.insert(r.id.as_str(), r).is_some() {
            report.push(Fatal, "duplicate_id", &r.id, "image id appears more than once");
        }
        if !keys.insert(r.key()) {
            report.push(Fatal, "duplicate_key", &r.id, "full image key appears more than once");
        }
        if let Err(msg) = r.check_invariants() {
            report.push(Fatal, "image_invariant", &r.id, msg);
        }
        if inputs.embeddings.resolve(&r.embedding_ref).is_none() {
            report.push(
                Fatal,
                "dangling_embedding",
                &r.id,
                format!("{}:{} does not resolve", r.embedding_ref.file_id, r.embedding_ref.row),
            );
        }
    }

    if !inputs.embeddings.is_empty() && inputs.embeddings.dimension().is_none() {
        let dims: Vec<String> = inputs
            .embeddings
            .iter()
            .map(|m| format!("{}={}", m.file_id, m.d))
            .collect();
        report.push(Fatal, "dimension_mismatch", "embeddings", dims.join(", "));
    }

    for s in &inputs.scores {
        match by_id.get(s.image_id.as_str()) {
            None => report.push(Warning, "orphan_score", &s.image_id, "score for unknown image"),
            Some(img) if s.metric == Metric::DreamsimDelta && img.step == 0 => report.push(
                Fatal,
                "dreamsim_at_base",
                &s.image_id,
                "dreamsim_delta requires step >= 1",
            ),
            _ => {}
        }
        if !s.value.is_finite() {
            report.push(Fatal, "non_finite_score", &s.image_id, "metric value is not finite");
        }
    }

    for a in &inputs.answers {
        if a.is_negative_check && a.expected != YesNo::No {
            report.push(
                Fatal,
                "negative_check_polarity",
                format!("{}/{}", a.image_id, a.question_id),
                "negative check must expect \"no\"",
            );
        }
        if !by_id.contains_key(a.image_id.as_str()) {
            report.push(Warning, "orphan_answer", &a.image_id, "answer for unknown image");
        }
    }

    let mut tasks: BTreeMap<(&str, &str), (usize, usize, usize)> = BTreeMap::new();
    for r in &inputs.ratings {
        let subject = format!("{}/{}", r.rater_id, r.task_id);
        if !r.likert_in_range() {
            report.push(Fatal, "likert_range", &subject, "Likert values must be in 1..=5");
        }
        if r.best_of_task && r.worst_of_task {
            report.push(Fatal, "best_equals_worst", &subject, format!("{} is both best and worst", r.image_id));
        }
        match by_id.get(r.image_id.as_str()) {
            None => report.push(Fatal, "rating_unknown_image", &subject, format!("unknown image {}", r.image_id)),
            Some(img) if SurveyStep::from_step(img.step).is_none() => report.push(
                Fatal,
                "rating_step",
                &subject,
                format!("image {} is at step {}, not a survey candidate", r.image_id, img.step),
            ),
            _ => {}
        }
        let e = tasks.entry((r.rater_id.as_str(), r.task_id.as_str())).or_default();
        e.0 += 1;
        e.1 += r.best_of_task as usize;
        e.2 += r.worst_of_task as usize;
    }
    for ((rater, task), (n, best, worst)) in tasks {
        let subject = format!("{rater}/{task}");
        if best != 1 {
            report.push(Fatal, "best_count", &subject, format!("{best} records marked best"));
        }
        if worst != 1 {
            report.push(Fatal, "worst_count", &subject, format!("{worst} records marked worst"));
        }
        if n != 4 {
            report.push(Warning, "candidate_count", &subject, format!("{n} rated candidates, expected 4"));
        }
    }

    for l in &inputs.demographics {
        if !by_id.contains_key(l.image_id.as_str()) {
            report.push(Warning, "orphan_label", &l.image_id, "demographic label for unknown image");
        }
    }

    report
}
