use std::collections::{BTreeMap, BTreeSet};

use ecb_core::corpus::{Country, GoldItem, ImageRecord, Protocol, SurveyStep, YesNo};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Multiloop,
    AttributeAdd,
}

/// Known-answer check attached to a task by the study operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldCheck {
    pub question: String,
    pub expected: YesNo,
}

/// Operator-authored task, before any per-rater randomization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDefinition {
    pub task_id: String,
    pub country: Country,
    pub kind: TaskKind,
    pub model: String,
    #[serde(default)]
    pub prompt: String,
    pub candidates: BTreeMap<SurveyStep, String>,
    #[serde(default)]
    pub gold: Option<GoldCheck>,
}

impl TaskDefinition {
    pub fn check(&self) -> Result<(), String> {
        if self.candidates.len() != SurveyStep::ALL.len() {
            return Err(format!("task {}: needs candidates for base, 1, 3 and 5", self.task_id));
        }
        let distinct: BTreeSet<&String> = self.candidates.values().collect();
        if distinct.len() != self.candidates.len() {
            return Err(format!("task {}: candidate images must be distinct", self.task_id));
        }
        if self.country == Country::CountryAgnostic {
            return Err(format!("task {}: survey tasks need a rater country", self.task_id));
        }
        Ok(())
    }

    /// Candidate image ids in step order (base, 1, 3, 5).
    pub fn candidate_ids(&self) -> Vec<String> {
        self.candidates.values().cloned().collect()
    }
}

/// A task as served to one rater.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyTask {
    pub task_id: String,
    pub country: Country,
    pub kind: TaskKind,
    pub model: String,
    pub prompt: String,
    /// Image ids in step order; display slot `i` shows `candidates[presentation_order[i]]`.
    pub candidates: Vec<String>,
    pub presentation_order: Vec<usize>,
    /// The gold question, without its answer.
    pub gold_question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignedTask {
    pub task_id: String,
    pub presentation_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterSession {
    pub session_id: String,
    pub rater_id: String,
    pub country: Country,
    /// Unix milliseconds.
    pub consent_at: u64,
    pub model_order: Vec<String>,
    pub assigned_tasks: Vec<AssignedTask>,
    #[serde(default)]
    pub completed: BTreeSet<String>,
}

/// Builds survey tasks from edit chains in a manifest.
///
/// Every multiloop or attribute_add chain with images at steps 0, 1, 3 and 5
/// becomes one task. Gold checks are attached by task id.
pub fn tasks_from_records(records: &[ImageRecord], gold: &[GoldItem]) -> Vec<TaskDefinition> {
    type ChainKey<'a> = (Protocol, &'a str, Country, &'a str, &'a str, u32);
    let mut chains: BTreeMap<ChainKey, (String, BTreeMap<SurveyStep, String>)> = BTreeMap::new();
    for r in records {
        if !matches!(r.protocol, Protocol::Multiloop | Protocol::AttributeAdd) {
            continue;
        }
        let Some(step) = SurveyStep::from_step(r.step) else { continue };
        let key = (r.protocol, r.model.as_str(), r.country, r.category.as_str(), r.subcategory.as_str(), r.variant);
        let entry = chains.entry(key).or_default();
        if step == SurveyStep::Base {
            entry.0 = r.prompt.clone();
        }
        entry.1.insert(step, r.id.clone());
    }
    let gold: BTreeMap<&str, &GoldItem> = gold.iter().map(|g| (g.task_id.as_str(), g)).collect();
    chains
        .into_iter()
        .filter(|(_, (_, c))| c.len() == SurveyStep::ALL.len())
        .map(|((protocol, model, country, category, sub, variant), (prompt, candidates))| {
            let kind = if protocol == Protocol::Multiloop { TaskKind::Multiloop } else { TaskKind::AttributeAdd };
            let prefix = if kind == TaskKind::Multiloop { "ml" } else { "aa" };
            let task_id = format!("{prefix}-{model}-{country}-{category}-{sub}-{variant}").replace(' ', "_");
            let gold = gold
                .get(task_id.as_str())
                .map(|g| GoldCheck { question: g.question.clone(), expected: g.expected });
            TaskDefinition { task_id, country, kind, model: model.to_string(), prompt, candidates, gold }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecb_core::corpus::{EmbeddingRef, Era};

    fn image(step: u8, protocol: Protocol, variant: u32) -> ImageRecord {
        ImageRecord {
            id: format!("{protocol:?}-{variant}-{step}"),
            model: "m".into(),
            country: Country::Nigeria,
            category: "Food".into(),
            subcategory: "Main dish".into(),
            era: Era::Agnostic,
            protocol,
            step,
            prompt: "jollof rice".into(),
            variant,
            embedding_ref: EmbeddingRef { file_id: "e".into(), row: 0 },
        }
    }

    #[test]
    fn complete_chains_become_tasks() {
        let mut records: Vec<ImageRecord> = (0..=5).map(|s| image(s, Protocol::Multiloop, 0)).collect();
        // a chain missing step 3 is skipped
        records.extend([0, 1, 5].map(|s| image(s, Protocol::Multiloop, 1)));
        records.extend([0, 1, 3, 5].map(|s| image(s, Protocol::AttributeAdd, 0)));
        let gold = vec![GoldItem { task_id: "ml-m-Nigeria-Food-Main_dish-0".into(), question: "q".into(), expected: YesNo::No }];
        let tasks = tasks_from_records(&records, &gold);
        assert_eq!(tasks.len(), 2);
        let ml = &tasks[0];
        assert_eq!(ml.kind, TaskKind::Multiloop);
        assert_eq!(ml.candidate_ids(), vec!["Multiloop-0-0", "Multiloop-0-1", "Multiloop-0-3", "Multiloop-0-5"]);
        assert_eq!(ml.gold.as_ref().unwrap().expected, YesNo::No);
        assert_eq!(tasks[1].kind, TaskKind::AttributeAdd);
        assert!(tasks.iter().all(|t| t.check().is_ok()));
    }
}
