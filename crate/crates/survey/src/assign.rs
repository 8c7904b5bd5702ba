//! Deterministic per-rater assignment.
//!
//! Everything a rater sees is drawn from one stream seeded by
//! (server seed, rater id), in a fixed order of draws, so a session can be
//! re-derived at any time and compared with what the log recorded.

use std::collections::{BTreeMap, BTreeSet};

use ecb_core::corpus::Country;
use ecb_core::seed::{derive_seed, rng};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::types::{AssignedTask, TaskDefinition, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Quota {
    pub multiloop: usize,
    pub attribute_add: usize,
}

impl Default for Quota {
    fn default() -> Self {
        Quota { multiloop: 5, attribute_add: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub model_order: Vec<String>,
    pub tasks: Vec<AssignedTask>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub kind: TaskKind,
    pub needed: usize,
    pub available: usize,
}

/// Opaque session id; stable for a rater under a given server seed.
pub fn session_id(server_seed: u64, rater_id: &str) -> String {
    format!("{:016x}", derive_seed(server_seed, &["survey-session-id", rater_id]))
}

/// Picks the rater's tasks from own-country definitions only.
///
/// Multiloop tasks are taken round-robin over a shuffled model order, one
/// shuffled prompt at a time per model, so each model is seen as evenly as the
/// pool allows. Attribute-add tasks follow.
pub fn assign(
    defs: &[TaskDefinition],
    country: Country,
    server_seed: u64,
    rater_id: &str,
    quota: Quota,
) -> Result<Assignment, Shortfall> {
    let mut g = rng(derive_seed(server_seed, &["survey-assign", rater_id]));
    let own = |kind: TaskKind| -> Vec<&TaskDefinition> {
        let mut v: Vec<&TaskDefinition> = defs.iter().filter(|d| d.country == country && d.kind == kind).collect();
        v.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        v
    };

    let multiloop = own(TaskKind::Multiloop);
    let mut model_order: Vec<String> =
        multiloop.iter().map(|d| d.model.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    model_order.shuffle(&mut g);
    let mut per_model: BTreeMap<&str, Vec<&TaskDefinition>> = BTreeMap::new();
    for d in &multiloop {
        per_model.entry(d.model.as_str()).or_default().push(d);
    }
    let mut queues: Vec<Vec<&TaskDefinition>> = model_order
        .iter()
        .map(|m| {
            let mut q = per_model.remove(m.as_str()).unwrap_or_default();
            q.shuffle(&mut g);
            q.reverse();
            q
        })
        .collect();

    let mut picked: Vec<&TaskDefinition> = Vec::new();
    while picked.len() < quota.multiloop && queues.iter().any(|q| !q.is_empty()) {
        for q in queues.iter_mut() {
            if picked.len() == quota.multiloop {
                break;
            }
            if let Some(d) = q.pop() {
                picked.push(d);
            }
        }
    }
    if picked.len() < quota.multiloop {
        return Err(Shortfall { kind: TaskKind::Multiloop, needed: quota.multiloop, available: picked.len() });
    }

    let mut attribute = own(TaskKind::AttributeAdd);
    if attribute.len() < quota.attribute_add {
        return Err(Shortfall { kind: TaskKind::AttributeAdd, needed: quota.attribute_add, available: attribute.len() });
    }
    attribute.shuffle(&mut g);
    picked.extend(attribute.into_iter().take(quota.attribute_add));

    let tasks = picked
        .into_iter()
        .map(|d| {
            let mut order: Vec<usize> = (0..d.candidates.len()).collect();
            order.shuffle(&mut g);
            AssignedTask { task_id: d.task_id.clone(), presentation_order: order }
        })
        .collect();
    Ok(Assignment { model_order, tasks })
}
