use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::TaskReport;
use crate::graph::NodeId;

/// Expected outcome of one task: the pairs that should be acted on and,
/// optionally, the objects that should be found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTruth {
    pub task: String,
    #[serde(default)]
    pub positive_pairs: Vec<(NodeId, NodeId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_objects: Option<Vec<NodeId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasoningScore {
    /// Share of positives that were found, in percent.
    pub success_ratio: f64,
    pub false_positives: usize,
    pub found: usize,
    pub total: usize,
}

fn unordered(p: (NodeId, NodeId)) -> (NodeId, NodeId) {
    (p.0.min(p.1), p.0.max(p.1))
}

/// Success ratio and false positives over a set of reports, each matched
/// to its ground truth by task text. Reports without ground truth count
/// every executed pair as a false positive.
pub fn score_reasoning(reports: &[TaskReport], truth: &[TaskTruth]) -> ReasoningScore {
    let (mut found, mut total, mut fp) = (0, 0, 0);
    for report in reports {
        let gt = truth.iter().find(|t| t.task == report.task);
        let positives: BTreeSet<_> = gt.map(|t| t.positive_pairs.iter().map(|p| unordered(*p)).collect()).unwrap_or_default();
        let executed: BTreeSet<_> = report.executed_pairs().map(unordered).collect();
        total += positives.len();
        found += positives.intersection(&executed).count();
        fp += executed.difference(&positives).count();
        if let Some(objects) = gt.and_then(|t| t.positive_objects.as_ref()) {
            let objects: BTreeSet<NodeId> = objects.iter().copied().collect();
            let bound = report.grounding.bound_nodes();
            total += objects.len();
            found += objects.intersection(&bound).count();
            fp += bound.difference(&objects).count();
        }
    }
    let success_ratio = if total == 0 { 100.0 } else { found as f64 / total as f64 * 100.0 };
    ReasoningScore {
        success_ratio,
        false_positives: fp,
        found,
        total,
    }
}
