//! Task reasoning: an LLM turns a task into objects and pairwise subtasks,
//! the graph grounds them, the VLM describes each related pair and a
//! second LLM decides whether to act.

mod evaluate;
mod ground;
mod plan;
mod score;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::graph::{NodeId, Point3, SceneGraph};
use crate::ingest::Palette;
use crate::providers::{ProviderError, ProviderSet};
use crate::search::SearchError;

pub use evaluate::{
    decide, decisor_prompt, evaluate_subtask, focus_suffix, parse_decision, Decision, DecisorOutcome, Unevaluated,
    DECISOR_SYSTEM_PROMPT, REDECIDE_MARKER,
};
pub use ground::{ground_plan, GroundedPlan, PairBinding, SubtaskBinding};
pub use plan::{parse_plan, parse_task, retry_prompt, Subtask, TaskPlan, RETRY_MARKER, TASK_SYSTEM_PROMPT};
pub use score::{score_reasoning, ReasoningScore, TaskTruth};

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("task text is empty")]
    EmptyTask,
    #[error("no valid plan after {attempts} attempt(s): {last_error}")]
    PlanExhausted {
        attempts: usize,
        last_error: String,
        responses: Vec<String>,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

impl ReasoningError {
    /// Whether the failure came from a model backend rather than the data.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            ReasoningError::Provider(_) => true,
            ReasoningError::Search(SearchError::Provider(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskVerdict {
    pub subtask: usize,
    pub pair: (NodeId, NodeId),
    pub edge_id: u64,
    pub vlm_description: String,
    pub execute: bool,
    pub undecided: bool,
    pub decisor_rationale: String,
    /// Set when the pair could not be described or judged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unevaluated: Option<String>,
}

/// Where to go for a subtask the decisor approved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub subtask: usize,
    pub pair: (NodeId, NodeId),
    pub centroids: (Point3, Point3),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub plan: TaskPlan,
    pub grounding: GroundedPlan,
    pub verdicts: Vec<SubtaskVerdict>,
    pub missing: usize,
    pub targets: Vec<Target>,
}

impl TaskReport {
    pub fn executed_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.verdicts.iter().filter(|v| v.execute).map(|v| v.pair)
    }
}

/// Parse, ground, and evaluate one task end to end. Pair-level provider
/// failures mark that pair unevaluated; planning failures are returned.
pub fn run_task(
    task: &str,
    graph: &SceneGraph,
    providers: &ProviderSet,
    config: &PipelineConfig,
    palette: &Palette,
    crop_root: Option<&Path>,
) -> Result<TaskReport, ReasoningError> {
    let plan = parse_task(task, providers.task_llm.as_ref(), config.reasoning.max_retries)?;
    let grounding = ground_plan(&plan, graph, providers.embedder.as_ref(), &config.search, &config.reasoning)?;

    let mut verdicts = Vec::new();
    let mut missing = 0;
    for binding in &grounding.subtask_bindings {
        missing += binding.missing.len();
        let prompt = &plan.subtasks[binding.subtask].prompt;
        for pair in &binding.bound {
            let (a, b) = pair.pair;
            let Some(edge) = graph.relation(a, b) else { continue };
            let labels = (
                graph.object(a).map_or(0, |o| o.label),
                graph.object(b).map_or(0, |o| o.label),
            );
            let mut verdict = SubtaskVerdict {
                subtask: binding.subtask,
                pair: (a, b),
                edge_id: edge.edge_id,
                vlm_description: String::new(),
                execute: false,
                undecided: false,
                decisor_rationale: String::new(),
                unevaluated: None,
            };
            match evaluate_subtask(edge, labels, prompt, palette, providers.vlm.as_ref(), crop_root) {
                Err(Unevaluated(reason)) => {
                    log::warn!("subtask {} pair {a}-{b} unevaluated: {reason}", binding.subtask);
                    verdict.unevaluated = Some(reason);
                }
                Ok(description) => {
                    verdict.vlm_description = description;
                    match decide(&verdict.vlm_description, prompt, providers.decisor_llm.as_ref()) {
                        Ok(out) => {
                            verdict.execute = out.execute;
                            verdict.undecided = out.undecided;
                            verdict.decisor_rationale = out.rationale;
                        }
                        Err(e) => verdict.unevaluated = Some(e.to_string()),
                    }
                }
            }
            verdicts.push(verdict);
        }
    }
    let targets = verdicts
        .iter()
        .filter(|v| v.execute)
        .filter_map(|v| {
            let (a, b) = (graph.object(v.pair.0)?, graph.object(v.pair.1)?);
            Some(Target {
                subtask: v.subtask,
                pair: v.pair,
                centroids: (a.centroid, b.centroid),
            })
        })
        .collect();
    Ok(TaskReport {
        task: task.to_string(),
        plan,
        grounding,
        verdicts,
        missing,
        targets,
    })
}
