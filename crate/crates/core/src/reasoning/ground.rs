use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::plan::TaskPlan;
use super::ReasoningError;
use crate::config::{ReasoningConfig, RoomScope, SearchConfig};
use crate::graph::{Layer, NodeId, SceneGraph};
use crate::providers::Embedder;
use crate::search::{find_objects, find_rooms, Match};

/// One candidate node pair for a subtask. `edge` is `None` when the graph
/// holds no relation between the two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBinding {
    pub pair: (NodeId, NodeId),
    pub edge: Option<u64>,
}

impl PairBinding {
    pub fn is_missing(&self) -> bool {
        self.edge.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskBinding {
    pub subtask: usize,
    /// Pairs with an edge, best combined similarity first, capped.
    pub bound: Vec<PairBinding>,
    pub missing: Vec<PairBinding>,
    /// Bound pairs dropped by the per-subtask cap.
    pub truncated: usize,
    /// Subtask object names with no match in the graph.
    pub unbound_objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedPlan {
    pub object_bindings: BTreeMap<String, Vec<Match>>,
    pub subtask_bindings: Vec<SubtaskBinding>,
    /// Rooms the search was narrowed to, when scoping applied.
    pub room_scope: Option<Vec<NodeId>>,
}

impl GroundedPlan {
    pub fn bound_nodes(&self) -> BTreeSet<NodeId> {
        self.object_bindings.values().flatten().map(|m| m.node).collect()
    }
}

fn scope_objects(graph: &SceneGraph, rooms: &[NodeId]) -> BTreeSet<NodeId> {
    graph
        .objects()
        .map(|(id, _)| id)
        .filter(|id| graph.ancestor_in(*id, Layer::Room).is_some_and(|r| rooms.contains(&r)))
        .collect()
}

/// Bind plan object names to graph objects and subtasks to relation edges.
pub fn ground_plan(
    plan: &TaskPlan,
    graph: &SceneGraph,
    embedder: &dyn Embedder,
    search: &SearchConfig,
    reasoning: &ReasoningConfig,
) -> Result<GroundedPlan, ReasoningError> {
    let room_scope = match reasoning.room_scope {
        RoomScope::Never => None,
        RoomScope::Always | RoomScope::Auto => {
            let queries: Vec<String> = plan.relevant_objects.iter().map(|n| search.label_prompt(n)).collect();
            let rooms: Vec<NodeId> = find_rooms(graph, &queries, embedder, search.room_threshold)?
                .into_iter()
                .map(|m| m.node)
                .collect();
            if reasoning.room_scope == RoomScope::Auto && rooms.is_empty() {
                None
            } else {
                Some(rooms)
            }
        }
    };
    let scope = room_scope.as_deref().map(|r| scope_objects(graph, r));

    let mut object_bindings = BTreeMap::new();
    for name in &plan.relevant_objects {
        let prompt = search.label_prompt(name);
        let mut hits = find_objects(graph, std::slice::from_ref(&prompt), embedder, search.object_threshold, scope.as_ref())?
            .remove(&prompt)
            .unwrap_or_default();
        for m in &mut hits {
            m.query = name.clone();
        }
        object_bindings.insert(name.clone(), hits);
    }

    let mut subtask_bindings = Vec::with_capacity(plan.subtasks.len());
    for (index, s) in plan.subtasks.iter().enumerate() {
        let a_hits = &object_bindings[&s.object_a];
        let b_hits = &object_bindings[&s.object_b];
        let mut unbound_objects = Vec::new();
        for (name, hits) in [(&s.object_a, a_hits), (&s.object_b, b_hits)] {
            if hits.is_empty() && !unbound_objects.contains(name) {
                unbound_objects.push(name.clone());
            }
        }
        let mut bound: Vec<(f64, PairBinding)> = Vec::new();
        let mut missing = Vec::new();
        let mut seen = BTreeSet::new();
        for a in a_hits {
            for b in b_hits {
                if a.node == b.node || !seen.insert((a.node.min(b.node), a.node.max(b.node))) {
                    continue;
                }
                let edge = graph.relation(a.node, b.node).map(|e| e.edge_id);
                let binding = PairBinding { pair: (a.node, b.node), edge };
                match edge {
                    Some(_) => bound.push((a.similarity + b.similarity, binding)),
                    None => missing.push(binding),
                }
            }
        }
        bound.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.pair.cmp(&y.1.pair)));
        let truncated = bound.len().saturating_sub(reasoning.max_pairs_per_subtask);
        bound.truncate(reasoning.max_pairs_per_subtask);
        subtask_bindings.push(SubtaskBinding {
            subtask: index,
            bound: bound.into_iter().map(|(_, b)| b).collect(),
            missing,
            truncated,
            unbound_objects,
        });
    }
    Ok(GroundedPlan {
        object_bindings,
        subtask_bindings,
        room_scope,
    })
}
