use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{Layer, Node, NodeId, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    LayerMismatch,
    DanglingEdge,
    NonAdjacentLayers,
    MultipleParents,
    InvalidRelation,
    Geometry,
    Feature,
    TransientLeftover,
    DuplicateObjectId,
    AsymmetricPlaceEdge,
    Building,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: Option<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "{:?} at {n}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

const GEOM_TOL: f64 = 1e-9;

impl SceneGraph {
    /// Report every invariant violation; an empty list means the graph is sound.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |kind, node: Option<NodeId>, message: String| {
            out.push(Violation {
                kind,
                node,
                message,
            })
        };

        let mut seen: BTreeMap<NodeId, Layer> = BTreeMap::new();
        for (layer, nodes) in &self.layers {
            for (id, node) in nodes {
                if node.layer() != *layer {
                    push(
                        ViolationKind::LayerMismatch,
                        Some(*id),
                        format!("{} stored in {layer}", node.kind_name()),
                    );
                }
                if let Some(prev) = seen.insert(*id, *layer) {
                    push(
                        ViolationKind::LayerMismatch,
                        Some(*id),
                        format!("present in both {prev} and {layer}"),
                    );
                }
                if id.0 >= self.next_node_id {
                    push(
                        ViolationKind::LayerMismatch,
                        Some(*id),
                        format!("id not below counter {}", self.next_node_id),
                    );
                }
            }
        }

        let mut parent_count: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (child, parent) in &self.interlayer_edges {
            let (Some(cl), Some(pl)) = (seen.get(child), seen.get(parent)) else {
                let missing = if seen.contains_key(child) { parent } else { child };
                push(
                    ViolationKind::DanglingEdge,
                    Some(*missing),
                    format!("containment edge {child} -> {parent} references a missing node"),
                );
                continue;
            };
            if cl.above() != Some(*pl) {
                push(
                    ViolationKind::NonAdjacentLayers,
                    Some(*child),
                    format!("containment edge {child} ({cl}) -> {parent} ({pl})"),
                );
            }
            *parent_count.entry(*child).or_default() += 1;
        }
        for (child, n) in parent_count {
            if n > 1 {
                push(
                    ViolationKind::MultipleParents,
                    Some(child),
                    format!("{child} has {n} parents"),
                );
            }
        }

        for ((a, b), edge) in &self.relation_edges {
            if edge.endpoints != (*a, *b) || a >= b {
                push(
                    ViolationKind::InvalidRelation,
                    Some(*a),
                    format!("relation key ({a}, {b}) does not match endpoints"),
                );
            }
            for end in [a, b] {
                match seen.get(end) {
                    None => push(
                        ViolationKind::DanglingEdge,
                        Some(*end),
                        format!("relation edge {} references missing node {end}", edge.edge_id),
                    ),
                    Some(Layer::Object) => {}
                    Some(l) => push(
                        ViolationKind::InvalidRelation,
                        Some(*end),
                        format!("relation endpoint {end} is in {l}"),
                    ),
                }
            }
            if edge.update_count < 1 {
                push(
                    ViolationKind::InvalidRelation,
                    Some(*a),
                    format!("relation edge {} has zero updates", edge.edge_id),
                );
            }
            if !edge.feature.is_finite() || edge.feature.dim() == 0 {
                push(
                    ViolationKind::Feature,
                    Some(*a),
                    format!("relation edge {} has an empty or non-finite feature", edge.edge_id),
                );
            }
        }

        let mut object_ids: BTreeMap<u64, NodeId> = BTreeMap::new();
        let mut object_dim: Option<usize> = None;
        let mut rooms = 0usize;
        for (id, node) in self.layers.values().flat_map(|m| m.iter()) {
            match node {
                Node::MeshVertex(v) => {
                    if v.transient_feature.is_some() || v.transient_relation_id.is_some() {
                        push(
                            ViolationKind::TransientLeftover,
                            Some(*id),
                            "mesh vertex still carries transient annotations".into(),
                        );
                    }
                }
                Node::Object(o) => {
                    if !o.bbox.is_ordered() {
                        push(ViolationKind::Geometry, Some(*id), "bbox min > max".into());
                    } else if !o.bbox.contains(&o.centroid, GEOM_TOL) {
                        push(
                            ViolationKind::Geometry,
                            Some(*id),
                            "centroid outside bbox".into(),
                        );
                    }
                    match (&o.feature, o.update_count) {
                        (None, 0) => {}
                        (Some(f), n) if n >= 1 => {
                            if !f.is_finite() {
                                push(ViolationKind::Feature, Some(*id), "non-finite feature".into());
                            }
                            match object_dim {
                                Some(d) if d != f.dim() => push(
                                    ViolationKind::Feature,
                                    Some(*id),
                                    format!("feature dim {} differs from {d}", f.dim()),
                                ),
                                _ => object_dim = Some(f.dim()),
                            }
                        }
                        (f, n) => push(
                            ViolationKind::Feature,
                            Some(*id),
                            format!("feature present = {} with update_count {n}", f.is_some()),
                        ),
                    }
                    if let Some(oid) = o.object_id {
                        if let Some(prev) = object_ids.insert(oid, *id) {
                            push(
                                ViolationKind::DuplicateObjectId,
                                Some(*id),
                                format!("object_id {oid} also carried by {prev}"),
                            );
                        }
                    }
                }
                Node::Place(p) => {
                    for n in &p.neighbors {
                        let ok = matches!(self.node(*n), Some(Node::Place(q)) if q.neighbors.contains(id));
                        if !ok {
                            push(
                                ViolationKind::AsymmetricPlaceEdge,
                                Some(*id),
                                format!("neighbor {n} missing or not symmetric"),
                            );
                        }
                    }
                }
                Node::Room(r) => {
                    rooms += 1;
                    let dims: BTreeSet<usize> = r.feature_clusters.iter().map(|f| f.dim()).collect();
                    if dims.len() > 1 || dims.contains(&0) {
                        push(
                            ViolationKind::Feature,
                            Some(*id),
                            "room feature clusters have inconsistent dimensions".into(),
                        );
                    }
                }
                Node::Building(_) => {}
            }
        }

        let buildings = self.node_count(Layer::Building);
        if buildings > 1 || (rooms > 0 && buildings != 1) {
            push(
                ViolationKind::Building,
                None,
                format!("{buildings} building nodes for {rooms} rooms"),
            );
        }
        out
    }
}
