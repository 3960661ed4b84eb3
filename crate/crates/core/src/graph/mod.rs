//! The five-layer hierarchical scene graph.
//!
//! Nodes live in per-layer maps keyed by [`NodeId`]. Containment edges go from
//! a child in layer `n` to a parent in layer `n + 1`; relation edges connect
//! two object nodes and carry the fused relation feature.

mod dot;
mod node;
mod serial;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::embedding::Embedding;
use crate::fusion::{self, FusionError};

pub use dot::DotOptions;
pub use node::{
    Aabb, BuildingNode, CellSpan, Layer, MeshVertex, Node, NodeId, ObjectNode, PlaceNode, Point3,
    RelationEdge, RoomExtent, RoomNode,
};
pub(crate) use node::pair_key;
pub use serial::FORMAT_VERSION;
pub use validate::{Violation, ViolationKind};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("type/layer mismatch: {kind} node cannot live in layer {layer}")]
    LayerMismatch { kind: &'static str, layer: Layer },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("parent {parent} ({parent_layer}) is not one layer above child {child} ({child_layer})")]
    NonAdjacentLayers {
        child: NodeId,
        child_layer: Layer,
        parent: NodeId,
        parent_layer: Layer,
    },
    #[error("relation endpoints must be two distinct object nodes (got {0} and {1})")]
    InvalidRelation(NodeId, NodeId),
    #[error("node {0} is not an object")]
    NotAnObject(NodeId),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u64),
}

/// Node and edge counts, as printed in build summaries.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize)]
pub struct GraphSummary {
    pub mesh_vertices: usize,
    pub objects: usize,
    pub places: usize,
    pub rooms: usize,
    pub buildings: usize,
    pub interlayer_edges: usize,
    pub relation_edges: usize,
    pub place_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGraph {
    layers: BTreeMap<Layer, BTreeMap<NodeId, Node>>,
    /// `(child, parent)` pairs.
    interlayer_edges: BTreeSet<(NodeId, NodeId)>,
    relation_edges: BTreeMap<(NodeId, NodeId), RelationEdge>,
    /// Ids merged away, pointing at the node that absorbed them.
    forwarding: BTreeMap<NodeId, NodeId>,
    next_node_id: u64,
    next_edge_id: u64,
}

impl SceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert `node` into `layer`, returning its fresh id.
    pub fn add_node(&mut self, layer: Layer, node: impl Into<Node>) -> Result<NodeId, GraphError> {
        let node = node.into();
        if node.layer() != layer {
            return Err(GraphError::LayerMismatch {
                kind: node.kind_name(),
                layer,
            });
        }
        let id = NodeId(self.next_node_id);
        self.next_node_id += 1;
        self.layers.entry(layer).or_default().insert(id, node);
        Ok(id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.layer_of(id).is_some()
    }

    pub fn layer_of(&self, id: NodeId) -> Option<Layer> {
        self.layers
            .iter()
            .find(|(_, nodes)| nodes.contains_key(&id))
            .map(|(l, _)| *l)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.layers.values().find_map(|nodes| nodes.get(&id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.layers.values_mut().find_map(|nodes| nodes.get_mut(&id))
    }

    pub fn nodes(&self, layer: Layer) -> impl Iterator<Item = (NodeId, &Node)> + '_ {
        self.layers
            .get(&layer)
            .into_iter()
            .flat_map(|m| m.iter().map(|(id, n)| (*id, n)))
    }

    pub fn node_count(&self, layer: Layer) -> usize {
        self.layers.get(&layer).map_or(0, BTreeMap::len)
    }

    pub fn object(&self, id: NodeId) -> Option<&ObjectNode> {
        match self.layers.get(&Layer::Object)?.get(&id)? {
            Node::Object(o) => Some(o),
            _ => None,
        }
    }

    pub fn object_mut(&mut self, id: NodeId) -> Option<&mut ObjectNode> {
        match self.layers.get_mut(&Layer::Object)?.get_mut(&id)? {
            Node::Object(o) => Some(o),
            _ => None,
        }
    }

    pub fn objects(&self) -> impl Iterator<Item = (NodeId, &ObjectNode)> + '_ {
        self.nodes(Layer::Object).filter_map(|(id, n)| match n {
            Node::Object(o) => Some((id, o)),
            _ => None,
        })
    }

    pub fn mesh_vertex_mut(&mut self, id: NodeId) -> Option<&mut MeshVertex> {
        match self.layers.get_mut(&Layer::Mesh)?.get_mut(&id)? {
            Node::MeshVertex(v) => Some(v),
            _ => None,
        }
    }

    pub fn mesh_vertices(&self) -> impl Iterator<Item = (NodeId, &MeshVertex)> + '_ {
        self.nodes(Layer::Mesh).filter_map(|(id, n)| match n {
            Node::MeshVertex(v) => Some((id, v)),
            _ => None,
        })
    }

    pub fn places(&self) -> impl Iterator<Item = (NodeId, &PlaceNode)> + '_ {
        self.nodes(Layer::Place).filter_map(|(id, n)| match n {
            Node::Place(p) => Some((id, p)),
            _ => None,
        })
    }

    pub fn place_mut(&mut self, id: NodeId) -> Option<&mut PlaceNode> {
        match self.layers.get_mut(&Layer::Place)?.get_mut(&id)? {
            Node::Place(p) => Some(p),
            _ => None,
        }
    }

    pub fn rooms(&self) -> impl Iterator<Item = (NodeId, &RoomNode)> + '_ {
        self.nodes(Layer::Room).filter_map(|(id, n)| match n {
            Node::Room(r) => Some((id, r)),
            _ => None,
        })
    }

    pub fn room(&self, id: NodeId) -> Option<&RoomNode> {
        match self.layers.get(&Layer::Room)?.get(&id)? {
            Node::Room(r) => Some(r),
            _ => None,
        }
    }

    pub fn room_mut(&mut self, id: NodeId) -> Option<&mut RoomNode> {
        match self.layers.get_mut(&Layer::Room)?.get_mut(&id)? {
            Node::Room(r) => Some(r),
            _ => None,
        }
    }

    pub fn buildings(&self) -> impl Iterator<Item = (NodeId, &BuildingNode)> + '_ {
        self.nodes(Layer::Building).filter_map(|(id, n)| match n {
            Node::Building(b) => Some((id, b)),
            _ => None,
        })
    }

    /// Remove a node together with every edge touching it.
    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        let layer = self.layer_of(id)?;
        let node = self.layers.get_mut(&layer)?.remove(&id)?;
        self.interlayer_edges.retain(|(c, p)| *c != id && *p != id);
        self.relation_edges.retain(|(a, b), _| *a != id && *b != id);
        if let Node::Place(p) = &node {
            for n in &p.neighbors {
                if let Some(other) = self.place_mut(*n) {
                    other.neighbors.remove(&id);
                }
            }
        }
        Some(node)
    }

    /// Attach `child` to `parent`, replacing any previous parent.
    pub fn set_parent(&mut self, child: NodeId, parent: NodeId) -> Result<(), GraphError> {
        let child_layer = self.layer_of(child).ok_or(GraphError::UnknownNode(child))?;
        let parent_layer = self.layer_of(parent).ok_or(GraphError::UnknownNode(parent))?;
        if child_layer.above() != Some(parent_layer) {
            return Err(GraphError::NonAdjacentLayers {
                child,
                child_layer,
                parent,
                parent_layer,
            });
        }
        self.clear_parent(child);
        self.interlayer_edges.insert((child, parent));
        Ok(())
    }

    pub fn clear_parent(&mut self, child: NodeId) {
        let stale: Vec<_> = self.parent_edges(child).collect();
        for e in stale {
            self.interlayer_edges.remove(&e);
        }
    }

    fn parent_edges(&self, child: NodeId) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.interlayer_edges
            .range((child, NodeId(0))..=(child, NodeId(u64::MAX)))
            .copied()
    }

    /// The parent of `child`, if it has exactly one.
    pub fn parent_of(&self, child: NodeId) -> Option<NodeId> {
        let mut it = self.parent_edges(child);
        let first = it.next()?;
        match it.next() {
            None => Some(first.1),
            Some(_) => None,
        }
    }

    pub fn parents_of(&self, child: NodeId) -> Vec<NodeId> {
        self.parent_edges(child).map(|(_, p)| p).collect()
    }

    pub fn children_of(&self, parent: NodeId) -> Vec<NodeId> {
        self.interlayer_edges
            .iter()
            .filter(|(_, p)| *p == parent)
            .map(|(c, _)| *c)
            .collect()
    }

    pub fn interlayer_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.interlayer_edges.iter().copied()
    }

    /// Walk up the hierarchy from `id` until a node of `layer` is reached.
    pub fn ancestor_in(&self, mut id: NodeId, layer: Layer) -> Option<NodeId> {
        loop {
            if self.layer_of(id)? == layer {
                return Some(id);
            }
            id = self.parent_of(id)?;
        }
    }

    /// Fold `observed` into the relation edge between objects `i` and `j`,
    /// creating the edge on first observation.
    pub fn upsert_relation(
        &mut self,
        i: NodeId,
        j: NodeId,
        observed: &Embedding,
    ) -> Result<&RelationEdge, GraphError> {
        if i == j {
            return Err(GraphError::InvalidRelation(i, j));
        }
        for id in [i, j] {
            if self.object(id).is_none() {
                return Err(GraphError::InvalidRelation(i, j));
            }
        }
        let key = pair_key(i, j);
        if let Some(edge) = self.relation_edges.get_mut(&key) {
            let (feature, count) =
                fusion::running_average(Some(&edge.feature), edge.update_count, observed)?;
            edge.feature = feature;
            edge.update_count = count;
        } else {
            let edge_id = self.next_edge_id;
            self.next_edge_id += 1;
            self.relation_edges.insert(
                key,
                RelationEdge {
                    edge_id,
                    endpoints: key,
                    feature: observed.clone(),
                    update_count: 1,
                    pair_crop: None,
                },
            );
        }
        Ok(&self.relation_edges[&key])
    }

    pub fn relation(&self, i: NodeId, j: NodeId) -> Option<&RelationEdge> {
        self.relation_edges.get(&pair_key(i, j))
    }

    pub fn relation_mut(&mut self, i: NodeId, j: NodeId) -> Option<&mut RelationEdge> {
        self.relation_edges.get_mut(&pair_key(i, j))
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationEdge> + '_ {
        self.relation_edges.values()
    }

    /// Follow merge forwarding entries to the live node an id now refers to.
    pub fn resolve(&self, mut id: NodeId) -> Option<NodeId> {
        // Forwarding chains are acyclic: targets always exist when recorded.
        while let Some(next) = self.forwarding.get(&id) {
            id = *next;
        }
        self.contains(id).then_some(id)
    }

    pub fn forwarding(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.forwarding.iter().map(|(a, b)| (*a, *b))
    }

    /// Merge object `absorbed` into `survivor`.
    ///
    /// Features combine as count-weighted means, so the survivor's feature
    /// stays the mean of every observation either node fused. Relation edges
    /// and mesh children move to the survivor; an edge that would collapse
    /// onto the survivor itself is dropped.
    pub fn merge_objects(&mut self, survivor: NodeId, absorbed: NodeId) -> Result<(), GraphError> {
        if survivor == absorbed {
            return Err(GraphError::InvalidRelation(survivor, absorbed));
        }
        let gone = self
            .object(absorbed)
            .cloned()
            .ok_or(GraphError::NotAnObject(absorbed))?;
        let keep = self
            .object(survivor)
            .cloned()
            .ok_or(GraphError::NotAnObject(survivor))?;

        let (feature, count) = match (&keep.feature, &gone.feature) {
            (Some(a), Some(b)) => {
                let (f, n) = fusion::merge_means(a, keep.update_count, b, gone.update_count)?;
                (Some(f), n)
            }
            (Some(a), None) => (Some(a.clone()), keep.update_count),
            (None, Some(b)) => (Some(b.clone()), gone.update_count),
            (None, None) => (None, 0),
        };
        let obj = self.object_mut(survivor).expect("checked above");
        obj.feature = feature;
        obj.update_count = count;
        obj.bbox = keep.bbox.union(&gone.bbox);

        let moved: Vec<((NodeId, NodeId), RelationEdge)> = self
            .relation_edges
            .iter()
            .filter(|((a, b), _)| *a == absorbed || *b == absorbed)
            .map(|(k, e)| (*k, e.clone()))
            .collect();
        for (key, edge) in moved {
            self.relation_edges.remove(&key);
            let other = edge.other(absorbed).expect("edge touches absorbed");
            if other == survivor {
                continue;
            }
            let new_key = pair_key(survivor, other);
            match self.relation_edges.get_mut(&new_key) {
                Some(existing) => {
                    let (f, n) = fusion::merge_means(
                        &existing.feature,
                        existing.update_count,
                        &edge.feature,
                        edge.update_count,
                    )?;
                    existing.feature = f;
                    existing.update_count = n;
                    if existing.pair_crop.is_none() {
                        existing.pair_crop = edge.pair_crop;
                    }
                }
                None => {
                    self.relation_edges.insert(
                        new_key,
                        RelationEdge {
                            endpoints: new_key,
                            ..edge
                        },
                    );
                }
            }
        }

        for child in self.children_of(absorbed) {
            self.interlayer_edges.remove(&(child, absorbed));
            self.interlayer_edges.insert((child, survivor));
        }
        self.remove_node(absorbed);
        self.forwarding.insert(absorbed, survivor);
        Ok(())
    }

    /// Connect two places with a traversability edge.
    pub fn link_places(&mut self, a: NodeId, b: NodeId) -> Result<(), GraphError> {
        if a == b || self.place_mut(a).is_none() || self.place_mut(b).is_none() {
            return Err(GraphError::InvalidRelation(a, b));
        }
        self.place_mut(a).expect("checked").neighbors.insert(b);
        self.place_mut(b).expect("checked").neighbors.insert(a);
        Ok(())
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            mesh_vertices: self.node_count(Layer::Mesh),
            objects: self.node_count(Layer::Object),
            places: self.node_count(Layer::Place),
            rooms: self.node_count(Layer::Room),
            buildings: self.node_count(Layer::Building),
            interlayer_edges: self.interlayer_edges.len(),
            relation_edges: self.relation_edges.len(),
            place_edges: self.places().map(|(_, p)| p.neighbors.len()).sum::<usize>() / 2,
        }
    }

    pub fn next_node_id(&self) -> u64 {
        self.next_node_id
    }
}
