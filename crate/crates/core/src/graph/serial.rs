//! Canonical text serialization.
//!
//! The document is JSON with a fixed key order, records sorted by id, one
//! record per line, and floats in shortest round-trip form, so equal graphs
//! serialize to identical bytes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{GraphError, Layer, Node, NodeId, RelationEdge, SceneGraph};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    layer: Layer,
    #[serde(flatten)]
    node: Node,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContainmentRecord {
    child: NodeId,
    parent: NodeId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForwardRecord {
    from: NodeId,
    to: NodeId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u64,
    next_node_id: u64,
    next_edge_id: u64,
    nodes: Vec<NodeRecord>,
    interlayer_edges: Vec<ContainmentRecord>,
    relation_edges: Vec<RelationEdge>,
    forwarding: Vec<ForwardRecord>,
}

fn push_array<T: Serialize>(out: &mut String, key: &str, items: impl Iterator<Item = T>, last: bool) {
    out.push_str(&format!("  \"{key}\": ["));
    let mut first = true;
    for item in items {
        out.push_str(if first { "\n    " } else { ",\n    " });
        first = false;
        out.push_str(&serde_json::to_string(&item).expect("graph records always serialize"));
    }
    if !first {
        out.push_str("\n  ");
    }
    out.push(']');
    out.push_str(if last { "\n" } else { ",\n" });
}

impl SceneGraph {
    /// Canonical UTF-8 serialization.
    pub fn serialize(&self) -> Vec<u8> {
        self.to_canonical_string().into_bytes()
    }

    pub fn to_canonical_string(&self) -> String {
        let mut out = String::from("{\n");
        out.push_str(&format!("  \"format_version\": {FORMAT_VERSION},\n"));
        out.push_str(&format!("  \"next_node_id\": {},\n", self.next_node_id));
        out.push_str(&format!("  \"next_edge_id\": {},\n", self.next_edge_id));

        let mut nodes: Vec<(NodeId, Layer, &Node)> = self
            .layers
            .iter()
            .flat_map(|(l, m)| m.iter().map(move |(id, n)| (*id, *l, n)))
            .collect();
        nodes.sort_by_key(|(id, _, _)| *id);
        push_array(
            &mut out,
            "nodes",
            nodes.into_iter().map(|(id, layer, node)| {
                // Records borrow nothing, so clone into the flattened form.
                NodeRecord {
                    id,
                    layer,
                    node: node.clone(),
                }
            }),
            false,
        );
        push_array(
            &mut out,
            "interlayer_edges",
            self.interlayer_edges
                .iter()
                .map(|(child, parent)| ContainmentRecord {
                    child: *child,
                    parent: *parent,
                }),
            false,
        );
        push_array(&mut out, "relation_edges", self.relation_edges.values(), false);
        push_array(
            &mut out,
            "forwarding",
            self.forwarding.iter().map(|(from, to)| ForwardRecord {
                from: *from,
                to: *to,
            }),
            true,
        );
        out.push_str("}\n");
        out
    }

    /// Parse a serialized graph. The graph is not validated; call
    /// [`SceneGraph::validate`] on the result.
    pub fn deserialize(bytes: &[u8]) -> Result<SceneGraph, GraphError> {
        let doc: Document = serde_json::from_slice(bytes).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if doc.format_version != FORMAT_VERSION {
            return Err(GraphError::UnsupportedVersion(doc.format_version));
        }
        let parse_err = |message: String| GraphError::Parse {
            line: 0,
            column: 0,
            message,
        };
        let mut g = SceneGraph {
            next_node_id: doc.next_node_id,
            next_edge_id: doc.next_edge_id,
            ..SceneGraph::default()
        };
        for rec in doc.nodes {
            let layer_nodes = g.layers.entry(rec.layer).or_default();
            if layer_nodes.insert(rec.id, rec.node).is_some() {
                return Err(parse_err(format!("duplicate node id {}", rec.id)));
            }
        }
        for e in doc.interlayer_edges {
            g.interlayer_edges.insert((e.child, e.parent));
        }
        for e in doc.relation_edges {
            let key = e.endpoints;
            if g.relation_edges.insert(key, e).is_some() {
                return Err(parse_err(format!(
                    "duplicate relation edge ({}, {})",
                    key.0, key.1
                )));
            }
        }
        let mut fwd = BTreeMap::new();
        for f in doc.forwarding {
            fwd.insert(f.from, f.to);
        }
        g.forwarding = fwd;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{object_at, place_at};
    use super::*;
    use crate::embedding::Embedding;
    use crate::graph::{BuildingNode, MeshVertex, RoomExtent, RoomNode};

    fn sample() -> SceneGraph {
        let mut g = SceneGraph::new();
        let v = g
            .add_node(
                Layer::Mesh,
                MeshVertex {
                    position: [0.05, 0.15, 0.1],
                    color: [10, 20, 30],
                    label: Some(3),
                    transient_feature: None,
                    transient_relation_id: None,
                },
            )
            .unwrap();
        let a = g.add_node(Layer::Object, object_at(0.1)).unwrap();
        let b = g.add_node(Layer::Object, object_at(1.0 / 3.0)).unwrap();
        let p = g.add_node(Layer::Place, place_at(0.7)).unwrap();
        let q = g.add_node(Layer::Place, place_at(2.7)).unwrap();
        let r = g
            .add_node(
                Layer::Room,
                RoomNode {
                    centroid: [1.0, 1.0, 0.0],
                    feature_clusters: vec![Embedding::new(vec![0.1, 0.2])],
                    extent: RoomExtent::from_cells(0.1, [(0, 0), (1, 0), (1, 1)]),
                },
            )
            .unwrap();
        let bld = g
            .add_node(Layer::Building, BuildingNode { centroid: [1.0, 1.0, 0.0] })
            .unwrap();
        g.set_parent(v, a).unwrap();
        g.set_parent(a, p).unwrap();
        g.set_parent(b, q).unwrap();
        g.set_parent(p, r).unwrap();
        g.set_parent(q, r).unwrap();
        g.set_parent(r, bld).unwrap();
        g.link_places(p, q).unwrap();
        g.upsert_relation(a, b, &Embedding::new(vec![0.1, 1e-300, -7.25]))
            .unwrap();
        g
    }

    #[test]
    fn round_trip_is_identity() {
        let g = sample();
        let bytes = g.serialize();
        let back = SceneGraph::deserialize(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.serialize(), bytes);
        assert!(back.validate().is_empty());
    }

    #[test]
    fn serialization_is_deterministic() {
        assert_eq!(sample().serialize(), sample().serialize());
        let text = sample().to_canonical_string();
        assert!(text.starts_with("{\n  \"format_version\": 1,"));
    }

    #[test]
    fn empty_graph_round_trips() {
        let g = SceneGraph::new();
        assert_eq!(SceneGraph::deserialize(&g.serialize()).unwrap(), g);
    }

    #[test]
    fn truncated_input_is_a_positioned_error() {
        let bytes = sample().serialize();
        let cut = &bytes[..bytes.len() / 2];
        match SceneGraph::deserialize(cut) {
            Err(GraphError::Parse { line, .. }) => assert!(line > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = sample()
            .to_canonical_string()
            .replace("\"format_version\": 1", "\"format_version\": 2");
        assert_eq!(
            SceneGraph::deserialize(text.as_bytes()),
            Err(GraphError::UnsupportedVersion(2))
        );
    }

    fn mutate(f: impl FnOnce(&mut serde_json::Value)) -> SceneGraph {
        let mut v: serde_json::Value = serde_json::from_slice(&sample().serialize()).unwrap();
        f(&mut v);
        SceneGraph::deserialize(serde_json::to_string(&v).unwrap().as_bytes()).unwrap()
    }

    #[test]
    fn validate_reports_second_parent() {
        let g = mutate(|v| {
            // object n1 gets a second place parent n4
            v["interlayer_edges"]
                .as_array_mut()
                .unwrap()
                .push(serde_json::json!({"child": 1, "parent": 4}));
        });
        let violations = g.validate();
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert_eq!(violations[0].kind, ViolationKind::MultipleParents);
        assert_eq!(violations[0].node, Some(NodeId(1)));
    }

    #[test]
    fn validate_reports_dangling_relation() {
        let g = mutate(|v| {
            // drop object n2, leaving its relation edge behind
            let nodes = v["nodes"].as_array_mut().unwrap();
            nodes.retain(|n| n["id"] != 2);
            v["interlayer_edges"]
                .as_array_mut()
                .unwrap()
                .retain(|e| e["child"] != 2);
        });
        let violations = g.validate();
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert_eq!(violations[0].kind, ViolationKind::DanglingEdge);
        assert_eq!(violations[0].node, Some(NodeId(2)));
    }

    #[test]
    fn empty_graph_validates() {
        assert!(SceneGraph::new().validate().is_empty());
    }

    use super::super::ViolationKind;
}
