use std::collections::{BTreeMap, BTreeSet};

use super::cluster::ClusterSet;
use crate::embedding::Embedding;
use crate::fusion;
use crate::graph::{GraphError, Layer, NodeId, ObjectNode, SceneGraph};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuseOutcome {
    /// Object node per cluster, in cluster order.
    pub assignments: Vec<NodeId>,
    pub created: Vec<NodeId>,
    /// Nodes whose feature absorbed a new observation this cycle.
    pub updated: Vec<NodeId>,
    /// `(survivor, absorbed)` pairs.
    pub merged: Vec<(NodeId, NodeId)>,
}

/// Mean of the per-voxel features of a cluster (each voxel contributes the
/// feature of the detection that labeled it).
fn cluster_feature(counts: &BTreeMap<usize, usize>, features: &[Option<Embedding>]) -> Option<Embedding> {
    let mut refs: Vec<&Embedding> = Vec::new();
    for (k, n) in counts {
        if let Some(Some(f)) = features.get(*k) {
            refs.extend(std::iter::repeat_n(f, *n));
        }
    }
    fusion::average_features(&refs).ok()
}

/// Match each cluster to a same-label object by box IoU, fold its feature
/// in by running average and refresh the object's detection id; clusters
/// without a match become new objects. Objects not observed are retained.
///
/// A node is claimed by at most one cluster per call; further nodes that
/// also overlap a cluster are merged into its best match.
pub fn fuse_or_create_objects(
    graph: &mut SceneGraph,
    clusters: &ClusterSet,
    features: &[Option<Embedding>],
    voxel_size: f64,
    merge_iou: f64,
) -> Result<FuseOutcome, GraphError> {
    let mut out = FuseOutcome::default();
    // each relation id goes to the cluster holding most of its voxels
    let mut id_owner: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (ci, c) in clusters.clusters.iter().enumerate() {
        if let Some((rid, n)) = c.dominant_relation_id() {
            let e = id_owner.entry(rid).or_insert((ci, n));
            if n > e.1 {
                *e = (ci, n);
            }
        }
    }

    let mut claimed: BTreeSet<NodeId> = BTreeSet::new();
    for (ci, c) in clusters.clusters.iter().enumerate() {
        let extent = c.extent(voxel_size);
        let mut candidates: Vec<(f64, NodeId)> = graph
            .objects()
            .filter(|(id, o)| o.label == c.label && !claimed.contains(id))
            .map(|(id, o)| (extent.iou(&o.bbox), id))
            .filter(|(iou, _)| *iou > 0.0 && *iou >= merge_iou)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let node = match candidates.first() {
            Some((_, best)) => {
                for (_, extra) in &candidates[1..] {
                    graph.merge_objects(*best, *extra)?;
                    out.merged.push((*best, *extra));
                }
                *best
            }
            None => {
                let id = graph.add_node(
                    Layer::Object,
                    ObjectNode {
                        centroid: c.centroid,
                        bbox: extent,
                        label: c.label,
                        feature: None,
                        update_count: 0,
                        object_id: None,
                    },
                )?;
                out.created.push(id);
                id
            }
        };
        claimed.insert(node);
        out.assignments.push(node);

        let f_mesh = cluster_feature(&c.feature_indices, features);
        let obj = graph.object_mut(node).expect("matched or created above");
        obj.centroid = c.centroid;
        obj.bbox = extent;
        if let Some(f) = f_mesh {
            let (feature, count) = fusion::running_average(obj.feature.as_ref(), obj.update_count, &f)?;
            obj.feature = Some(feature);
            obj.update_count = count;
            out.updated.push(node);
        }
        if let Some((rid, _)) = c.dominant_relation_id() {
            if id_owner.get(&rid).map(|o| o.0) == Some(ci) {
                obj.object_id = Some(rid);
            }
        }
    }
    Ok(out)
}
