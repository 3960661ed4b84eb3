//! Pair features from the VLM visual encoder and their attachment to the
//! object layer as relation edges.

use std::collections::BTreeMap;

use image::RgbImage;

use crate::config::RelationConfig;
use crate::embedding::Embedding;
use crate::fusion;
use crate::graph::{GraphError, NodeId, SceneGraph};
use crate::ingest::{pair_crop_inpainted, DetectionSet, FrameRecord, Palette};
use crate::providers::VisionLanguageModel;
use crate::reconstruction::SemanticVoxelGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct PairObservation {
    pub feature: Embedding,
    pub crop: Option<RgbImage>,
}

/// Pair features of one frame, keyed by ordered detection indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationObservations {
    pub entries: BTreeMap<(usize, usize), PairObservation>,
}

impl RelationObservations {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ordered pairs admitted for encoding: closest box centers first (ties by
/// index), within `max_pair_centroid_px`, at most `max_pairs_per_frame`.
pub fn admitted_pairs(detections: &DetectionSet, width: u32, height: u32, cfg: &RelationConfig) -> Vec<(usize, usize)> {
    let limit = cfg
        .max_pair_centroid_px
        .unwrap_or_else(|| f64::from(width).hypot(f64::from(height)));
    let centers: Vec<(f64, f64)> = detections.boxes.iter().map(|b| b.center()).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..centers.len() {
        for j in 0..centers.len() {
            if i == j {
                continue;
            }
            let d = (centers[i].0 - centers[j].0).hypot(centers[i].1 - centers[j].1);
            if d <= limit {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    pairs.truncate(cfg.max_pairs_per_frame);
    pairs.into_iter().map(|(_, i, j)| (i, j)).collect()
}

/// Encode the outlined union crop of every admitted pair. Pairs whose crop
/// or encoding fails are skipped with a warning.
pub fn extract_pair_features(
    frame: &FrameRecord,
    detections: &DetectionSet,
    palette: &Palette,
    vlm: &dyn VisionLanguageModel,
    cfg: &RelationConfig,
) -> RelationObservations {
    let mut out = RelationObservations::default();
    for (i, j) in admitted_pairs(detections, frame.rgb.width(), frame.rgb.height(), cfg) {
        let crop = match pair_crop_inpainted(
            &frame.rgb,
            &detections.boxes[i],
            &detections.boxes[j],
            detections.labels[i],
            detections.labels[j],
            palette,
        ) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("frame {}: pair ({i}, {j}) crop failed: {e}", frame.index);
                continue;
            }
        };
        match vlm.visual_encode(&crop) {
            Ok(feature) => {
                let crop = cfg.persist_pair_crops.then_some(crop);
                out.entries.insert((i, j), PairObservation { feature, crop });
            }
            Err(e) => log::warn!("frame {}: pair ({i}, {j}) encoding failed: {e}", frame.index),
        }
    }
    out
}

/// An edge touched by [`assign_relations`], with the crop to persist.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeUpdate {
    pub edge_id: u64,
    pub endpoints: (NodeId, NodeId),
    pub update_count: u64,
    pub crop: Option<(String, RgbImage)>,
}

pub fn pair_crop_path(edge_id: u64, n: u64) -> String {
    format!("pair_crops/{edge_id}_{n}.png")
}

/// Fold this frame's pair observations into relation edges between the
/// objects currently carrying the frame's detection ids, then clear the
/// relation ids from the grid.
///
/// `relation_ids[k]` is the id stamped for detection `k`. Both directions
/// of a pair are averaged first, so one co-observation is one update.
pub fn assign_relations(
    graph: &mut SceneGraph,
    grid: &mut SemanticVoxelGrid,
    observations: &RelationObservations,
    relation_ids: &[u64],
) -> Result<Vec<EdgeUpdate>, GraphError> {
    let node_of: BTreeMap<u64, NodeId> = graph
        .objects()
        .filter_map(|(id, o)| o.object_id.map(|rid| (rid, id)))
        .collect();
    let resolve = |k: usize| relation_ids.get(k).and_then(|rid| node_of.get(rid)).copied();

    let mut grouped: BTreeMap<(NodeId, NodeId), Vec<&PairObservation>> = BTreeMap::new();
    for ((i, j), obs) in &observations.entries {
        let (Some(a), Some(b)) = (resolve(*i), resolve(*j)) else {
            continue;
        };
        if a == b {
            continue;
        }
        grouped.entry((a.min(b), a.max(b))).or_default().push(obs);
    }

    let mut updates = Vec::with_capacity(grouped.len());
    for ((a, b), obs) in grouped {
        let feats: Vec<&Embedding> = obs.iter().map(|o| &o.feature).collect();
        let mean = fusion::average_features(&feats)?;
        let edge = graph.upsert_relation(a, b, &mean)?;
        let (edge_id, n) = (edge.edge_id, edge.update_count);
        let crop = obs.iter().find_map(|o| o.crop.clone()).map(|img| (pair_crop_path(edge_id, n), img));
        if let Some((path, _)) = &crop {
            graph.relation_mut(a, b).expect("just upserted").pair_crop = Some(path.clone());
        }
        updates.push(EdgeUpdate {
            edge_id,
            endpoints: (a, b),
            update_count: n,
            crop,
        });
    }
    grid.strip_relation_transients();
    Ok(updates)
}
