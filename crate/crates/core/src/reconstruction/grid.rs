use serde::Serialize;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::ingest::{DetectionSet, FrameRecord, IngestError};

pub type VoxelIndex = [i64; 3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Voxel {
    pub color: [u8; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    /// Index into the current frame's per-detection features.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transient_feature_index: Option<usize>,
    /// Cycle-unique id of the detection that last labeled the voxel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transient_relation_id: Option<u64>,
    pub hit_count: u64,
}

/// Sparse occupancy grid with per-voxel color and semantic annotations.
/// Only occupied voxels are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticVoxelGrid {
    voxel_size: f64,
    cells: BTreeMap<VoxelIndex, Voxel>,
}

/// Per-frame annotation inputs: which detections carry features, and the
/// relation id to stamp for each detection.
#[derive(Debug, Clone, Default)]
pub struct FrameAnnotations {
    pub has_feature: Vec<bool>,
    pub relation_ids: Vec<u64>,
}

impl SemanticVoxelGrid {
    pub fn new(voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        Self {
            voxel_size,
            cells: BTreeMap::new(),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, idx: &VoxelIndex) -> Option<&Voxel> {
        self.cells.get(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelIndex, &Voxel)> {
        self.cells.iter()
    }

    pub fn index_of(&self, p: [f64; 3]) -> VoxelIndex {
        p.map(|c| (c / self.voxel_size).floor() as i64)
    }

    pub fn center(&self, idx: &VoxelIndex) -> [f64; 3] {
        idx.map(|i| (i as f64 + 0.5) * self.voxel_size)
    }

    /// Mark a voxel occupied; used by tests and synthetic maps.
    pub fn insert(&mut self, idx: VoxelIndex, voxel: Voxel) {
        self.cells.insert(idx, voxel);
    }

    /// Back-project every valid depth pixel into the world and mark its
    /// voxel occupied. Pixels inside a detection mask label the voxel and
    /// stamp the detection's feature index and relation id.
    ///
    /// When several detections claim one pixel or one voxel within a frame,
    /// the higher confidence wins, then the lower detection index.
    pub fn integrate_frame(
        &mut self,
        frame: &FrameRecord,
        detections: Option<&DetectionSet>,
        annotations: &FrameAnnotations,
        max_depth: f64,
    ) -> Result<(), IngestError> {
        frame.pose.validate()?;
        frame.intrinsics.validate()?;
        let iso = frame.pose.isometry();
        let (w, h) = frame.rgb.dimensions();
        if (frame.depth.width(), frame.depth.height()) != (w, h) {
            return Err(IngestError::DimensionMismatch {
                expected: (w, h),
                got: (frame.depth.width(), frame.depth.height()),
            });
        }
        let better = |dets: &DetectionSet, a: usize, b: usize| -> bool {
            // true when detection a beats detection b
            let (ca, cb) = (dets.confidences[a], dets.confidences[b]);
            ca > cb || (ca == cb && a < b)
        };
        // winning detection per voxel within this frame
        let mut claims: HashMap<VoxelIndex, usize> = HashMap::new();
        for v in 0..h {
            for u in 0..w {
                let d = f64::from(frame.depth.get(u, v));
                if d <= 0.0 || d > max_depth || !d.is_finite() {
                    continue;
                }
                let pc = frame.intrinsics.back_project(u, v, d);
                let pw = iso * nalgebra::Point3::new(pc[0], pc[1], pc[2]);
                let idx = self.index_of([pw.x, pw.y, pw.z]);
                let color = frame.rgb.get_pixel(u, v).0;
                let voxel = self.cells.entry(idx).or_insert(Voxel {
                    color,
                    label: None,
                    transient_feature_index: None,
                    transient_relation_id: None,
                    hit_count: 0,
                });
                voxel.color = color;
                voxel.hit_count += 1;

                let Some(dets) = detections else { continue };
                let mut pixel_owner: Option<usize> = None;
                for (k, m) in dets.masks.iter().enumerate() {
                    if m.get(u, v) && pixel_owner.is_none_or(|o| better(dets, k, o)) {
                        pixel_owner = Some(k);
                    }
                }
                let Some(k) = pixel_owner else { continue };
                match claims.entry(idx) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        if !better(dets, k, *e.get()) {
                            continue;
                        }
                        e.insert(k);
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(k);
                    }
                }
                voxel.label = Some(dets.labels[k]);
                voxel.transient_feature_index = annotations
                    .has_feature
                    .get(k)
                    .copied()
                    .unwrap_or(false)
                    .then_some(k);
                voxel.transient_relation_id = annotations.relation_ids.get(k).copied();
            }
        }
        Ok(())
    }

    pub fn strip_feature_transients(&mut self) {
        for v in self.cells.values_mut() {
            v.transient_feature_index = None;
        }
    }

    pub fn strip_relation_transients(&mut self) {
        for v in self.cells.values_mut() {
            v.transient_relation_id = None;
        }
    }

    pub fn strip_transients(&mut self) {
        self.strip_feature_transients();
        self.strip_relation_transients();
    }

    pub fn transient_count(&self) -> usize {
        self.cells
            .values()
            .filter(|v| v.transient_feature_index.is_some() || v.transient_relation_id.is_some())
            .count()
    }

    /// One line per occupied voxel: `i j k r g b label hits`.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for (idx, v) in &self.cells {
            let label = v.label.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                idx[0], idx[1], idx[2], v.color[0], v.color[1], v.color[2], label, v.hit_count
            );
        }
        out
    }

    /// Set the label of an occupied voxel (synthetic maps and tests).
    pub fn set_label(&mut self, idx: &VoxelIndex, label: Option<u32>) -> bool {
        match self.cells.entry(*idx) {
            Entry::Occupied(mut e) => {
                e.get_mut().label = label;
                true
            }
            Entry::Vacant(_) => false,
        }
    }
}

impl Voxel {
    pub fn occupied(color: [u8; 3], label: Option<u32>) -> Self {
        Self {
            color,
            label,
            transient_feature_index: None,
            transient_relation_id: None,
            hit_count: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Box2, DepthImage, Intrinsics, Mask, Pose};
    use image::{Rgb, RgbImage};

    fn frame(w: u32, h: u32) -> FrameRecord {
        FrameRecord {
            index: 0,
            timestamp: 0.0,
            pose: Pose::identity(),
            rgb: RgbImage::from_pixel(w, h, Rgb([10, 20, 30])),
            depth: DepthImage::new(w, h),
            intrinsics: Intrinsics { fx: 10.0, fy: 10.0, cx: 2.0, cy: 2.0 },
        }
    }

    #[test]
    fn single_pixel_lands_in_the_back_projected_voxel() {
        let mut f = frame(4, 4);
        f.depth.set(3, 1, 2.0);
        let mut g = SemanticVoxelGrid::new(0.1);
        g.integrate_frame(&f, None, &FrameAnnotations::default(), 10.0).unwrap();
        // (3.5 - 2) / 10 * 2 = 0.3, (1.5 - 2) / 10 * 2 = -0.1, z = 2
        let expect = [
            (0.3f64 / 0.1).floor() as i64,
            (-0.1f64 / 0.1).floor() as i64,
            (2.0f64 / 0.1).floor() as i64,
        ];
        assert_eq!(g.len(), 1);
        let (idx, v) = g.iter().next().unwrap();
        assert_eq!(*idx, expect);
        assert_eq!(v.color, [10, 20, 30]);
        assert_eq!(v.label, None);
    }

    #[test]
    fn invalid_depth_leaves_grid_unchanged() {
        let f = frame(4, 4);
        let mut g = SemanticVoxelGrid::new(0.1);
        g.integrate_frame(&f, None, &FrameAnnotations::default(), 10.0).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn masked_pixels_carry_label_and_feature_index() {
        let mut f = frame(4, 4);
        f.depth.set(0, 0, 1.0);
        f.depth.set(3, 3, 1.0);
        let dets = DetectionSet {
            boxes: vec![Box2::new(0, 0, 1, 1)],
            masks: vec![Mask::from_fn(4, 4, |x, y| x == 0 && y == 0)],
            labels: vec![7],
            label_names: vec!["cup".into()],
            confidences: vec![1.0],
        };
        let ann = FrameAnnotations { has_feature: vec![true], relation_ids: vec![42] };
        let mut g = SemanticVoxelGrid::new(0.1);
        g.integrate_frame(&f, Some(&dets), &ann, 10.0).unwrap();
        let labeled: Vec<&Voxel> = g.iter().map(|(_, v)| v).filter(|v| v.label.is_some()).collect();
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].label, Some(7));
        assert_eq!(labeled[0].transient_feature_index, Some(0));
        assert_eq!(labeled[0].transient_relation_id, Some(42));
        assert_eq!(g.transient_count(), 1);

        let occupied = g.len();
        g.strip_transients();
        assert_eq!(g.transient_count(), 0);
        g.strip_transients();
        assert_eq!(g.transient_count(), 0);
        assert_eq!(g.len(), occupied);
        assert!(g.iter().any(|(_, v)| v.label == Some(7)));
    }

    #[test]
    fn higher_confidence_wins_conflicts() {
        let mut f = frame(2, 2);
        f.depth.set(0, 0, 1.0);
        let full = Mask::from_fn(2, 2, |_, _| true);
        let dets = DetectionSet {
            boxes: vec![Box2::new(0, 0, 2, 2); 3],
            masks: vec![full.clone(), full.clone(), full],
            labels: vec![1, 2, 3],
            label_names: vec!["a".into(), "b".into(), "c".into()],
            confidences: vec![0.5, 0.9, 0.9],
        };
        let mut g = SemanticVoxelGrid::new(0.1);
        g.integrate_frame(&f, Some(&dets), &FrameAnnotations::default(), 10.0).unwrap();
        assert_eq!(g.iter().next().unwrap().1.label, Some(2));
    }

    #[test]
    fn dump_lists_occupied_cells() {
        let mut g = SemanticVoxelGrid::new(0.5);
        g.insert([1, -2, 3], Voxel::occupied([1, 2, 3], Some(4)));
        g.insert([0, 0, 0], Voxel::occupied([0, 0, 0], None));
        assert_eq!(g.debug_dump(), "0 0 0 0 0 0 - 1\n1 -2 3 1 2 3 4 1\n");
    }
}
