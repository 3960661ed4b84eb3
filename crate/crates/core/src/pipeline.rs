//! The per-frame build cycle and its on-disk outputs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::fusion::combine_object_embedding;
use crate::graph::{GraphSummary, Layer, MeshVertex, NodeId, SceneGraph};
use crate::ingest::{crop_bbox, crop_masked, load_dataset, DetectionSet, FrameRecord, Palette};
use crate::providers::{ProviderContext, ProviderRegistry, ProviderSet};
use crate::reconstruction::{
    attach_objects_to_places, attach_places_to_rooms, cluster_objects, detect_rooms, extract_places,
    fuse_or_create_objects, sync_places, sync_rooms, ClusterSet, FrameAnnotations, FreeSpace, PlaceParams,
    RoomParams, SemanticVoxelGrid, VoxelIndex,
};
use crate::relations::{assign_relations, extract_pair_features};
use crate::room_features::{assign_room_features, record_pose_embedding, PoseStore};

pub const GRAPH_FILE: &str = "graph.json";
pub const PALETTE_FILE: &str = "palette.json";
pub const CONFIG_FILE: &str = "effective_config.toml";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const PAIR_CROP_DIR: &str = "pair_crops";

/// Stage names, in cycle order.
pub const STAGES: &[&str] = &[
    "object_features",
    "room_embedding",
    "pair_features",
    "integrate",
    "cluster_fuse",
    "relations",
    "mesh_sync",
    "places",
    "rooms",
];

/// Label colors and names stored next to a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelInfo {
    pub palette: Palette,
    #[serde(default)]
    pub label_names: BTreeMap<u32, String>,
}

impl LabelInfo {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PALETTE_FILE);
        let bytes = fs::read(&path).map_err(Error::io(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub frames: usize,
    pub room_cycles: usize,
    /// Accumulated wall time per stage, in seconds.
    pub stages: BTreeMap<String, f64>,
    pub total_s: f64,
}

impl Timings {
    fn add(&mut self, stage: &str, d: Duration) {
        *self.stages.entry(stage.to_string()).or_default() += d.as_secs_f64();
        self.total_s += d.as_secs_f64();
    }

    pub fn report(&self) -> String {
        let mut out = format!("{} frames, {} room cycles, {:.3} s total\n", self.frames, self.room_cycles, self.total_s);
        for stage in STAGES {
            let s = self.stages.get(*stage).copied().unwrap_or(0.0);
            let per = if self.frames == 0 { 0.0 } else { s / self.frames as f64 * 1e3 };
            out.push_str(&format!("  {stage:<16} {s:>9.3} s  {per:>8.2} ms/frame\n"));
        }
        out
    }
}

fn timed<T>(timings: &mut Timings, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.add(stage, start.elapsed());
    out
}

/// What one frame changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameOutcome {
    pub detections: usize,
    pub features: usize,
    pub pair_observations: usize,
    pub created: Vec<NodeId>,
    pub merged: Vec<(NodeId, NodeId)>,
    pub relation_updates: usize,
    pub room_cycle: bool,
}

pub struct Pipeline {
    config: PipelineConfig,
    providers: ProviderSet,
    labels: LabelInfo,
    graph: SceneGraph,
    grid: SemanticVoxelGrid,
    store: PoseStore,
    mesh_ids: HashMap<VoxelIndex, NodeId>,
    crops: BTreeMap<u64, (String, RgbImage)>,
    timings: Timings,
    cycles: u64,
    rooms_current: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, providers: ProviderSet, labels: LabelInfo) -> Result<Self> {
        config.validate()?;
        let voxel_size = config.reconstruction.voxel_size;
        Ok(Self {
            config,
            providers,
            labels,
            graph: SceneGraph::new(),
            grid: SemanticVoxelGrid::new(voxel_size),
            store: PoseStore::new(),
            mesh_ids: HashMap::new(),
            crops: BTreeMap::new(),
            timings: Timings::default(),
            cycles: 0,
            rooms_current: true,
        })
    }

    /// Build providers for `labels` through `registry`.
    pub fn with_registry(config: PipelineConfig, registry: &ProviderRegistry, labels: LabelInfo) -> Result<Self> {
        let ctx = ProviderContext::from_palette(&labels.palette, &labels.label_names);
        let providers = registry.build(&config.provider, &ctx)?;
        Self::new(config, providers, labels)
    }

    pub fn graph(&self) -> &SceneGraph {
        &self.graph
    }

    pub fn grid(&self) -> &SemanticVoxelGrid {
        &self.grid
    }

    pub fn store(&self) -> &PoseStore {
        &self.store
    }

    pub fn providers(&self) -> &ProviderSet {
        &self.providers
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn timings(&self) -> &Timings {
        &self.timings
    }

    /// Latest pair crop per relation edge.
    pub fn pair_crops(&self) -> &BTreeMap<u64, (String, RgbImage)> {
        &self.crops
    }

    fn object_feature(&self, frame: &FrameRecord, dets: &DetectionSet, k: usize) -> Result<Embedding> {
        let embedder = self.providers.embedder.as_ref();
        let masked = embedder.embed_image(&crop_masked(&frame.rgb, &dets.masks[k])?)?;
        let boxed = embedder.embed_image(&crop_bbox(&frame.rgb, &dets.boxes[k])?)?;
        let name = dets
            .label_names
            .get(k)
            .filter(|n| !n.is_empty())
            .cloned()
            .or_else(|| self.labels.label_names.get(&dets.labels[k]).cloned())
            .unwrap_or_else(|| format!("label {}", dets.labels[k]));
        let label = embedder.embed_text(&self.config.search.label_prompt(&name))?;
        Ok(combine_object_embedding(&masked, &boxed, &label, &self.config.fusion)?)
    }

    /// Run one full update cycle for a frame.
    pub fn process_frame(&mut self, frame: &FrameRecord, detections: Option<&DetectionSet>) -> Result<FrameOutcome> {
        let cycle = self.cycles;
        self.cycles += 1;
        let mut out = FrameOutcome::default();
        let (w, h) = frame.rgb.dimensions();
        let dets = match detections {
            Some(d) => {
                d.validate(w, h, frame.index)?;
                Some(d.filtered(self.config.reconstruction.min_detection_confidence))
            }
            None => None,
        };
        let n = dets.as_ref().map_or(0, DetectionSet::len);
        out.detections = n;

        let mut timings = std::mem::take(&mut self.timings);
        let features: Vec<Option<Embedding>> = timed(&mut timings, "object_features", || {
            (0..n)
                .map(|k| {
                    let d = dets.as_ref().expect("n > 0 implies detections");
                    match self.object_feature(frame, d, k) {
                        Ok(f) => Some(f),
                        Err(e) => {
                            log::warn!("frame {}: detection {k} feature skipped: {e}", frame.index);
                            None
                        }
                    }
                })
                .collect()
        });
        out.features = features.iter().flatten().count();
        timed(&mut timings, "room_embedding", || {
            record_pose_embedding(&mut self.store, frame, self.providers.embedder.as_ref())
        });
        let observations = timed(&mut timings, "pair_features", || match &dets {
            Some(d) if d.len() >= 2 => extract_pair_features(
                frame,
                d,
                &self.labels.palette,
                self.providers.vlm.as_ref(),
                &self.config.relations,
            ),
            _ => Default::default(),
        });
        out.pair_observations = observations.len();

        let annotations = FrameAnnotations {
            has_feature: features.iter().map(Option::is_some).collect(),
            relation_ids: (0..n as u64).map(|k| (cycle << 16) | k).collect(),
        };
        let result = (|| -> Result<()> {
            timed(&mut timings, "integrate", || {
                self.grid
                    .integrate_frame(frame, dets.as_ref(), &annotations, self.config.reconstruction.max_depth)
            })?;
            let (clusters, assignments) = timed(&mut timings, "cluster_fuse", || -> Result<_> {
                let clusters = cluster_objects(&self.grid, self.config.reconstruction.min_cluster_voxels);
                let fused = fuse_or_create_objects(
                    &mut self.graph,
                    &clusters,
                    &features,
                    self.config.reconstruction.voxel_size,
                    self.config.reconstruction.merge_iou,
                )?;
                self.grid.strip_feature_transients();
                out.created = fused.created;
                out.merged = fused.merged;
                Ok((clusters, fused.assignments))
            })?;
            let updates = timed(&mut timings, "relations", || {
                assign_relations(&mut self.graph, &mut self.grid, &observations, &annotations.relation_ids)
            })?;
            out.relation_updates = updates.len();
            for u in updates {
                if let Some(crop) = u.crop {
                    self.crops.insert(u.edge_id, crop);
                }
            }
            timed(&mut timings, "mesh_sync", || self.sync_mesh(&clusters, &assignments))?;
            timed(&mut timings, "places", || self.update_places())?;
            self.rooms_current = false;
            let stride = self.config.reconstruction.room_cycle_stride.max(1) as u64;
            if (cycle + 1) % stride == 0 {
                timed(&mut timings, "rooms", || self.room_cycle())?;
                timings.room_cycles += 1;
                out.room_cycle = true;
            }
            Ok(())
        })();
        timings.frames += 1;
        self.timings = timings;
        result?;
        Ok(out)
    }

    /// Mesh vertices mirror the occupied voxels; parents follow clusters.
    fn sync_mesh_vertices(&mut self) -> Result<()> {
        for (idx, voxel) in self.grid.iter() {
            let position = self.grid.center(idx);
            match self.mesh_ids.get(idx) {
                Some(id) => {
                    let v = self.graph.mesh_vertex_mut(*id).expect("mesh vertex exists");
                    v.color = voxel.color;
                    v.label = voxel.label;
                }
                None => {
                    let id = self.graph.add_node(
                        Layer::Mesh,
                        MeshVertex {
                            position,
                            color: voxel.color,
                            label: voxel.label,
                            transient_feature: None,
                            transient_relation_id: None,
                        },
                    )?;
                    self.mesh_ids.insert(*idx, id);
                }
            }
        }
        Ok(())
    }

    fn sync_mesh(&mut self, clusters: &ClusterSet, assignments: &[NodeId]) -> Result<()> {
        self.sync_mesh_vertices()?;
        let mut wanted: HashMap<NodeId, NodeId> = HashMap::new();
        for (c, object) in clusters.clusters.iter().zip(assignments) {
            for idx in &c.members {
                if let Some(v) = self.mesh_ids.get(idx) {
                    wanted.insert(*v, *object);
                }
            }
        }
        let mut ids: Vec<NodeId> = self.mesh_ids.values().copied().collect();
        ids.sort_unstable();
        for v in ids {
            let want = wanted.get(&v).copied();
            if self.graph.parent_of(v) != want {
                match want {
                    Some(p) => self.graph.set_parent(v, p)?,
                    None => self.graph.clear_parent(v),
                }
            }
        }
        Ok(())
    }

    fn free_space(&self) -> Option<FreeSpace> {
        let r = &self.config.reconstruction;
        FreeSpace::from_grid(&self.grid, r.slab_min, r.slab_max)
    }

    fn update_places(&mut self) -> Result<()> {
        let r = self.config.reconstruction.clone();
        let Some(fs) = self.free_space() else { return Ok(()) };
        let layout = extract_places(
            &fs,
            PlaceParams {
                min_sep: r.place_min_sep,
                min_clearance: r.place_min_clearance,
            },
        );
        sync_places(&mut self.graph, &fs, &layout, r.place_height, r.place_min_sep)?;
        attach_objects_to_places(&mut self.graph)?;
        if self.graph.rooms().next().is_some() {
            attach_places_to_rooms(&mut self.graph)?;
        }
        Ok(())
    }

    fn room_cycle(&mut self) -> Result<()> {
        let r = self.config.reconstruction.clone();
        if let Some(fs) = self.free_space() {
            let layout = detect_rooms(
                &fs,
                RoomParams {
                    door_radius: r.door_radius,
                    min_room_area: r.min_room_area,
                },
            );
            sync_rooms(&mut self.graph, &fs, &layout, r.place_height)?;
            attach_places_to_rooms(&mut self.graph)?;
            assign_room_features(&mut self.graph, &self.store, &self.config.rooms, self.config.seed)
                .map_err(|e| Error::Validation(e.to_string()))?;
        }
        self.rooms_current = true;
        Ok(())
    }

    /// Close the stream: run a last room cycle unless the final frame just did.
    pub fn finish(&mut self) -> Result<()> {
        if !self.rooms_current {
            let start = Instant::now();
            self.room_cycle()?;
            self.timings.add("rooms", start.elapsed());
            self.timings.room_cycles += 1;
        }
        Ok(())
    }

    pub fn summary(&self) -> GraphSummary {
        self.graph.summary()
    }

    /// Write the graph and everything needed to query or reason over it.
    pub fn save(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(Error::io(out))?;
        let write = |name: &str, bytes: &[u8]| -> Result<()> {
            let path = out.join(name);
            fs::write(&path, bytes).map_err(Error::io(&path))
        };
        write(GRAPH_FILE, &self.graph.serialize())?;
        let labels = serde_json::to_string_pretty(&self.labels).expect("label info serializes");
        write(PALETTE_FILE, labels.as_bytes())?;
        write(CONFIG_FILE, self.config.to_toml_string().as_bytes())?;
        let summary = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        write(SUMMARY_FILE, summary.as_bytes())?;
        let timings = serde_json::to_string_pretty(&self.timings).expect("timings serialize");
        write(TIMINGS_FILE, timings.as_bytes())?;

        let crop_dir = out.join(PAIR_CROP_DIR);
        fs::create_dir_all(&crop_dir).map_err(Error::io(&crop_dir))?;
        for (edge_id, (rel, img)) in &self.crops {
            // only the crop the graph still points at is worth keeping
            let current = self.graph.relations().any(|e| e.edge_id == *edge_id && e.pair_crop.as_deref() == Some(rel));
            if current {
                let path = out.join(rel);
                img.save(&path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(())
    }
}

/// Result of [`build_dataset`].
pub struct BuildOutput {
    pub pipeline: Pipeline,
    pub frames: usize,
}

/// Replay a dataset directory through a fresh pipeline.
pub fn build_dataset(dataset: &Path, config: PipelineConfig, registry: &ProviderRegistry) -> Result<BuildOutput> {
    let reader = load_dataset(dataset)?;
    let manifest = reader.manifest().clone();
    let labels = LabelInfo {
        palette: manifest.label_palette.clone(),
        label_names: manifest.label_names.clone(),
    };
    let mut pipeline = Pipeline::with_registry(config, registry, labels)?;
    let dim = pipeline.providers.embedder.dim();
    if manifest.embedding_dim != dim {
        return Err(Error::Validation(format!(
            "dataset embedding_dim {} differs from the provider's {dim}",
            manifest.embedding_dim
        )));
    }
    let mut frames = 0;
    for item in reader {
        let (frame, dets) = item?;
        pipeline.process_frame(&frame, dets.as_ref())?;
        frames += 1;
    }
    pipeline.finish()?;
    Ok(BuildOutput { pipeline, frames })
}

/// Load a saved graph directory's graph.
pub fn load_graph(dir: &Path) -> Result<SceneGraph> {
    let path = if dir.is_dir() { dir.join(GRAPH_FILE) } else { dir.to_path_buf() };
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    Ok(SceneGraph::deserialize(&bytes)?)
}

/// Directory holding a graph file (the graph path itself when it is one).
pub fn graph_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}
