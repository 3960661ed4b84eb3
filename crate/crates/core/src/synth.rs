//! Synthetic inputs: ray-cast box worlds rendered into datasets, and small
//! scripted fixtures for the reasoning and retrieval evaluations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::graph::{
    Aabb, BuildingNode, Layer, NodeId, ObjectNode, PlaceNode, RoomExtent, RoomNode, SceneGraph,
};
use crate::hashing::SplitMix64;
use crate::ingest::{
    DatasetManifest, DatasetWriter, DepthImage, DetectionSet, FrameRecord, Intrinsics, Mask, Palette, Pose,
};
use crate::pipeline::{LabelInfo, CONFIG_FILE, GRAPH_FILE, PALETTE_FILE};
use crate::providers::{ChatRule, DescribeRule, MockEmbedder, Transcript};
use crate::reasoning::TaskTruth;
use crate::search::{topk_accuracy_embedded, RetrievalReport, SearchError};

pub const WIDTH: u32 = 64;
pub const HEIGHT: u32 = 48;
pub const FOCAL: f64 = 40.0;
pub const CAMERA_HEIGHT: f64 = 1.2;
pub const WALL_HEIGHT: f64 = 2.5;
/// Detections smaller than this many visible pixels are dropped.
pub const MIN_DETECTION_PIXELS: usize = 8;

const WALL_COLOR: [u8; 3] = [150, 150, 150];
const FLOOR_COLOR: [u8; 3] = [110, 90, 70];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: [u8; 3],
    pub label: Option<u32>,
}

impl SceneBox {
    /// Slab test; the entry distance of a ray starting outside the box.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut n, mut f) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if n > f {
                std::mem::swap(&mut n, &mut f);
            }
            t0 = t0.max(n);
            t1 = t1.min(f);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 1e-9).then_some(t0)
    }
}

/// A furnished floor plan made of axis-aligned boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub boxes: Vec<SceneBox>,
    pub labels: LabelInfo,
    /// Camera stations, one list per room.
    pub stations: Vec<Vec<[f64; 2]>>,
    pub voxel_size: f64,
}

/// Camera looking along yaw `theta` (from +x, counter-clockwise) and pitched
/// down by `phi`, in the optical convention (x right, y down, z forward).
pub fn camera_pose(position: [f64; 3], theta: f64, phi: f64) -> Pose {
    let f = Vector3::new(theta.cos() * phi.cos(), theta.sin() * phi.cos(), -phi.sin());
    let r = Vector3::new(theta.sin(), -theta.cos(), 0.0);
    let d = f.cross(&r);
    let m = Matrix3::from_columns(&[r, d, f]);
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Pose::from_isometry(&Isometry3::from_parts(
        Translation3::new(position[0], position[1], position[2]),
        rot,
    ))
}

pub fn intrinsics() -> Intrinsics {
    Intrinsics {
        fx: FOCAL,
        fy: FOCAL,
        cx: f64::from(WIDTH) / 2.0,
        cy: f64::from(HEIGHT) / 2.0,
    }
}

/// One rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub detections: DetectionSet,
}

impl Scene {
    pub fn render(&self, pose: &Pose, intr: &Intrinsics) -> View {
        let iso = pose.isometry();
        let origin = iso.translation.vector;
        let mut rgb = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([200, 220, 255]));
        let mut depth = DepthImage::new(WIDTH, HEIGHT);
        let mut owner: Vec<Option<usize>> = vec![None; (WIDTH * HEIGHT) as usize];
        for v in 0..HEIGHT {
            for u in 0..WIDTH {
                let c = intr.back_project(u, v, 1.0);
                let dir = iso.rotation * Vector3::new(c[0], c[1], c[2]);
                let mut best: Option<(f64, usize)> = None;
                for (i, b) in self.boxes.iter().enumerate() {
                    if let Some(t) = b.hit(&origin, &dir) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, i));
                        }
                    }
                }
                if let Some((t, i)) = best {
                    rgb.put_pixel(u, v, Rgb(self.boxes[i].color));
                    depth.set(u, v, t as f32);
                    owner[(v * WIDTH + u) as usize] = Some(i);
                }
            }
        }
        let mut detections = DetectionSet::default();
        let mut instances: BTreeSet<usize> = owner.iter().flatten().copied().collect();
        instances.retain(|i| self.boxes[*i].label.is_some());
        for i in instances {
            let mask = Mask::from_fn(WIDTH, HEIGHT, |x, y| owner[(y * WIDTH + x) as usize] == Some(i));
            if mask.count() < MIN_DETECTION_PIXELS {
                continue;
            }
            let label = self.boxes[i].label.expect("filtered to labeled boxes");
            detections.boxes.push(mask.tight_box().expect("mask is non-empty"));
            detections.masks.push(mask);
            detections.labels.push(label);
            detections
                .label_names
                .push(self.labels.label_names.get(&label).cloned().unwrap_or_default());
            detections.confidences.push(1.0);
        }
        View { rgb, depth, detections }
    }

    /// Poses spinning in place at every station, spread over `frames`.
    pub fn trajectory(&self, frames: usize) -> Vec<Pose> {
        let stations: Vec<[f64; 2]> = self.stations.iter().flatten().copied().collect();
        if stations.is_empty() {
            return Vec::new();
        }
        let per = frames.div_ceil(stations.len()).max(1);
        (0..frames)
            .map(|i| {
                let s = stations[(i / per).min(stations.len() - 1)];
                let k = i % per;
                // a little more than one turn, offset so passes interleave
                let theta = std::f64::consts::TAU * (k as f64 + 0.37 * (i / per) as f64) / per as f64 * 1.25;
                let phi = if k % 2 == 0 { 0.35 } else { 0.2 };
                camera_pose([s[0], s[1], CAMERA_HEIGHT], theta, phi)
            })
            .collect()
    }

    /// Like [`Scene::trajectory`] but each pose is jittered by up to `jitter`
    /// metres and turned to a random heading, reproducibly from `seed`.
    pub fn random_trajectory(&self, frames: usize, jitter: f64, seed: u64) -> Vec<Pose> {
        let mut rng = SplitMix64::new(seed);
        self.trajectory(frames)
            .into_iter()
            .map(|pose| {
                let t = pose.position;
                let dx = (rng.next_f64() * 2.0 - 1.0) * jitter;
                let dy = (rng.next_f64() * 2.0 - 1.0) * jitter;
                let theta = rng.next_f64() * std::f64::consts::TAU;
                let phi = 0.15 + 0.25 * rng.next_f64();
                camera_pose([t[0] + dx, t[1] + dy, t[2]], theta, phi)
            })
            .collect()
    }

    pub fn frame(&self, index: usize, pose: Pose) -> (FrameRecord, DetectionSet) {
        let intr = intrinsics();
        let view = self.render(&pose, &intr);
        let frame = FrameRecord {
            index,
            timestamp: index as f64 * 0.1,
            pose,
            rgb: view.rgb,
            depth: view.depth,
            intrinsics: intr,
        };
        (frame, view.detections)
    }

    /// Every frame of a `frames`-long walk, rendered in memory.
    pub fn frames(&self, frames: usize) -> impl Iterator<Item = (FrameRecord, DetectionSet)> + '_ {
        self.trajectory(frames)
            .into_iter()
            .enumerate()
            .map(|(i, p)| self.frame(i, p))
    }

    pub fn write_dataset(&self, root: &Path, name: &str, frames: usize, embedding_dim: usize) -> Result<DatasetManifest> {
        let mut w = DatasetWriter::create(
            root,
            name,
            embedding_dim,
            self.labels.palette.clone(),
            self.labels.label_names.clone(),
        )?;
        for (frame, dets) in self.frames(frames) {
            w.write_frame(&frame, Some(&dets))?;
        }
        Ok(w.finish()?)
    }
}

/// Object names and colors shared by the synthetic scenes.
pub const OBJECTS: &[(&str, [u8; 3])] = &[
    ("chair", [230, 25, 75]),
    ("table", [60, 180, 75]),
    ("trash can", [255, 225, 25]),
    ("trash bag", [0, 130, 200]),
    ("sofa", [245, 130, 48]),
    ("plant", [145, 30, 180]),
    ("lamp", [70, 240, 240]),
    ("backpack", [240, 50, 230]),
    ("fan", [210, 245, 60]),
    ("monitor", [250, 190, 212]),
];

pub fn object_labels() -> LabelInfo {
    let palette = Palette::new(OBJECTS.iter().enumerate().map(|(i, (_, c))| (i as u32, *c)).collect())
        .expect("scene colors are distinct");
    let label_names = OBJECTS.iter().enumerate().map(|(i, (n, _))| (i as u32, n.to_string())).collect();
    LabelInfo { palette, label_names }
}

fn label_of(name: &str) -> u32 {
    OBJECTS.iter().position(|(n, _)| *n == name).expect("known object name") as u32
}

/// Builds walls on voxel-aligned cells so every surface falls well inside
/// one voxel.
struct Plan {
    vs: f64,
    boxes: Vec<SceneBox>,
}

impl Plan {
    fn cell_span(&self, lo: i64, hi: i64) -> (f64, f64) {
        (lo as f64 * self.vs + 0.2 * self.vs, (hi + 1) as f64 * self.vs - 0.2 * self.vs)
    }

    /// Wall occupying cells `x0..=x1` by `y0..=y1`.
    fn wall(&mut self, x0: i64, x1: i64, y0: i64, y1: i64) {
        let (ax, bx) = self.cell_span(x0, x1);
        let (ay, by) = self.cell_span(y0, y1);
        self.boxes.push(SceneBox {
            min: [ax, ay, 0.0],
            max: [bx, by, WALL_HEIGHT],
            color: WALL_COLOR,
            label: None,
        });
    }

    fn object(&mut self, name: &str, center: [f64; 2], size: [f64; 3]) {
        self.boxes.push(SceneBox {
            min: [center[0] - size[0] / 2.0, center[1] - size[1] / 2.0, 0.02],
            max: [center[0] + size[0] / 2.0, center[1] + size[1] / 2.0, 0.02 + size[2]],
            color: OBJECTS[label_of(name) as usize].1,
            label: Some(label_of(name)),
        });
    }
}

/// Two rooms side by side, joined by a doorway `door_cells` voxels wide in
/// the dividing wall. Room A spans cells x 1..=39, room B x 41..=80, both
/// y 1..=30.
pub fn two_room_scene(door_cells: usize) -> Scene {
    let vs = 0.1;
    let mut p = Plan { vs, boxes: Vec::new() };
    p.boxes.push(SceneBox {
        min: [-0.5, -0.5, -0.2],
        max: [8.7, 3.7, 0.02],
        color: FLOOR_COLOR,
        label: None,
    });
    p.wall(0, 81, 0, 0);
    p.wall(0, 81, 31, 31);
    p.wall(0, 0, 0, 31);
    p.wall(81, 81, 0, 31);
    let d0 = 15;
    let d1 = d0 + door_cells as i64 - 1;
    p.wall(40, 40, 0, d0 - 1);
    p.wall(40, 40, d1 + 1, 31);

    p.object("chair", [0.8, 0.7], [0.45, 0.45, 0.9]);
    p.object("table", [1.6, 2.4], [1.0, 0.6, 0.75]);
    p.object("trash can", [3.3, 0.6], [0.4, 0.4, 0.6]);
    p.object("trash bag", [3.4, 1.3], [0.4, 0.4, 0.45]);
    p.object("monitor", [0.6, 2.6], [0.5, 0.3, 0.5]);
    p.object("sofa", [6.2, 2.7], [1.6, 0.6, 0.8]);
    p.object("plant", [4.7, 0.6], [0.4, 0.4, 1.0]);
    p.object("lamp", [7.6, 0.6], [0.35, 0.35, 1.5]);
    p.object("backpack", [6.0, 0.7], [0.35, 0.3, 0.45]);
    p.object("fan", [7.6, 2.0], [0.35, 0.35, 1.1]);

    Scene {
        boxes: p.boxes,
        labels: object_labels(),
        stations: vec![vec![[1.4, 1.4], [2.6, 1.7]], vec![[5.6, 1.5], [6.9, 1.4]]],
        voxel_size: vs,
    }
}

/// Frames of [`pair_stream`] in which both objects of [`pair_scene`] are in
/// view.
pub const PAIR_COOBSERVED: [usize; 4] = [1, 4, 6, 9];

/// A chair and a table side by side in front of a camera at the origin.
pub fn pair_scene() -> Scene {
    let vs = 0.1;
    let mut p = Plan { vs, boxes: Vec::new() };
    p.boxes.push(SceneBox {
        min: [-3.0, -3.0, -0.2],
        max: [3.0, 3.0, 0.02],
        color: FLOOR_COLOR,
        label: None,
    });
    p.object("chair", [2.0, 0.45], [0.45, 0.45, 0.9]);
    p.object("table", [2.0, -0.55], [0.6, 0.6, 0.75]);
    Scene {
        boxes: p.boxes,
        labels: object_labels(),
        stations: vec![vec![[0.0, 0.0]]],
        voxel_size: vs,
    }
}

/// Ten poses turning in place at the origin: both objects in view on
/// [`PAIR_COOBSERVED`], one of them or neither otherwise.
pub fn pair_stream() -> Vec<Pose> {
    (0..10)
        .map(|i| {
            let theta = if PAIR_COOBSERVED.contains(&i) {
                0.0
            } else {
                match i % 3 {
                    0 => 0.8,
                    1 => -0.8,
                    _ => std::f64::consts::PI,
                }
            };
            camera_pose([0.0, 0.0, CAMERA_HEIGHT], theta, 0.35)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reasoning fixture

pub const TRASH_TASK: &str = "Throw all the trash bags into the trash can.";
pub const SEARCH_TASK: &str = "Find the chair.";
pub const ABSENT_TASK: &str = "Water the plants with the watering can.";
pub const MALFORMED_TASK: &str = "Tidy up the desk.";

/// A hand-built graph with scripted providers and ground truth.
pub struct ReasoningFixture {
    pub graph: SceneGraph,
    pub labels: LabelInfo,
    pub transcript: Transcript,
    pub config: PipelineConfig,
    pub truth: Vec<TaskTruth>,
    pub bags: Vec<NodeId>,
    pub can: NodeId,
    pub chair: NodeId,
}

fn axis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Four trash bags and one trash can, each bag related to the can, plus a
/// chair related to one bag.
pub fn trash_fixture() -> ReasoningFixture {
    let dim = 16;
    let mut graph = SceneGraph::new();
    let names = ["trash bag", "trash can", "chair"];
    let labels = {
        let info = object_labels();
        let keep: BTreeMap<u32, [u8; 3]> = names
            .iter()
            .map(|n| (label_of(n), info.palette.color(label_of(n)).expect("known")))
            .collect();
        LabelInfo {
            palette: Palette::new(keep).expect("distinct"),
            label_names: names.iter().map(|n| (label_of(n), n.to_string())).collect(),
        }
    };
    let object = |g: &mut SceneGraph, name: &str, at: [f64; 2], salt: usize| -> NodeId {
        let c = [at[0], at[1], 0.25];
        let feature = names.iter().position(|n| *n == name).expect("fixture name");
        // small per-instance offset keeps features distinct
        let mut f = axis(dim, feature);
        f[3 + salt % (dim - 3)] = 0.05;
        g.add_node(
            Layer::Object,
            ObjectNode {
                centroid: c,
                bbox: Aabb::new([c[0] - 0.2, c[1] - 0.2, 0.0], [c[0] + 0.2, c[1] + 0.2, 0.5]),
                label: label_of(name),
                feature: Some(Embedding::new(f)),
                update_count: 1,
                object_id: None,
            },
        )
        .expect("valid object")
    };
    let bags: Vec<NodeId> = (0..4)
        .map(|i| object(&mut graph, "trash bag", [1.0 + 0.5 * i as f64, 1.0], i))
        .collect();
    let can = object(&mut graph, "trash can", [2.0, 2.0], 7);
    let chair = object(&mut graph, "chair", [4.0, 2.0], 9);

    let rdim = 16;
    for (i, b) in bags.iter().enumerate() {
        let mut f = axis(rdim, 0);
        f[1 + i] = 0.1;
        graph.upsert_relation(*b, can, &Embedding::new(f)).expect("objects exist");
    }
    graph.upsert_relation(bags[0], chair, &Embedding::new(axis(rdim, 8))).expect("objects exist");

    let room = graph
        .add_node(
            Layer::Room,
            RoomNode {
                centroid: [2.5, 1.5, 0.95],
                feature_clusters: Vec::new(),
                extent: RoomExtent::from_cells(0.1, (0..50).flat_map(|x| (0..30).map(move |y| (x, y)))),
            },
        )
        .expect("room");
    let place = graph
        .add_node(
            Layer::Place,
            PlaceNode {
                centroid: [2.5, 1.5, 0.95],
                neighbors: BTreeSet::new(),
                cell: Some([25, 15]),
            },
        )
        .expect("place");
    let building = graph
        .add_node(Layer::Building, BuildingNode { centroid: [2.5, 1.5, 0.95] })
        .expect("building");
    let objects: Vec<NodeId> = graph.objects().map(|(id, _)| id).collect();
    for o in objects {
        graph.set_parent(o, place).expect("object under place");
    }
    graph.set_parent(place, room).expect("place under room");
    graph.set_parent(room, building).expect("room under building");

    let anchors = names.iter().enumerate().map(|(i, n)| (n.to_string(), axis(dim, i))).collect();
    let plan = r#"{"relevant_objects": ["trash bag", "trash can"], "subtasks": [{"object_a": "trash bag", "object_b": "trash can", "prompt": "Can the trash bag be put into the trash can?"}]}"#;
    let transcript = Transcript {
        anchors,
        image_tags: Vec::new(),
        describe: vec![DescribeRule {
            prompt_contains: "Can the trash bag be put into the trash can?".into(),
            input_hash: None,
            response: "The trash bag is next to an open trash can with room inside.".into(),
        }],
        chat: vec![
            ChatRule {
                system_contains: Some("EXECUTE".into()),
                user_contains: "open trash can".into(),
                response: "EXECUTE. The can is open and the bag fits.".into(),
            },
            ChatRule {
                system_contains: Some("relevant_objects".into()),
                user_contains: TRASH_TASK.into(),
                response: plan.into(),
            },
            ChatRule {
                system_contains: Some("relevant_objects".into()),
                user_contains: SEARCH_TASK.into(),
                response: r#"{"relevant_objects": ["chair"], "subtasks": []}"#.into(),
            },
            ChatRule {
                system_contains: Some("relevant_objects".into()),
                user_contains: ABSENT_TASK.into(),
                response: r#"{"relevant_objects": ["plant", "watering can"], "subtasks": [{"object_a": "watering can", "object_b": "plant", "prompt": "Can the plant be watered?"}]}"#.into(),
            },
            ChatRule {
                system_contains: Some("relevant_objects".into()),
                user_contains: MALFORMED_TASK.into(),
                response: "{\"relevant_objects\": [\"desk\"".into(),
            },
        ],
    };

    let mut config = PipelineConfig::default();
    config.provider.embedding_dim = dim;
    config.provider.relation_dim = rdim;
    config.search.object_threshold = 0.9;

    let truth = vec![
        TaskTruth {
            task: TRASH_TASK.into(),
            positive_pairs: bags.iter().map(|b| (*b, can)).collect(),
            positive_objects: None,
        },
        TaskTruth {
            task: SEARCH_TASK.into(),
            positive_pairs: Vec::new(),
            positive_objects: Some(vec![chair]),
        },
    ];
    ReasoningFixture {
        graph,
        labels,
        transcript,
        config,
        truth,
        bags,
        can,
        chair,
    }
}

pub const TRANSCRIPT_FILE: &str = "transcript.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const FIXTURE_CONFIG_FILE: &str = "config.toml";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

impl ReasoningFixture {
    /// Lay the fixture out as a graph directory plus config, transcript and
    /// ground truth. Returns the config path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut config = self.config.clone();
        config.provider.transcript = Some(PathBuf::from(TRANSCRIPT_FILE));
        let config_path = dir.join(FIXTURE_CONFIG_FILE);
        write_file(&config_path, config.to_toml_string().as_bytes())?;
        write_file(
            &dir.join(TRANSCRIPT_FILE),
            serde_json::to_string_pretty(&self.transcript).expect("transcript serializes").as_bytes(),
        )?;
        write_file(
            &dir.join(TRUTH_FILE),
            serde_json::to_string_pretty(&self.truth).expect("truth serializes").as_bytes(),
        )?;
        let graph_dir = dir.join("graph");
        write_file(&graph_dir.join(GRAPH_FILE), &self.graph.serialize())?;
        write_file(
            &graph_dir.join(PALETTE_FILE),
            serde_json::to_string_pretty(&self.labels).expect("labels serialize").as_bytes(),
        )?;
        write_file(&graph_dir.join(CONFIG_FILE), config.to_toml_string().as_bytes())?;
        Ok(config_path)
    }
}

// ---------------------------------------------------------------------------
// Retrieval fixtures

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalObject {
    pub truth: String,
    pub feature: Vec<f64>,
}

/// Object features with their true names, scored against a vocabulary
/// embedded by a mock embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalFixture {
    pub dim: usize,
    pub seed: u64,
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub anchors: BTreeMap<String, Vec<f64>>,
    pub objects: Vec<RetrievalObject>,
}

impl RetrievalFixture {
    pub fn embedder(&self) -> MockEmbedder {
        self.anchors
            .iter()
            .fold(MockEmbedder::new(self.seed, self.dim), |e, (w, v)| e.with_anchor(w, v.clone()))
    }

    pub fn vocabulary_embeddings(&self) -> Vec<Embedding> {
        let e = self.embedder();
        self.vocabulary.iter().map(|w| e.text_vector(w)).collect()
    }

    /// Acc_k as fractions.
    pub fn accuracy(&self, ks: &[usize]) -> std::result::Result<BTreeMap<usize, f64>, SearchError> {
        let truth = self
            .objects
            .iter()
            .map(|o| {
                self.vocabulary
                    .iter()
                    .position(|w| *w == o.truth)
                    .ok_or_else(|| SearchError::UnknownLabel(o.truth.clone()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let features: Vec<Embedding> = self.objects.iter().map(|o| Embedding::new(o.feature.clone())).collect();
        topk_accuracy_embedded(&features, &truth, &self.vocabulary_embeddings(), ks)
    }

    pub fn report(&self, ks: &[usize]) -> std::result::Result<RetrievalReport, SearchError> {
        let acc = self.accuracy(ks)?;
        let k_max = ks.iter().copied().max().unwrap_or(1);
        Ok(RetrievalReport::new(&acc, k_max, self.objects.len()))
    }
}

pub fn vocabulary(n: usize) -> Vec<String> {
    let mut words: Vec<String> = OBJECTS.iter().map(|(w, _)| w.to_string()).collect();
    words.truncate(n);
    words.extend((words.len()..n).map(|i| format!("object {i}")));
    words
}

/// Every object's feature is exactly its name's anchor direction.
pub fn anchor_retrieval_fixture(objects: usize, vocab: usize, dim: usize, seed: u64) -> RetrievalFixture {
    let vocabulary = vocabulary(vocab);
    let mut rng = SplitMix64::new(seed);
    let anchors: BTreeMap<String, Vec<f64>> = vocabulary
        .iter()
        .map(|w| (w.clone(), (0..dim).map(|_| rng.next_gaussianish()).collect()))
        .collect();
    let fx = RetrievalFixture { dim, seed, vocabulary, anchors, objects: Vec::new() };
    let e = fx.embedder();
    let objects = (0..objects)
        .map(|i| {
            let truth = fx.vocabulary[(rng.next_u64() as usize + i) % fx.vocabulary.len()].clone();
            RetrievalObject { feature: e.text_vector(&truth).into_inner(), truth }
        })
        .collect();
    RetrievalFixture { objects, ..fx }
}

/// Hard cases: features blended between the true word and close
/// distractors, including exact ties, scaled vectors and truths that rank
/// far down the list.
pub fn adversarial_retrieval_fixture(objects: usize, vocab: usize, dim: usize, seed: u64) -> RetrievalFixture {
    let vocabulary = vocabulary(vocab.max(2));
    let fx = RetrievalFixture { dim, seed, vocabulary, anchors: BTreeMap::new(), objects: Vec::new() };
    let words = fx.vocabulary_embeddings();
    let mut rng = SplitMix64::new(seed ^ 0xadd5);
    let n = words.len();
    let objects = (0..objects)
        .map(|i| {
            let t = (rng.next_u64() as usize) % n;
            let d = (t + 1 + (rng.next_u64() as usize) % (n - 1)) % n;
            let e = (d + 1 + (rng.next_u64() as usize) % (n - 1)) % n;
            let (wt, wd, we) = (&words[t], &words[d], &words[e]);
            let mix: Vec<f64> = match i % 5 {
                // exact tie between truth and a distractor
                0 => wt.iter().zip(wd.iter()).map(|(a, b)| a + b).collect(),
                // distractor slightly ahead
                1 => wt.iter().zip(wd.iter()).map(|(a, b)| 0.98 * a + b).collect(),
                // truth slightly ahead, scaled
                2 => wt.iter().zip(wd.iter()).map(|(a, b)| 3.0 * (a + 0.97 * b)).collect(),
                // three-way blend
                3 => wt.iter().zip(wd.iter()).zip(we.iter()).map(|((a, b), c)| 0.5 * a + 0.6 * b + 0.55 * c).collect(),
                // mostly noise
                _ => (0..dim).map(|k| rng.next_gaussianish() + 0.1 * wt[k]).collect(),
            };
            RetrievalObject { truth: fx.vocabulary[t].clone(), feature: mix }
        })
        .collect();
    RetrievalFixture { objects, ..fx }
}
