//! Replayed datasets and 2D image handling.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/frames/000000.json   pose, intrinsics, image paths, detections
//! <root>/rgb/000000.png       8-bit RGB
//! <root>/depth/000000.png     16-bit depth in millimeters, 0 = invalid
//! ```
//!
//! Masks are stored run-length encoded over the full image (see [`Mask::to_rle`]).

mod crop;
mod mask;
mod palette;

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::{Isometry3, Point3 as NPoint3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use crop::{crop_bbox, crop_masked, draw_outline, pair_crop_inpainted, OUTLINE_STROKE};
pub use mask::{Box2, Mask};
pub use palette::{label_color, nearest_color_name, Palette, Rgb, NAMED_COLORS};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: schema violation: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("frame {frame}: {message}")]
    Validation { frame: usize, message: String },
    #[error("frame {frame}: timestamp {timestamp} does not increase past {previous}")]
    NonMonotonicTimestamp {
        frame: usize,
        timestamp: f64,
        previous: f64,
    },
    #[error("palette color {color:?} of label {label} is already used by another label")]
    DuplicatePaletteColor { label: u32, color: [u8; 3] },
    #[error("label {0} has no palette color")]
    UnknownLabel(u32),
    #[error("mask is empty")]
    EmptyMask,
    #[error("degenerate box {0:?}")]
    DegenerateBox(Box2),
    #[error("box {bbox:?} outside {width}x{height} image")]
    BoxOutOfBounds { bbox: Box2, width: u32, height: u32 },
    #[error("expected {expected:?} pixels, got {got:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("run-length mask: {0}")]
    Rle(String),
    #[error("{path}: image: {message}")]
    Image { path: PathBuf, message: String },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Camera pose in the world frame; the orientation maps the camera optical
/// frame (x right, y down, z forward) into the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub position: [f64; 3],
    /// Unit quaternion `[x, y, z, w]`.
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            orientation: [0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let q = self.orientation;
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm - 1.0).abs().le(&1e-6) || !self.position.iter().all(|v| v.is_finite()) {
            return Err(IngestError::InvalidPose(format!(
                "quaternion norm {norm} (must be 1 within 1e-6)"
            )));
        }
        Ok(())
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let [x, y, z, w] = self.orientation;
        let rot = UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z));
        Isometry3::from_parts(
            Translation3::new(self.position[0], self.position[1], self.position[2]),
            rot,
        )
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        let t = iso.translation.vector;
        Self {
            position: [t.x, t.y, t.z],
            orientation: [q.i, q.j, q.k, q.w],
        }
    }

    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let w = self.isometry() * NPoint3::new(p[0], p[1], p[2]);
        [w.x, w.y, w.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), IngestError> {
        let all = [self.fx, self.fy, self.cx, self.cy];
        if self.fx > 0.0 && self.fy > 0.0 && all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(IngestError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    /// Camera-frame point of pixel `(u, v)` (pixel centers at +0.5) at `depth`.
    pub fn back_project(&self, u: u32, v: u32, depth: f64) -> [f64; 3] {
        let x = (f64::from(u) + 0.5 - self.cx) / self.fx;
        let y = (f64::from(v) + 0.5 - self.cy) / self.fy;
        [x * depth, y * depth, depth]
    }
}

/// Per-pixel depth in meters; 0 marks an invalid reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, meters: f32) {
        self.data[(y * self.width + x) as usize] = meters;
    }

    fn to_png16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let mm = (f64::from(self.get(x, y)) * 1000.0).round();
            Luma([mm.clamp(0.0, f64::from(u16::MAX)) as u16])
        })
    }

    fn from_png16(img: &ImageBuffer<Luma<u16>, Vec<u16>>) -> Self {
        let mut d = DepthImage::new(img.width(), img.height());
        for (x, y, p) in img.enumerate_pixels() {
            d.set(x, y, f32::from(p.0[0]) / 1000.0);
        }
        d
    }
}

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub intrinsics: Intrinsics,
}

/// Detections for one frame; all lists are parallel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub boxes: Vec<Box2>,
    pub masks: Vec<Mask>,
    pub labels: Vec<u32>,
    pub label_names: Vec<String>,
    /// Detector confidence per detection; 1.0 when the source omits it.
    pub confidences: Vec<f64>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn validate(&self, width: u32, height: u32, frame: usize) -> Result<(), IngestError> {
        let n = self.boxes.len();
        let lens = [
            self.masks.len(),
            self.labels.len(),
            self.label_names.len(),
            self.confidences.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(IngestError::Validation {
                frame,
                message: format!("detection lists have unequal lengths ({n} boxes, {lens:?})"),
            });
        }
        for (k, (b, m)) in self.boxes.iter().zip(&self.masks).enumerate() {
            if b.is_empty() || !b.within(width, height) {
                return Err(IngestError::Validation {
                    frame,
                    message: format!("detection {k}: box {b:?} empty or outside {width}x{height}"),
                });
            }
            if m.width() != width || m.height() != height {
                return Err(IngestError::Validation {
                    frame,
                    message: format!("detection {k}: mask size differs from image"),
                });
            }
            let outside = (0..height)
                .flat_map(|y| (0..width).map(move |x| (x, y)))
                .any(|(x, y)| m.get(x, y) && !b.contains(x, y));
            if outside {
                return Err(IngestError::Validation {
                    frame,
                    message: format!("detection {k}: mask extends outside its box"),
                });
            }
        }
        Ok(())
    }

    /// Drop detections below `min_confidence`.
    pub fn filtered(&self, min_confidence: f64) -> DetectionSet {
        let keep: Vec<usize> = (0..self.len())
            .filter(|k| self.confidences[*k] >= min_confidence)
            .collect();
        DetectionSet {
            boxes: keep.iter().map(|k| self.boxes[*k]).collect(),
            masks: keep.iter().map(|k| self.masks[*k].clone()).collect(),
            labels: keep.iter().map(|k| self.labels[*k]).collect(),
            label_names: keep.iter().map(|k| self.label_names[*k].clone()).collect(),
            confidences: keep.iter().map(|k| self.confidences[*k]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub frame_count: usize,
    pub embedding_dim: usize,
    pub label_palette: Palette,
    /// Human-readable name per label index.
    #[serde(default)]
    pub label_names: BTreeMap<u32, String>,
    /// Frame record paths relative to the dataset root.
    pub frames: Vec<String>,
}

impl DatasetManifest {
    pub fn validate(&self, path: &Path) -> Result<(), IngestError> {
        self.label_palette.validate()?;
        if self.frames.len() != self.frame_count {
            return Err(IngestError::Schema {
                path: path.to_path_buf(),
                message: format!(
                    "frame_count {} but {} frame paths",
                    self.frame_count,
                    self.frames.len()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionsFile {
    boxes: Vec<Box2>,
    masks: Vec<String>,
    labels: Vec<u32>,
    label_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidences: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    timestamp: f64,
    pose: Pose,
    intrinsics: Intrinsics,
    rgb: String,
    depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detections: Option<DetectionsFile>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| IngestError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, IngestError> {
    let path = root.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    manifest.validate(&path)?;
    Ok(manifest)
}

/// Sequential reader over a dataset; yields frames in stored order and
/// enforces strictly increasing timestamps.
pub struct DatasetReader {
    root: PathBuf,
    manifest: DatasetManifest,
    next: usize,
    last_timestamp: Option<f64>,
    failed: bool,
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<DatasetReader, IngestError> {
    let root = root.as_ref().to_path_buf();
    let manifest = read_manifest(&root)?;
    Ok(DatasetReader {
        root,
        manifest,
        next: 0,
        last_timestamp: None,
        failed: false,
    })
}

impl DatasetReader {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn read_frame(&self, index: usize) -> Result<(FrameRecord, Option<DetectionSet>), IngestError> {
        let path = self.root.join(&self.manifest.frames[index]);
        let file: FrameFile = read_json(&path)?;
        file.pose.validate()?;
        file.intrinsics.validate()?;

        let rgb_path = self.root.join(&file.rgb);
        let rgb = image::open(&rgb_path)
            .map_err(|e| IngestError::Image {
                path: rgb_path.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let depth_path = self.root.join(&file.depth);
        let depth_img = image::open(&depth_path)
            .map_err(|e| IngestError::Image {
                path: depth_path.clone(),
                message: e.to_string(),
            })?
            .to_luma16();
        let depth = DepthImage::from_png16(&depth_img);
        if (depth.width(), depth.height()) != rgb.dimensions() {
            return Err(IngestError::Validation {
                frame: index,
                message: "rgb and depth sizes differ".into(),
            });
        }
        let (w, h) = rgb.dimensions();

        let detections = match file.detections {
            None => None,
            Some(d) => {
                let masks = d
                    .masks
                    .iter()
                    .map(|rle| Mask::from_rle(w, h, rle))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| IngestError::Validation {
                        frame: index,
                        message: e.to_string(),
                    })?;
                let n = d.boxes.len();
                let set = DetectionSet {
                    confidences: d.confidences.unwrap_or_else(|| vec![1.0; n]),
                    boxes: d.boxes,
                    masks,
                    labels: d.labels,
                    label_names: d.label_names,
                };
                set.validate(w, h, index)?;
                Some(set)
            }
        };
        let frame = FrameRecord {
            index,
            timestamp: file.timestamp,
            pose: file.pose,
            rgb,
            depth,
            intrinsics: file.intrinsics,
        };
        Ok((frame, detections))
    }
}

impl Iterator for DatasetReader {
    type Item = Result<(FrameRecord, Option<DetectionSet>), IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.manifest.frames.len() {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let result = self.read_frame(index).and_then(|(frame, det)| {
            if let Some(prev) = self.last_timestamp {
                if frame.timestamp <= prev {
                    return Err(IngestError::NonMonotonicTimestamp {
                        frame: index,
                        timestamp: frame.timestamp,
                        previous: prev,
                    });
                }
            }
            self.last_timestamp = Some(frame.timestamp);
            Ok((frame, det))
        });
        if result.is_err() {
            self.failed = true;
        }
        Some(result)
    }
}

/// Writes datasets in the layout [`load_dataset`] reads.
pub struct DatasetWriter {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetWriter {
    pub fn create(
        root: impl AsRef<Path>,
        name: &str,
        embedding_dim: usize,
        palette: Palette,
        label_names: BTreeMap<u32, String>,
    ) -> Result<Self, IngestError> {
        let root = root.as_ref().to_path_buf();
        for sub in ["frames", "rgb", "depth"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self {
            root,
            manifest: DatasetManifest {
                name: name.to_string(),
                frame_count: 0,
                embedding_dim,
                label_palette: palette,
                label_names,
                frames: Vec::new(),
            },
        })
    }

    pub fn write_frame(
        &mut self,
        frame: &FrameRecord,
        detections: Option<&DetectionSet>,
    ) -> Result<(), IngestError> {
        let i = self.manifest.frames.len();
        let rgb_rel = format!("rgb/{i:06}.png");
        let depth_rel = format!("depth/{i:06}.png");
        let frame_rel = format!("frames/{i:06}.json");
        let rgb_path = self.root.join(&rgb_rel);
        frame.rgb.save(&rgb_path).map_err(|e| IngestError::Image {
            path: rgb_path.clone(),
            message: e.to_string(),
        })?;
        let depth_path = self.root.join(&depth_rel);
        frame
            .depth
            .to_png16()
            .save(&depth_path)
            .map_err(|e| IngestError::Image {
                path: depth_path.clone(),
                message: e.to_string(),
            })?;
        let file = FrameFile {
            timestamp: frame.timestamp,
            pose: frame.pose,
            intrinsics: frame.intrinsics,
            rgb: rgb_rel,
            depth: depth_rel,
            detections: detections.map(|d| DetectionsFile {
                boxes: d.boxes.clone(),
                masks: d.masks.iter().map(Mask::to_rle).collect(),
                labels: d.labels.clone(),
                label_names: d.label_names.clone(),
                confidences: Some(d.confidences.clone()),
            }),
        };
        let path = self.root.join(&frame_rel);
        let text = serde_json::to_string_pretty(&file).expect("frame files serialize");
        fs::write(&path, text).map_err(io_err(&path))?;
        self.manifest.frames.push(frame_rel);
        self.manifest.frame_count = self.manifest.frames.len();
        Ok(())
    }

    pub fn finish(self) -> Result<DatasetManifest, IngestError> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb as Px;

    fn frame(index: usize, timestamp: f64) -> FrameRecord {
        let mut depth = DepthImage::new(4, 3);
        depth.set(1, 1, 1.25);
        FrameRecord {
            index,
            timestamp,
            pose: Pose::identity(),
            rgb: RgbImage::from_pixel(4, 3, Px([1, 2, 3])),
            depth,
            intrinsics: Intrinsics {
                fx: 2.0,
                fy: 2.0,
                cx: 2.0,
                cy: 1.5,
            },
        }
    }

    fn detections() -> DetectionSet {
        DetectionSet {
            boxes: vec![Box2::new(0, 0, 2, 2)],
            masks: vec![Mask::from_fn(4, 3, |x, y| x < 2 && y < 2)],
            labels: vec![0],
            label_names: vec!["chair".into()],
            confidences: vec![0.9],
        }
    }

    fn palette() -> Palette {
        Palette::new(BTreeMap::from([(0, [255, 0, 0])])).unwrap()
    }

    fn write(dir: &Path, stamps: &[f64]) {
        let mut w = DatasetWriter::create(dir, "t", 8, palette(), BTreeMap::new()).unwrap();
        for (i, t) in stamps.iter().enumerate() {
            w.write_frame(&frame(i, *t), (i % 2 == 0).then(detections).as_ref())
                .unwrap();
        }
        w.finish().unwrap();
    }

    #[test]
    fn three_frames_in_order() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &[0.0, 0.5, 1.0]);
        let frames: Vec<_> = load_dataset(dir.path())
            .unwrap()
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(
            frames.iter().map(|(f, _)| f.timestamp).collect::<Vec<_>>(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(frames[0].1.as_ref(), Some(&detections()));
        assert!(frames[1].1.is_none());
        assert_eq!(frames[2].0.depth.get(1, 1), 1.25);
        assert_eq!(frames[2].0.rgb.get_pixel(3, 2).0, [1, 2, 3]);
    }

    #[test]
    fn non_monotonic_timestamps_fail() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &[0.0, 1.0, 1.0]);
        let results: Vec<_> = load_dataset(dir.path()).unwrap().collect();
        assert_eq!(results.len(), 3);
        assert!(matches!(
            results[2],
            Err(IngestError::NonMonotonicTimestamp { frame: 2, .. })
        ));
    }

    #[test]
    fn duplicate_palette_colors_fail_to_load() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &[0.0]);
        let path = dir.path().join(MANIFEST_FILE);
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        v["label_palette"]["1"] = serde_json::json!([255, 0, 0]);
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(IngestError::DuplicatePaletteColor { .. })
        ));
    }

    #[test]
    fn mask_outside_box_names_the_detection() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &[0.0]);
        let path = dir.path().join("frames/000000.json");
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        v["detections"]["boxes"][0] = serde_json::json!([0, 0, 1, 1]);
        fs::write(&path, v.to_string()).unwrap();
        let err = load_dataset(dir.path()).unwrap().next().unwrap().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("detection 0") && msg.contains("outside its box"), "{msg}");
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(IngestError::Io { .. })));
    }

    #[test]
    fn pose_validation_and_back_projection() {
        let mut p = Pose::identity();
        assert!(p.validate().is_ok());
        p.orientation = [0.0, 0.0, 0.0, 2.0];
        assert!(p.validate().is_err());
        let k = Intrinsics { fx: 2.0, fy: 4.0, cx: 1.0, cy: 1.0 };
        // pixel (2, 0) center = (2.5, 0.5): x = 1.5/2, y = -0.5/4
        assert_eq!(k.back_project(2, 0, 2.0), [1.5, -0.25, 2.0]);
    }
}
