//! Pipeline configuration: one TOML document, every knob defaulted, unknown
//! keys rejected.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::fusion::{FusionError, FusionWeights};
use crate::providers::ProviderConfig;

pub const ENV_ENDPOINT: &str = "SGR_PROVIDER_ENDPOINT";
pub const ENV_TIMEOUT: &str = "SGR_PROVIDER_TIMEOUT_S";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub voxel_size: f64,
    pub merge_iou: f64,
    pub min_cluster_voxels: usize,
    /// Depth readings beyond this range (meters) are ignored.
    pub max_depth: f64,
    pub min_detection_confidence: f64,
    /// Height band (meters) of the free-space slab used for places and rooms.
    pub slab_min: f64,
    pub slab_max: f64,
    pub place_min_sep: f64,
    /// Minimum obstacle distance (meters) for a place candidate.
    pub place_min_clearance: f64,
    /// Height assigned to place nodes.
    pub place_height: f64,
    pub door_radius: f64,
    /// Eroded free-space components smaller than this (m²) are not rooms.
    pub min_room_area: f64,
    pub room_cycle_stride: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            merge_iou: 0.25,
            min_cluster_voxels: 5,
            max_depth: 10.0,
            min_detection_confidence: 0.0,
            slab_min: 0.1,
            slab_max: 1.8,
            place_min_sep: 0.8,
            place_min_clearance: 0.2,
            place_height: 0.95,
            door_radius: 0.3,
            min_room_area: 0.5,
            room_cycle_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationConfig {
    pub max_pairs_per_frame: usize,
    /// Largest admitted distance between box centers; the image diagonal when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_pair_centroid_px: Option<f64>,
    /// Keep the latest pair crop per edge for image-mode description.
    pub persist_pair_crops: bool,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            max_pairs_per_frame: 20,
            max_pair_centroid_px: None,
            persist_pair_crops: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomFeatureConfig {
    pub room_feature_clusters: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for RoomFeatureConfig {
    fn default() -> Self {
        Self {
            room_feature_clusters: 5,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub object_threshold: f64,
    pub room_threshold: f64,
    /// Text sent to the embedder for a label; `{label}` is substituted.
    pub label_prompt_template: String,
    pub background_names: Vec<String>,
    pub background_threshold: f64,
    pub ks: Vec<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            object_threshold: 0.25,
            room_threshold: 0.25,
            label_prompt_template: "{label}".into(),
            background_names: Vec::new(),
            background_threshold: 0.9,
            ks: vec![5, 10, 25, 100, 250, 500],
        }
    }
}

impl SearchConfig {
    pub fn label_prompt(&self, label: &str) -> String {
        self.label_prompt_template.replace("{label}", label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomScope {
    Never,
    Always,
    /// Scope to rooms only when some room clears the room threshold.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasoningConfig {
    pub max_retries: usize,
    pub max_pairs_per_subtask: usize,
    pub room_scope: RoomScope,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            max_pairs_per_subtask: 8,
            room_scope: RoomScope::Never,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds K-Means and anything else stochastic in the pipeline.
    pub seed: u64,
    pub provider: ProviderConfig,
    pub fusion: FusionWeights,
    pub reconstruction: ReconstructionConfig,
    pub relations: RelationConfig,
    pub rooms: RoomFeatureConfig,
    pub search: SearchConfig,
    pub reasoning: ReasoningConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            provider: ProviderConfig::default(),
            fusion: FusionWeights::default(),
            reconstruction: ReconstructionConfig::default(),
            relations: RelationConfig::default(),
            rooms: RoomFeatureConfig::default(),
            search: SearchConfig::default(),
            reasoning: ReasoningConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, Path::new("<string>"))
    }

    fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        // Relative transcript paths are relative to the config file.
        if let (Some(t), Some(dir)) = (&cfg.provider.transcript, path.parent()) {
            if t.is_relative() {
                cfg.provider.transcript = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// Apply `section.key=value` overrides (values in TOML syntax; bare
    /// words are taken as strings).
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<(), ConfigError> {
        if sets.is_empty() {
            return Ok(());
        }
        let mut doc: toml::Table = toml::Table::try_from(&*self).expect("configuration serializes");
        for set in sets {
            let set = set.as_ref();
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("override {set:?} is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields one item");
            let mut table = &mut doc;
            for p in parents {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Invalid(format!("override {key:?}: {p} is not a section")))?;
            }
            table.insert(last.to_string(), value);
        }
        let cfg: PipelineConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: PathBuf::from("<overrides>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Apply `SGR_PROVIDER_ENDPOINT` / `SGR_PROVIDER_TIMEOUT_S` overrides.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(endpoint) = std::env::var(ENV_ENDPOINT) {
            if !endpoint.is_empty() {
                self.provider.endpoint = Some(endpoint);
            }
        }
        if let Ok(t) = std::env::var(ENV_TIMEOUT) {
            self.provider.timeout_s = t
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{ENV_TIMEOUT}={t:?} is not a number")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fusion.validate()?;
        self.provider.validate().map_err(ConfigError::Invalid)?;
        let r = &self.reconstruction;
        let positive = [
            ("reconstruction.voxel_size", r.voxel_size),
            ("reconstruction.max_depth", r.max_depth),
            ("reconstruction.place_min_sep", r.place_min_sep),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive (got {v})")));
            }
        }
        if !(0.0..=1.0).contains(&r.merge_iou) {
            return Err(ConfigError::Invalid("reconstruction.merge_iou must lie in [0, 1]".into()));
        }
        if r.slab_min >= r.slab_max {
            return Err(ConfigError::Invalid("reconstruction.slab_min must be below slab_max".into()));
        }
        if r.door_radius < 0.0 || r.place_min_clearance < 0.0 || r.min_room_area < 0.0 {
            return Err(ConfigError::Invalid("reconstruction radii and areas must be non-negative".into()));
        }
        if r.room_cycle_stride == 0 {
            return Err(ConfigError::Invalid("reconstruction.room_cycle_stride must be at least 1".into()));
        }
        if self.rooms.room_feature_clusters == 0 {
            return Err(ConfigError::Invalid("rooms.room_feature_clusters must be at least 1".into()));
        }
        if self.search.ks.contains(&0) {
            return Err(ConfigError::Invalid("search.ks entries must be at least 1".into()));
        }
        if self.reasoning.max_pairs_per_subtask == 0 {
            return Err(ConfigError::Invalid("reasoning.max_pairs_per_subtask must be at least 1".into()));
        }
        Ok(())
    }
}
