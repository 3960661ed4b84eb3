//! Model provider interfaces and their backends.
//!
//! Three capabilities are needed: an image-text [`Embedder`], a
//! [`VisionLanguageModel`] (visual encoder plus description), and a
//! [`ChatModel`] used both for task parsing and as the decisor. Backends
//! implement [`ProviderBackend`] and are registered by name in a
//! [`ProviderRegistry`]; the configuration's `provider.kind` picks one.

mod mock;
mod remote;
pub mod wire;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

use crate::embedding::Embedding;
use crate::hashing::{feature_hash, fnv1a};
use crate::ingest::Palette;

pub use mock::{
    ChatRule, DescribeRule, ImageTag, MockBackend, MockChat, MockEmbedder, MockVlm, Transcript,
};
pub use remote::{RemoteBackend, RemoteClient};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider error: {0}")]
    Remote(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no transcript entry for {0}")]
    NoTranscript(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("image encoding: {0}")]
    Image(String),
}

/// Which inputs `describe` accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescribeMode {
    /// Accepts stored relation features (and images).
    Feature,
    /// Accepts pair images only.
    ImageModeOnly,
}

impl fmt::Display for DescribeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescribeMode::Feature => "feature",
            DescribeMode::ImageModeOnly => "image_mode_only",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DescribeInput<'a> {
    Feature(&'a Embedding),
    Image(&'a RgbImage),
}

impl DescribeInput<'_> {
    /// Stable content hash, used to key scripted transcripts.
    pub fn content_hash(&self) -> String {
        match self {
            DescribeInput::Feature(e) => feature_hash(e.values()),
            DescribeInput::Image(img) => image_hash(img),
        }
    }
}

pub fn image_hash(img: &RgbImage) -> String {
    let mut bytes = Vec::with_capacity(img.as_raw().len() + 8);
    bytes.extend_from_slice(&img.width().to_le_bytes());
    bytes.extend_from_slice(&img.height().to_le_bytes());
    bytes.extend_from_slice(img.as_raw());
    format!("{:016x}", fnv1a(&bytes))
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding, ProviderError>;
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
}

pub trait VisionLanguageModel: Send + Sync {
    fn relation_dim(&self) -> usize;
    fn describe_mode(&self) -> DescribeMode;
    fn visual_encode(&self, image: &RgbImage) -> Result<Embedding, ProviderError>;
    fn describe(&self, input: DescribeInput<'_>, prompt: &str) -> Result<String, ProviderError>;
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, system: &str, user: &str) -> Result<String, ProviderError>;
}

/// One chat round trip, as logged by the mocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_prompt: String,
    pub user_prompt: String,
    pub response: String,
}

/// Everything the pipeline and the reasoning module call out to.
#[derive(Clone)]
pub struct ProviderSet {
    pub embedder: Arc<dyn Embedder>,
    pub vlm: Arc<dyn VisionLanguageModel>,
    pub task_llm: Arc<dyn ChatModel>,
    pub decisor_llm: Arc<dyn ChatModel>,
}

impl fmt::Debug for ProviderSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderSet")
            .field("embedding_dim", &self.embedder.dim())
            .field("relation_dim", &self.vlm.relation_dim())
            .field("describe_mode", &self.vlm.describe_mode())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    /// Registered backend name, `mock` or `remote` out of the box.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub embedding_dim: usize,
    pub relation_dim: usize,
    pub timeout_s: f64,
    /// Extra attempts after a failed request.
    pub retries: u32,
    pub max_in_flight: usize,
    pub seed: u64,
    /// Scripted responses for the mock backend (JSON).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    /// Unscripted describe/chat inputs are errors rather than canned text.
    pub strict: bool,
    pub describe_mode: DescribeMode,
    /// Noise added to tagged mock image embeddings.
    pub image_noise: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: "mock".into(),
            endpoint: None,
            embedding_dim: 768,
            relation_dim: 1024,
            timeout_s: 30.0,
            retries: 2,
            max_in_flight: 4,
            seed: 0,
            transcript: None,
            strict: true,
            describe_mode: DescribeMode::Feature,
            image_noise: 0.05,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.embedding_dim < 1 || self.relation_dim < 1 {
            return Err("provider dimensions must be at least 1".into());
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("provider.timeout_s must be positive (got {})", self.timeout_s));
        }
        if self.max_in_flight == 0 {
            return Err("provider.max_in_flight must be at least 1".into());
        }
        if !(self.image_noise >= 0.0 && self.image_noise.is_finite()) {
            return Err("provider.image_noise must be non-negative".into());
        }
        Ok(())
    }
}

/// Data a backend may use beyond its own configuration.
#[derive(Debug, Clone, Default)]
pub struct ProviderContext {
    /// Flat image colors and the text they depict; the mock embedder maps
    /// images dominated by such a color next to that text.
    pub image_tags: Vec<ImageTag>,
}

impl ProviderContext {
    pub fn from_palette(palette: &Palette, label_names: &BTreeMap<u32, String>) -> Self {
        let image_tags = palette
            .iter()
            .filter_map(|(label, color)| {
                label_names.get(&label).map(|text| ImageTag {
                    color,
                    text: text.clone(),
                })
            })
            .collect();
        Self { image_tags }
    }
}

/// A named way of constructing a [`ProviderSet`].
pub trait ProviderBackend: Send + Sync {
    fn build(&self, config: &ProviderConfig, ctx: &ProviderContext) -> Result<ProviderSet, ProviderError>;
}

pub struct ProviderRegistry {
    backends: BTreeMap<String, Box<dyn ProviderBackend>>,
}

impl Default for ProviderRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ProviderRegistry {
    pub fn empty() -> Self {
        Self {
            backends: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("mock", MockBackend);
        r.register("remote", RemoteBackend);
        r
    }

    pub fn register(&mut self, name: &str, backend: impl ProviderBackend + 'static) {
        self.backends.insert(name.to_string(), Box::new(backend));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    pub fn build(&self, config: &ProviderConfig, ctx: &ProviderContext) -> Result<ProviderSet, ProviderError> {
        let backend = self.backends.get(&config.kind).ok_or_else(|| {
            ProviderError::Config(format!(
                "unknown provider kind {:?} (registered: {})",
                config.kind,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        backend.build(config, ctx)
    }
}

pub(crate) fn check_dim(expected: usize, e: &Embedding) -> Result<(), ProviderError> {
    if e.dim() != expected {
        return Err(ProviderError::DimensionMismatch {
            expected,
            got: e.dim(),
        });
    }
    if !e.is_finite() {
        return Err(ProviderError::Protocol("non-finite embedding".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_selects_by_name() {
        let reg = ProviderRegistry::with_builtins();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["mock", "remote"]);
        let cfg = ProviderConfig {
            embedding_dim: 8,
            relation_dim: 4,
            ..Default::default()
        };
        let set = reg.build(&cfg, &ProviderContext::default()).unwrap();
        assert_eq!(set.embedder.dim(), 8);
        assert_eq!(set.vlm.relation_dim(), 4);

        let bad = ProviderConfig {
            kind: "nope".into(),
            ..cfg
        };
        let err = reg.build(&bad, &ProviderContext::default()).unwrap_err();
        assert!(err.to_string().contains("mock, remote"), "{err}");
    }

    #[test]
    fn custom_backends_can_be_registered() {
        struct Fixed;
        impl ProviderBackend for Fixed {
            fn build(&self, c: &ProviderConfig, ctx: &ProviderContext) -> Result<ProviderSet, ProviderError> {
                MockBackend.build(&ProviderConfig { seed: 99, ..c.clone() }, ctx)
            }
        }
        let mut reg = ProviderRegistry::with_builtins();
        reg.register("fixed", Fixed);
        let cfg = ProviderConfig {
            kind: "fixed".into(),
            embedding_dim: 6,
            ..Default::default()
        };
        let a = reg.build(&cfg, &ProviderContext::default()).unwrap();
        let b = MockEmbedder::new(99, 6);
        assert_eq!(a.embedder.embed_text("x").unwrap(), b.embed_text("x").unwrap());
    }

    #[test]
    fn describe_mode_names() {
        assert_eq!(serde_json::to_string(&DescribeMode::ImageModeOnly).unwrap(), "\"image_mode_only\"");
        assert_eq!(DescribeMode::Feature.to_string(), "feature");
    }
}
