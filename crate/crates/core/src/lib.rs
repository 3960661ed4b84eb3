//! Incremental construction of hierarchical, open-vocabulary 3D scene graphs
//! from replayed pose / RGB-D / detection streams, plus a task reasoning
//! pipeline that grounds natural-language tasks in the graph.
//!
//! Every learned model (image-text embedder, vision-language model, chat LLM)
//! sits behind the traits in [`providers`]. Backends are registered by name in
//! a [`providers::ProviderRegistry`] and picked at runtime from the
//! configuration, so the whole system runs end to end against the
//! deterministic mocks.

pub mod config;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod hashing;
pub mod ingest;
pub mod pipeline;
pub mod providers;
pub mod reasoning;
pub mod reconstruction;
pub mod relations;
pub mod room_features;
pub mod search;
pub mod synth;

pub use config::PipelineConfig;
pub use embedding::Embedding;
pub use error::{Error, Result};
pub use graph::{Layer, NodeId, SceneGraph};
pub use pipeline::Pipeline;
pub use providers::{ProviderRegistry, ProviderSet};
