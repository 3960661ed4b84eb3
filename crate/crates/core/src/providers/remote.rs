//! HTTP client for providers served over the wire protocol.

use image::RgbImage;
use serde::Deserialize;
use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::wire::{self, ChatPayload, DescribePayload, EmbeddingResult, Health, ImagePayload, Reply, TextPayload, TextResult};
use super::{
    check_dim, ChatModel, DescribeInput, DescribeMode, Embedder, ProviderBackend, ProviderConfig,
    ProviderContext, ProviderError, ProviderSet, VisionLanguageModel,
};
use crate::embedding::Embedding;

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.active.lock().expect("in-flight lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteClient {
    agent: ureq::Agent,
    endpoint: String,
    attempts: u32,
    embedding_dim: usize,
    relation_dim: usize,
    describe_mode: DescribeMode,
    in_flight: InFlight,
    text_cache: Mutex<HashMap<String, Embedding>>,
}

impl RemoteClient {
    /// Connect and check `/health` against the configured dimensions.
    pub fn connect(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| ProviderError::Config("remote provider needs an endpoint".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut client = Self {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            attempts: config.retries + 1,
            embedding_dim: config.embedding_dim,
            relation_dim: config.relation_dim,
            describe_mode: config.describe_mode,
            in_flight: InFlight {
                limit: config.max_in_flight,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
            text_cache: Mutex::new(HashMap::new()),
        };
        let health = client.health()?;
        if health.embedding_dim != config.embedding_dim {
            return Err(ProviderError::DimensionMismatch {
                expected: config.embedding_dim,
                got: health.embedding_dim,
            });
        }
        if health.relation_dim != config.relation_dim {
            return Err(ProviderError::DimensionMismatch {
                expected: config.relation_dim,
                got: health.relation_dim,
            });
        }
        client.describe_mode = health.describe_mode;
        Ok(client)
    }

    fn post(&self, op: &str, body: &str) -> Result<String, ProviderError> {
        let _permit = self.in_flight.acquire();
        let url = format!("{}/{op}", self.endpoint);
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self
                .agent
                .post(&url)
                .header("content-type", "application/json")
                .send(body)
            {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| ProviderError::Protocol(format!("reading /{op} response: {e}")))?;
                    // 5xx without a protocol body is a transport-level failure.
                    if status >= 500 && serde_json::from_str::<Reply>(&text).is_err() {
                        last = format!("HTTP {status} from /{op}");
                        log::warn!("{last} (attempt {attempt}/{})", self.attempts);
                        continue;
                    }
                    return Ok(text);
                }
                Err(e) => {
                    last = format!("POST {url}: {e}");
                    log::warn!("{last} (attempt {attempt}/{})", self.attempts);
                }
            }
        }
        Err(ProviderError::Transport {
            attempts: self.attempts,
            message: last,
        })
    }

    fn call<T: for<'de> Deserialize<'de>>(&self, op: &str, body: String) -> Result<T, ProviderError> {
        let text = self.post(op, &body)?;
        let reply: Reply = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Protocol(format!("/{op} reply: {e}")))?;
        if !reply.ok {
            return Err(ProviderError::Remote(reply.error.unwrap_or_else(|| "unspecified error".into())));
        }
        let result = reply
            .result
            .ok_or_else(|| ProviderError::Protocol(format!("/{op} reply has no result")))?;
        serde_json::from_value(result).map_err(|e| ProviderError::Protocol(format!("/{op} result: {e}")))
    }

    pub fn health(&self) -> Result<Health, ProviderError> {
        let text = self.post("health", &wire::request_body("health", serde_json::json!({})))?;
        let health: Health = serde_json::from_str(&text).map_err(|e| {
            match serde_json::from_str::<Reply>(&text) {
                Ok(Reply { error: Some(m), .. }) => ProviderError::Remote(m),
                _ => ProviderError::Protocol(format!("/health reply: {e}")),
            }
        })?;
        if !health.ok {
            return Err(ProviderError::Remote("provider reports unhealthy".into()));
        }
        Ok(health)
    }

    fn embedding(&self, op: &str, body: String, dim: usize) -> Result<Embedding, ProviderError> {
        let r: EmbeddingResult = self.call(op, body)?;
        let e = Embedding::new(r.embedding);
        check_dim(dim, &e)?;
        Ok(e)
    }
}

impl Embedder for RemoteClient {
    fn dim(&self) -> usize {
        self.embedding_dim
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Embedding, ProviderError> {
        let body = wire::request_body("embed_image", ImagePayload { image: wire::encode_png(image)? });
        self.embedding("embed_image", body, self.embedding_dim)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        if let Some(e) = self.text_cache.lock().expect("cache lock").get(text) {
            return Ok(e.clone());
        }
        let body = wire::request_body("embed_text", TextPayload { text: text.to_string() });
        let e = self.embedding("embed_text", body, self.embedding_dim)?;
        self.text_cache
            .lock()
            .expect("cache lock")
            .insert(text.to_string(), e.clone());
        Ok(e)
    }
}

impl VisionLanguageModel for RemoteClient {
    fn relation_dim(&self) -> usize {
        self.relation_dim
    }

    fn describe_mode(&self) -> DescribeMode {
        self.describe_mode
    }

    fn visual_encode(&self, image: &RgbImage) -> Result<Embedding, ProviderError> {
        let body = wire::request_body("visual_encode", ImagePayload { image: wire::encode_png(image)? });
        self.embedding("visual_encode", body, self.relation_dim)
    }

    fn describe(&self, input: DescribeInput<'_>, prompt: &str) -> Result<String, ProviderError> {
        let payload = match input {
            DescribeInput::Feature(f) => {
                if self.describe_mode == DescribeMode::ImageModeOnly {
                    return Err(ProviderError::Unsupported(
                        "feature-conditioned describe (provider is image_mode_only)".into(),
                    ));
                }
                DescribePayload {
                    prompt: prompt.to_string(),
                    feature: Some(f.values().to_vec()),
                    image: None,
                }
            }
            DescribeInput::Image(img) => DescribePayload {
                prompt: prompt.to_string(),
                feature: None,
                image: Some(wire::encode_png(img)?),
            },
        };
        let r: TextResult = self.call("describe", wire::request_body("describe", payload))?;
        Ok(r.text)
    }
}

impl ChatModel for RemoteClient {
    fn chat(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        let payload = ChatPayload {
            system: system.to_string(),
            user: user.to_string(),
        };
        let r: TextResult = self.call("chat", wire::request_body("chat", payload))?;
        Ok(r.text)
    }
}

pub struct RemoteBackend;

impl ProviderBackend for RemoteBackend {
    fn build(&self, config: &ProviderConfig, _ctx: &ProviderContext) -> Result<ProviderSet, ProviderError> {
        let client = Arc::new(RemoteClient::connect(config)?);
        Ok(ProviderSet {
            embedder: client.clone(),
            vlm: client.clone(),
            task_llm: client.clone(),
            decisor_llm: client,
        })
    }
}
