//! Deterministic stand-ins for every provider.
//!
//! Text embeddings are seeded hashes expanded by SplitMix into Gaussian-ish
//! values and normalized. Images tagged by a flat color embed next to the
//! tag's text, so retrieval quality is controllable. Descriptions and chat
//! answers replay scripted rules; nothing here keeps per-call state beyond
//! counters and an exchange log.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    check_dim, ChatExchange, ChatModel, DescribeInput, DescribeMode, Embedder, ProviderBackend,
    ProviderConfig, ProviderContext, ProviderError, ProviderSet, VisionLanguageModel,
};
use crate::embedding::Embedding;
use crate::hashing::{Fnv64, SplitMix64};

const DOMAIN_TEXT: u64 = 0x7465_7874;
const DOMAIN_IMAGE: u64 = 0x696d_6167;
const DOMAIN_NOISE: u64 = 0x6e6f_6973;
const DOMAIN_RELATION: u64 = 0x7265_6c61;

/// Unit vector derived from `(seed, domain, bytes)`.
fn hash_direction(seed: u64, domain: u64, bytes: &[u8], dim: usize) -> Embedding {
    let key = Fnv64::new().write_u64(seed).write_u64(domain).write(bytes).finish();
    let mut rng = SplitMix64::new(key);
    loop {
        let v = Embedding::new((0..dim).map(|_| rng.next_gaussianish()).collect());
        if let Some(n) = v.normalized() {
            return n;
        }
    }
}

fn image_bytes(img: &RgbImage) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(img.as_raw().len() + 8);
    bytes.extend_from_slice(&img.width().to_le_bytes());
    bytes.extend_from_slice(&img.height().to_le_bytes());
    bytes.extend_from_slice(img.as_raw());
    bytes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageTag {
    pub color: [u8; 3],
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeRule {
    pub prompt_contains: String,
    /// Restrict the rule to one input (see [`DescribeInput::content_hash`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    pub user_contains: String,
    pub response: String,
}

/// Scripted mock behavior, loaded from JSON. Rules are tried in order and
/// the first match wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Transcript {
    /// Fixed text embedding directions (normalized on use).
    pub anchors: BTreeMap<String, Vec<f64>>,
    pub image_tags: Vec<ImageTag>,
    pub describe: Vec<DescribeRule>,
    pub chat: Vec<ChatRule>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))
    }
}

pub struct MockEmbedder {
    seed: u64,
    dim: usize,
    anchors: BTreeMap<String, Embedding>,
    tags: Vec<ImageTag>,
    noise: f64,
    image_calls: AtomicUsize,
    text_calls: AtomicUsize,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 2, "mock embedder needs dim >= 2");
        Self {
            seed,
            dim,
            anchors: BTreeMap::new(),
            tags: Vec::new(),
            noise: 0.0,
            image_calls: AtomicUsize::new(0),
            text_calls: AtomicUsize::new(0),
        }
    }

    /// Pin `text` to a fixed direction.
    pub fn with_anchor(mut self, text: &str, direction: Vec<f64>) -> Self {
        assert_eq!(direction.len(), self.dim, "anchor dimension");
        let e = Embedding::new(direction)
            .normalized()
            .expect("anchor directions must be nonzero");
        self.anchors.insert(text.to_string(), e);
        self
    }

    pub fn with_tags(mut self, tags: Vec<ImageTag>, noise: f64) -> Self {
        self.tags = tags;
        self.noise = noise;
        self
    }

    pub fn text_vector(&self, text: &str) -> Embedding {
        match self.anchors.get(text) {
            Some(a) => a.clone(),
            None => hash_direction(self.seed, DOMAIN_TEXT, text.as_bytes(), self.dim),
        }
    }

    /// `normalize(text_vector(label) + eps * noise(salt))`; with `eps == 0`
    /// exactly the label's text embedding.
    pub fn embed_tagged(&self, label: &str, eps: f64, salt: u64) -> Embedding {
        let anchor = self.text_vector(label);
        if eps == 0.0 {
            return anchor;
        }
        let noise = hash_direction(self.seed, DOMAIN_NOISE, &salt.to_le_bytes(), self.dim);
        let mixed: Vec<f64> = anchor.iter().zip(noise.iter()).map(|(a, n)| a + eps * n).collect();
        Embedding::new(mixed).normalized().unwrap_or(anchor)
    }

    /// The tag whose color covers the most pixels, if any pixel matches.
    pub fn dominant_tag(&self, img: &RgbImage) -> Option<&ImageTag> {
        if self.tags.is_empty() {
            return None;
        }
        let mut counts = vec![0usize; self.tags.len()];
        for p in img.pixels() {
            if let Some(i) = self.tags.iter().position(|t| t.color == p.0) {
                counts[i] += 1;
            }
        }
        let (best, count) = counts
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, c)| if *c > acc.1 { (i, *c) } else { acc });
        (count > 0).then(|| &self.tags[best])
    }

    pub fn image_calls(&self) -> usize {
        self.image_calls.load(Ordering::Relaxed)
    }

    pub fn text_calls(&self) -> usize {
        self.text_calls.load(Ordering::Relaxed)
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Embedding, ProviderError> {
        self.image_calls.fetch_add(1, Ordering::Relaxed);
        if image.width() == 0 || image.height() == 0 {
            return Err(ProviderError::Image("empty image".into()));
        }
        let bytes = image_bytes(image);
        Ok(match self.dominant_tag(image) {
            Some(tag) => {
                let salt = Fnv64::new().write(&bytes).finish();
                self.embed_tagged(&tag.text, self.noise, salt)
            }
            None => hash_direction(self.seed, DOMAIN_IMAGE, &bytes, self.dim),
        })
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        self.text_calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.text_vector(text))
    }
}

pub struct MockVlm {
    seed: u64,
    relation_dim: usize,
    mode: DescribeMode,
    rules: Vec<DescribeRule>,
    strict: bool,
    encode_calls: AtomicUsize,
    describe_calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl MockVlm {
    pub fn new(seed: u64, relation_dim: usize, mode: DescribeMode) -> Self {
        Self {
            seed,
            relation_dim,
            mode,
            rules: Vec::new(),
            strict: true,
            encode_calls: AtomicUsize::new(0),
            describe_calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn with_rules(mut self, rules: Vec<DescribeRule>, strict: bool) -> Self {
        self.rules = rules;
        self.strict = strict;
        self
    }

    pub fn encode_calls(&self) -> usize {
        self.encode_calls.load(Ordering::Relaxed)
    }

    pub fn describe_calls(&self) -> usize {
        self.describe_calls.load(Ordering::Relaxed)
    }

    /// Prompts received by `describe`, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }
}

impl VisionLanguageModel for MockVlm {
    fn relation_dim(&self) -> usize {
        self.relation_dim
    }

    fn describe_mode(&self) -> DescribeMode {
        self.mode
    }

    fn visual_encode(&self, image: &RgbImage) -> Result<Embedding, ProviderError> {
        self.encode_calls.fetch_add(1, Ordering::Relaxed);
        Ok(hash_direction(self.seed, DOMAIN_RELATION, &image_bytes(image), self.relation_dim))
    }

    fn describe(&self, input: DescribeInput<'_>, prompt: &str) -> Result<String, ProviderError> {
        self.describe_calls.fetch_add(1, Ordering::Relaxed);
        self.prompts.lock().expect("prompt log").push(prompt.to_string());
        if let DescribeInput::Feature(f) = input {
            if self.mode == DescribeMode::ImageModeOnly {
                return Err(ProviderError::Unsupported(
                    "feature-conditioned describe (provider is image_mode_only)".into(),
                ));
            }
            check_dim(self.relation_dim, f)?;
        }
        let hash = input.content_hash();
        let hit = self.rules.iter().find(|r| {
            prompt.contains(&r.prompt_contains) && r.input_hash.as_ref().is_none_or(|h| *h == hash)
        });
        match hit {
            Some(r) => Ok(r.response.clone()),
            None if self.strict => Err(ProviderError::NoTranscript(format!(
                "describe (input {hash}, prompt {prompt:?})"
            ))),
            None => Ok("The two objects are close to each other.".into()),
        }
    }
}

pub struct MockChat {
    rules: Vec<ChatRule>,
    strict: bool,
    log: Mutex<Vec<ChatExchange>>,
}

impl MockChat {
    pub fn new(rules: Vec<ChatRule>, strict: bool) -> Self {
        Self {
            rules,
            strict,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("chat log").len()
    }

    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.log.lock().expect("chat log").clone()
    }
}

impl ChatModel for MockChat {
    fn chat(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        let hit = self.rules.iter().find(|r| {
            user.contains(&r.user_contains)
                && r.system_contains.as_ref().is_none_or(|s| system.contains(s.as_str()))
        });
        let response = match hit {
            Some(r) => r.response.clone(),
            None if self.strict => {
                return Err(ProviderError::NoTranscript(format!(
                    "chat (user prompt {:?})",
                    user.chars().take(80).collect::<String>()
                )))
            }
            None => String::new(),
        };
        self.log.lock().expect("chat log").push(ChatExchange {
            system_prompt: system.to_string(),
            user_prompt: user.to_string(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Builds mocks from the provider configuration and optional transcript.
pub struct MockBackend;

impl MockBackend {
    pub fn parts(
        config: &ProviderConfig,
        ctx: &ProviderContext,
    ) -> Result<(MockEmbedder, MockVlm, MockChat, MockChat), ProviderError> {
        if config.embedding_dim < 2 {
            return Err(ProviderError::Config("mock embedder needs embedding_dim >= 2".into()));
        }
        let transcript = match &config.transcript {
            Some(p) => Transcript::load(p)?,
            None => Transcript::default(),
        };
        let mut tags = transcript.image_tags.clone();
        tags.extend(ctx.image_tags.iter().cloned());
        let mut embedder = MockEmbedder::new(config.seed, config.embedding_dim).with_tags(tags, config.image_noise);
        for (text, dir) in &transcript.anchors {
            if dir.len() != config.embedding_dim {
                return Err(ProviderError::DimensionMismatch {
                    expected: config.embedding_dim,
                    got: dir.len(),
                });
            }
            if dir.iter().all(|v| *v == 0.0) {
                return Err(ProviderError::Config(format!("anchor {text:?} is the zero vector")));
            }
            embedder = embedder.with_anchor(text, dir.clone());
        }
        let vlm = MockVlm::new(config.seed, config.relation_dim, config.describe_mode)
            .with_rules(transcript.describe.clone(), config.strict);
        let task = MockChat::new(transcript.chat.clone(), config.strict);
        let decisor = MockChat::new(transcript.chat, config.strict);
        Ok((embedder, vlm, task, decisor))
    }
}

impl ProviderBackend for MockBackend {
    fn build(&self, config: &ProviderConfig, ctx: &ProviderContext) -> Result<ProviderSet, ProviderError> {
        let (embedder, vlm, task, decisor) = Self::parts(config, ctx)?;
        Ok(ProviderSet {
            embedder: Arc::new(embedder),
            vlm: Arc::new(vlm),
            task_llm: Arc::new(task),
            decisor_llm: Arc::new(decisor),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::cosine;
    use image::Rgb;

    fn tagged() -> MockEmbedder {
        MockEmbedder::new(1, 32).with_tags(
            vec![
                ImageTag { color: [255, 0, 0], text: "chair".into() },
                ImageTag { color: [0, 255, 0], text: "table".into() },
                ImageTag { color: [0, 0, 255], text: "lamp".into() },
            ],
            0.0,
        )
    }

    #[test]
    fn text_embeddings_are_deterministic_unit_and_seeded() {
        let e = MockEmbedder::new(7, 16);
        let a = e.embed_text("chair").unwrap();
        assert_eq!(a, e.embed_text("chair").unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_ne!(a, MockEmbedder::new(8, 16).embed_text("chair").unwrap());
    }

    #[test]
    fn tagged_images_sit_on_their_label() {
        let e = tagged();
        let img = RgbImage::from_fn(6, 4, |x, _| if x < 4 { Rgb([255, 0, 0]) } else { Rgb([0, 255, 0]) });
        let v = e.embed_image(&img).unwrap();
        assert_eq!(v, e.embed_text("chair").unwrap());
        for other in ["table", "lamp"] {
            assert!(cosine(&v, &e.embed_text(other).unwrap()).unwrap() < 1.0);
        }
    }

    #[test]
    fn noisy_tagged_images_still_rank_their_label_first() {
        let e = tagged();
        let labels = ["chair", "table", "lamp", "sofa", "bed"];
        for own in labels {
            for salt in 0..20u64 {
                let v = e.embed_tagged(own, 0.1, salt);
                assert!((v.norm() - 1.0).abs() < 1e-9);
                let own_sim = cosine(&v, &e.text_vector(own)).unwrap();
                for other in labels.iter().filter(|l| **l != own) {
                    assert!(own_sim > cosine(&v, &e.text_vector(other)).unwrap());
                }
            }
        }
    }

    #[test]
    fn untagged_images_hash_their_pixels() {
        let e = tagged();
        let a = RgbImage::from_pixel(3, 3, Rgb([9, 9, 9]));
        let b = RgbImage::from_pixel(3, 3, Rgb([9, 9, 8]));
        assert_eq!(e.embed_image(&a).unwrap(), e.embed_image(&a).unwrap());
        assert_ne!(e.embed_image(&a).unwrap(), e.embed_image(&b).unwrap());
    }

    #[test]
    fn anchors_override_hashing() {
        let e = MockEmbedder::new(1, 3).with_anchor("up", vec![0.0, 0.0, 2.0]);
        assert_eq!(e.embed_text("up").unwrap().values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn visual_encode_is_deterministic_with_relation_dim() {
        let vlm = MockVlm::new(3, 12, DescribeMode::Feature);
        let imgs: Vec<RgbImage> = (0..50u8).map(|i| RgbImage::from_pixel(2, 2, Rgb([i, 0, 0]))).collect();
        let codes: Vec<Embedding> = imgs.iter().map(|i| vlm.visual_encode(i).unwrap()).collect();
        assert!(codes.iter().all(|c| c.dim() == 12 && (c.norm() - 1.0).abs() < 1e-9));
        assert_eq!(codes[0], vlm.visual_encode(&imgs[0]).unwrap());
        let distinct: std::collections::BTreeSet<String> =
            codes.iter().map(|c| crate::hashing::feature_hash(c.values())).collect();
        assert_eq!(distinct.len(), imgs.len());
    }

    #[test]
    fn describe_replays_rules_and_rejects_misses() {
        let f = Embedding::new(vec![1.0, 0.0]);
        let rules = vec![DescribeRule {
            prompt_contains: "P1".into(),
            input_hash: Some(DescribeInput::Feature(&f).content_hash()),
            response: "T1".into(),
        }];
        let vlm = MockVlm::new(0, 2, DescribeMode::Feature).with_rules(rules.clone(), true);
        assert_eq!(vlm.describe(DescribeInput::Feature(&f), "say P1 now").unwrap(), "T1");
        let g = Embedding::new(vec![0.0, 1.0]);
        let err = vlm.describe(DescribeInput::Feature(&g), "say P1 now").unwrap_err();
        assert!(err.to_string().contains("no transcript entry"), "{err}");

        let image_only = MockVlm::new(0, 2, DescribeMode::ImageModeOnly).with_rules(rules, true);
        assert!(matches!(
            image_only.describe(DescribeInput::Feature(&f), "P1"),
            Err(ProviderError::Unsupported(_))
        ));
    }

    #[test]
    fn chat_first_matching_rule_wins() {
        let chat = MockChat::new(
            vec![
                ChatRule { system_contains: Some("decide".into()), user_contains: "bag".into(), response: "EXECUTE".into() },
                ChatRule { system_contains: None, user_contains: "bag".into(), response: "{}".into() },
            ],
            true,
        );
        assert_eq!(chat.chat("please decide", "a bag").unwrap(), "EXECUTE");
        assert_eq!(chat.chat("plan", "a bag").unwrap(), "{}");
        assert!(matches!(chat.chat("plan", "nothing"), Err(ProviderError::NoTranscript(_))));
        assert_eq!(chat.calls(), 2);
    }
}
