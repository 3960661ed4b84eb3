//! JSON wire protocol shared by the remote client and any provider server.
//!
//! Every endpoint takes `POST /<op>` with body `{"op": "<op>", "payload": {..}}`
//! and answers `{"ok": true, "result": {..}}` or `{"ok": false, "error": ".."}`.
//! `/health` answers flat: `{"ok", "embedding_dim", "relation_dim", "describe_mode"}`.
//! Images travel as base64-encoded PNG.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::io::Cursor;

use super::{DescribeInput, DescribeMode, ProviderError, ProviderSet};
use crate::embedding::Embedding;

pub const OPS: [&str; 6] = ["embed_image", "embed_text", "visual_encode", "describe", "chat", "health"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub op: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextPayload {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePayload {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribePayload {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatPayload {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingResult {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextResult {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Health {
    pub ok: bool,
    pub embedding_dim: usize,
    pub relation_dim: usize,
    pub describe_mode: DescribeMode,
}

pub fn encode_png(img: &RgbImage) -> Result<String, ProviderError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| ProviderError::Image(e.to_string()))?;
    Ok(B64.encode(buf.into_inner()))
}

pub fn decode_png(data: &str) -> Result<RgbImage, ProviderError> {
    let bytes = B64
        .decode(data)
        .map_err(|e| ProviderError::Protocol(format!("bad base64 image: {e}")))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map(|i| i.to_rgb8())
        .map_err(|e| ProviderError::Protocol(format!("bad PNG image: {e}")))
}

pub fn request_body(op: &str, payload: impl Serialize) -> String {
    let req = Request {
        op: op.to_string(),
        payload: serde_json::to_value(payload).expect("payloads serialize"),
    };
    serde_json::to_string(&req).expect("requests serialize")
}

fn payload<T: for<'de> Deserialize<'de>>(v: Value) -> Result<T, ProviderError> {
    serde_json::from_value(v).map_err(|e| ProviderError::Protocol(format!("bad payload: {e}")))
}

fn ok(result: impl Serialize) -> String {
    let reply = Reply {
        ok: true,
        result: Some(serde_json::to_value(result).expect("results serialize")),
        error: None,
    };
    serde_json::to_string(&reply).expect("replies serialize")
}

fn fail(message: String) -> String {
    let reply = Reply {
        ok: false,
        result: None,
        error: Some(message),
    };
    serde_json::to_string(&reply).expect("replies serialize")
}

/// Serve one request against `providers`: returns the HTTP status and body.
///
/// This is the reference server side of the protocol; the conformance tests
/// run the remote client against it.
pub fn dispatch(providers: &ProviderSet, path: &str, body: &[u8]) -> (u16, String) {
    let op = path.trim_start_matches('/');
    if !OPS.contains(&op) {
        return (404, fail(format!("unknown endpoint {path}")));
    }
    let req: Request = if op == "health" && body.iter().all(u8::is_ascii_whitespace) {
        Request {
            op: op.into(),
            payload: Value::Null,
        }
    } else {
        match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return (400, fail(format!("malformed request: {e}"))),
        }
    };
    if req.op != op {
        return (400, fail(format!("op {:?} sent to /{op}", req.op)));
    }
    match handle(providers, op, req.payload) {
        Ok(body) => (200, body),
        Err(ProviderError::Protocol(m)) => (400, fail(m)),
        Err(e) => (500, fail(e.to_string())),
    }
}

fn handle(p: &ProviderSet, op: &str, v: Value) -> Result<String, ProviderError> {
    let embedding = |e: Embedding| ok(EmbeddingResult { embedding: e.into_inner() });
    Ok(match op {
        "health" => serde_json::to_string(&Health {
            ok: true,
            embedding_dim: p.embedder.dim(),
            relation_dim: p.vlm.relation_dim(),
            describe_mode: p.vlm.describe_mode(),
        })
        .expect("health serializes"),
        "embed_text" => {
            let t: TextPayload = payload(v)?;
            embedding(p.embedder.embed_text(&t.text)?)
        }
        "embed_image" => {
            let i: ImagePayload = payload(v)?;
            embedding(p.embedder.embed_image(&decode_png(&i.image)?)?)
        }
        "visual_encode" => {
            let i: ImagePayload = payload(v)?;
            embedding(p.vlm.visual_encode(&decode_png(&i.image)?)?)
        }
        "describe" => {
            let d: DescribePayload = payload(v)?;
            let text = match (d.feature, d.image) {
                (Some(f), None) => p.vlm.describe(DescribeInput::Feature(&Embedding::new(f)), &d.prompt)?,
                (None, Some(img)) => p.vlm.describe(DescribeInput::Image(&decode_png(&img)?), &d.prompt)?,
                _ => {
                    return Err(ProviderError::Protocol(
                        "describe needs exactly one of feature or image".into(),
                    ))
                }
            };
            ok(TextResult { text })
        }
        "chat" => {
            let c: ChatPayload = payload(v)?;
            // Both chat roles share one endpoint; the decisor is the task model
            // as far as the protocol is concerned.
            ok(TextResult {
                text: p.task_llm.chat(&c.system, &c.user)?,
            })
        }
        _ => unreachable!("checked against OPS"),
    })
}
