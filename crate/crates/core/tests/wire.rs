//! Provider wire protocol: the remote client against a reference server
//! backed by the mocks, plus golden request/response fixtures.
//!
//! Run with `SGR_BLESS=1` to regenerate `fixtures/wire/cases.json` after an
//! intentional protocol change.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sgr_core::error::ErrorClass;
use sgr_core::providers::wire::{self, ChatPayload, DescribePayload, ImagePayload, TextPayload};
use sgr_core::providers::{
    ChatRule, DescribeInput, DescribeMode, DescribeRule, MockChat, MockEmbedder, MockVlm, ProviderConfig,
    ProviderContext, ProviderError, ProviderRegistry, ProviderSet,
};
use sgr_core::{Embedding, Error};

const DIM: usize = 8;
const REL_DIM: usize = 6;

type Handler = dyn Fn(&str, &[u8]) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one thread per connection, keep-alive honored.
struct Server {
    addr: String,
    requests: Arc<AtomicUsize>,
    paths: Arc<Mutex<Vec<String>>>,
}

impl Server {
    fn start(handler: Arc<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let paths = Arc::new(Mutex::new(Vec::new()));
        let (r, p) = (requests.clone(), paths.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (h, r, p) = (handler.clone(), r.clone(), p.clone());
                thread::spawn(move || serve_connection(stream, &*h, &r, &p));
            }
        });
        Server { addr, requests, paths }
    }

    fn mock(set: ProviderSet) -> Self {
        Self::start(Arc::new(move |path: &str, body: &[u8]| wire::dispatch(&set, path, body)))
    }

    fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn serve_connection(mut stream: TcpStream, handler: &Handler, count: &AtomicUsize, paths: &Mutex<Vec<String>>) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        // headers
        let (head_len, path, body_len) = loop {
            let mut headers = [httparse::EMPTY_HEADER; 32];
            let mut req = httparse::Request::new(&mut headers);
            if let Ok(httparse::Status::Complete(n)) = req.parse(&buf) {
                let len = req
                    .headers
                    .iter()
                    .find(|h| h.name.eq_ignore_ascii_case("content-length"))
                    .and_then(|h| std::str::from_utf8(h.value).ok()?.trim().parse().ok())
                    .unwrap_or(0usize);
                break (n, req.path.unwrap_or("/").to_string(), len);
            }
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => return,
                Ok(k) => buf.extend_from_slice(&chunk[..k]),
            }
        };
        while buf.len() < head_len + body_len {
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => return,
                Ok(k) => buf.extend_from_slice(&chunk[..k]),
            }
        }
        let body: Vec<u8> = buf.drain(..head_len + body_len).skip(head_len).collect();
        count.fetch_add(1, Ordering::SeqCst);
        paths.lock().unwrap().push(path.clone());
        let (status, text) = handler(&path, &body);
        let reply = format!(
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{text}",
            text.len()
        );
        if stream.write_all(reply.as_bytes()).is_err() {
            return;
        }
    }
}

fn rules() -> (Vec<DescribeRule>, Vec<ChatRule>) {
    let describe = vec![DescribeRule {
        prompt_contains: "relationship".into(),
        input_hash: None,
        response: "The cup sits on the table.".into(),
    }];
    let chat = vec![ChatRule {
        system_contains: None,
        user_contains: "plan".into(),
        response: r#"{"relevant_objects": ["cup"], "subtasks": []}"#.into(),
    }];
    (describe, chat)
}

fn mock_set(mode: DescribeMode) -> ProviderSet {
    let (describe, chat) = rules();
    let tags = vec![sgr_core::providers::ImageTag {
        color: [200, 30, 30],
        text: "cup".into(),
    }];
    ProviderSet {
        embedder: Arc::new(MockEmbedder::new(7, DIM).with_tags(tags, 0.0)),
        vlm: Arc::new(MockVlm::new(7, REL_DIM, mode).with_rules(describe, true)),
        task_llm: Arc::new(MockChat::new(chat.clone(), true)),
        decisor_llm: Arc::new(MockChat::new(chat, true)),
    }
}

fn remote_config(endpoint: &str) -> ProviderConfig {
    ProviderConfig {
        kind: "remote".into(),
        endpoint: Some(endpoint.to_string()),
        embedding_dim: DIM,
        relation_dim: REL_DIM,
        timeout_s: 5.0,
        retries: 0,
        ..ProviderConfig::default()
    }
}

fn remote(endpoint: &str) -> Result<ProviderSet, ProviderError> {
    ProviderRegistry::with_builtins().build(&remote_config(endpoint), &ProviderContext::default())
}

fn red_image() -> RgbImage {
    RgbImage::from_fn(4, 3, |x, _| if x < 3 { Rgb([200, 30, 30]) } else { Rgb([0, 0, 0]) })
}

fn noise_image() -> RgbImage {
    RgbImage::from_fn(3, 2, |x, y| Rgb([(x * 70) as u8, (y * 90) as u8, 11]))
}

/// Behaviour every provider set must show, whether local or remote.
fn check_behaviour(p: &ProviderSet) {
    assert_eq!(p.embedder.dim(), DIM);
    assert_eq!(p.vlm.relation_dim(), REL_DIM);

    let a = p.embedder.embed_text("chair").unwrap();
    let b = p.embedder.embed_text("chair").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dim(), DIM);
    assert!((a.norm() - 1.0).abs() < 1e-12);
    assert_ne!(a, p.embedder.embed_text("table").unwrap());

    let cup = p.embedder.embed_text("cup").unwrap();
    let img = p.embedder.embed_image(&red_image()).unwrap();
    assert!((img.dot(&cup) - 1.0).abs() < 1e-9, "tagged image sits on its label");
    assert_eq!(img, p.embedder.embed_image(&red_image()).unwrap());

    let f = p.vlm.visual_encode(&noise_image()).unwrap();
    assert_eq!(f.dim(), REL_DIM);
    assert_eq!(f, p.vlm.visual_encode(&noise_image()).unwrap());

    let prompt = "Describe the relationship between the cup and the table.";
    assert_eq!(
        p.vlm.describe(DescribeInput::Feature(&f), prompt).unwrap(),
        "The cup sits on the table."
    );
    assert_eq!(
        p.vlm.describe(DescribeInput::Image(&noise_image()), prompt).unwrap(),
        "The cup sits on the table."
    );
    assert!(p.vlm.describe(DescribeInput::Feature(&f), "something unscripted").is_err());
    let wrong = Embedding::new(vec![1.0; REL_DIM + 1]);
    assert!(p.vlm.describe(DescribeInput::Feature(&wrong), prompt).is_err());

    assert!(p.task_llm.chat("sys", "make a plan").unwrap().contains("relevant_objects"));
    assert!(p.decisor_llm.chat("sys", "unscripted").is_err());
}

#[test]
fn mock_satisfies_the_behaviour_suite() {
    check_behaviour(&mock_set(DescribeMode::Feature));
}

#[test]
fn remote_client_satisfies_the_behaviour_suite() {
    let server = Server::mock(mock_set(DescribeMode::Feature));
    check_behaviour(&remote(&server.addr).unwrap());
}

#[test]
fn remote_vectors_match_the_served_mock_exactly() {
    let local = mock_set(DescribeMode::Feature);
    let server = Server::mock(mock_set(DescribeMode::Feature));
    let far = remote(&server.addr).unwrap();
    for t in ["chair", "a photo of a trash can", "ünïcode ✓"] {
        assert_eq!(far.embedder.embed_text(t).unwrap(), local.embedder.embed_text(t).unwrap());
    }
    assert_eq!(
        far.embedder.embed_image(&noise_image()).unwrap(),
        local.embedder.embed_image(&noise_image()).unwrap()
    );
    assert_eq!(
        far.vlm.visual_encode(&red_image()).unwrap(),
        local.vlm.visual_encode(&red_image()).unwrap()
    );
}

#[test]
fn text_embeddings_are_cached_client_side() {
    let server = Server::mock(mock_set(DescribeMode::Feature));
    let far = remote(&server.addr).unwrap();
    let before = server.count();
    for _ in 0..5 {
        far.embedder.embed_text("chair").unwrap();
    }
    assert_eq!(server.count() - before, 1);
}

#[test]
fn connect_checks_health_dimensions() {
    let server = Server::mock(mock_set(DescribeMode::Feature));
    let mut cfg = remote_config(&server.addr);
    cfg.embedding_dim = DIM + 1;
    let err = ProviderRegistry::with_builtins().build(&cfg, &ProviderContext::default()).err().unwrap();
    assert!(matches!(err, ProviderError::DimensionMismatch { expected, got } if expected == DIM + 1 && got == DIM));
    assert_eq!(server.paths.lock().unwrap().as_slice(), ["/health"]);
}

#[test]
fn image_mode_only_providers_refuse_features_without_a_round_trip() {
    let server = Server::mock(mock_set(DescribeMode::ImageModeOnly));
    let far = remote(&server.addr).unwrap();
    assert_eq!(far.vlm.describe_mode(), DescribeMode::ImageModeOnly);
    let before = server.count();
    let f = Embedding::new(vec![0.5; REL_DIM]);
    let err = far.vlm.describe(DescribeInput::Feature(&f), "relationship").unwrap_err();
    assert!(matches!(err, ProviderError::Unsupported(_)));
    assert_eq!(server.count(), before);
    assert!(far.vlm.describe(DescribeInput::Image(&noise_image()), "relationship").is_ok());
}

#[test]
fn transient_server_failures_are_retried() {
    let inner = mock_set(DescribeMode::Feature);
    let failures = Arc::new(AtomicUsize::new(0));
    let f = failures.clone();
    let server = Server::start(Arc::new(move |path: &str, body: &[u8]| {
        // every other embed_text call falls over before the protocol layer
        if path == "/embed_text" && f.fetch_add(1, Ordering::SeqCst) % 2 == 0 {
            return (503, "upstream busy".to_string());
        }
        wire::dispatch(&inner, path, body)
    }));
    let mut cfg = remote_config(&server.addr);
    cfg.retries = 1;
    let far = ProviderRegistry::with_builtins().build(&cfg, &ProviderContext::default()).unwrap();
    assert_eq!(far.embedder.embed_text("chair").unwrap().dim(), DIM);
    assert_eq!(failures.load(Ordering::SeqCst), 2);
}

#[test]
fn exhausted_retries_are_transport_errors() {
    let server = Server::start(Arc::new(|path: &str, body: &[u8]| {
        if path == "/health" {
            return wire::dispatch(&mock_set(DescribeMode::Feature), path, body);
        }
        (502, "<html>bad gateway</html>".to_string())
    }));
    let mut cfg = remote_config(&server.addr);
    cfg.retries = 2;
    let far = ProviderRegistry::with_builtins().build(&cfg, &ProviderContext::default()).unwrap();
    let before = server.count();
    let err = far.embedder.embed_text("chair").unwrap_err();
    assert!(matches!(err, ProviderError::Transport { attempts: 3, .. }), "{err}");
    assert_eq!(server.count() - before, 3);
    assert_eq!(Error::from(err).class(), ErrorClass::Provider);
}

#[test]
fn protocol_errors_are_not_retried() {
    let server = Server::mock(mock_set(DescribeMode::Feature));
    let far = remote(&server.addr).unwrap();
    let before = server.count();
    let err = far.vlm.describe(DescribeInput::Image(&noise_image()), "unscripted").unwrap_err();
    assert!(matches!(err, ProviderError::Remote(ref m) if m.contains("no transcript")), "{err}");
    assert_eq!(server.count() - before, 1);
}

#[test]
fn unreachable_endpoints_fail_as_transport_errors() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = remote(&format!("http://127.0.0.1:{port}")).err().unwrap();
    assert!(matches!(err, ProviderError::Transport { .. }), "{err}");
    let mut cfg = remote_config("unused");
    cfg.endpoint = None;
    let err = ProviderRegistry::with_builtins().build(&cfg, &ProviderContext::default()).err().unwrap();
    assert!(matches!(err, ProviderError::Config(_)));
}

// ---------------------------------------------------------------------------
// Golden fixtures

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Case {
    name: String,
    path: String,
    request: String,
    status: u16,
    response: String,
}

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire/cases.json")
}

/// Requests as the client encodes them, plus a few a client never sends.
fn golden_requests() -> Vec<(&'static str, &'static str, String)> {
    let red = wire::encode_png(&red_image()).unwrap();
    let noise = wire::encode_png(&noise_image()).unwrap();
    let feature: Vec<f64> = (0..REL_DIM).map(|i| i as f64 / 4.0 - 0.5).collect();
    let text = |t: &str| TextPayload { text: t.into() };
    vec![
        ("health_empty_body", "/health", String::new()),
        ("health", "/health", wire::request_body("health", json!({}))),
        ("embed_text", "/embed_text", wire::request_body("embed_text", text("chair"))),
        ("embed_text_unicode", "/embed_text", wire::request_body("embed_text", text("tasse à café ☕"))),
        ("embed_image_tagged", "/embed_image", wire::request_body("embed_image", ImagePayload { image: red })),
        (
            "visual_encode",
            "/visual_encode",
            wire::request_body("visual_encode", ImagePayload { image: noise.clone() }),
        ),
        (
            "describe_feature",
            "/describe",
            wire::request_body(
                "describe",
                DescribePayload {
                    prompt: "Describe the relationship between them.".into(),
                    feature: Some(feature.clone()),
                    image: None,
                },
            ),
        ),
        (
            "describe_image",
            "/describe",
            wire::request_body(
                "describe",
                DescribePayload {
                    prompt: "Describe the relationship between them.".into(),
                    feature: None,
                    image: Some(noise.clone()),
                },
            ),
        ),
        (
            "describe_unscripted",
            "/describe",
            wire::request_body(
                "describe",
                DescribePayload {
                    prompt: "What colour is it?".into(),
                    feature: Some(feature.clone()),
                    image: None,
                },
            ),
        ),
        (
            "describe_both_inputs",
            "/describe",
            wire::request_body(
                "describe",
                DescribePayload {
                    prompt: "relationship".into(),
                    feature: Some(feature),
                    image: Some(noise),
                },
            ),
        ),
        (
            "chat",
            "/chat",
            wire::request_body(
                "chat",
                ChatPayload {
                    system: "You plan tasks.".into(),
                    user: "Please plan: pick up the cup.".into(),
                },
            ),
        ),
        ("unknown_endpoint", "/segment", wire::request_body("segment", json!({}))),
        ("malformed_json", "/embed_text", "{\"op\": \"embed_text\",".into()),
        ("op_mismatch", "/embed_text", wire::request_body("embed_image", text("chair"))),
        ("bad_payload", "/embed_text", wire::request_body("embed_text", json!({"txt": "chair"}))),
        ("bad_png", "/embed_image", wire::request_body("embed_image", json!({"image": "aGVsbG8="}))),
    ]
}

#[test]
fn golden_protocol_fixtures() {
    let set = mock_set(DescribeMode::Feature);
    let cases: Vec<Case> = golden_requests()
        .into_iter()
        .map(|(name, path, request)| {
            let (status, response) = wire::dispatch(&set, path, request.as_bytes());
            Case {
                name: name.into(),
                path: path.into(),
                request,
                status,
                response,
            }
        })
        .collect();
    if std::env::var_os("SGR_BLESS").is_some() {
        let text = serde_json::to_string_pretty(&cases).unwrap() + "\n";
        std::fs::write(fixture_path(), text).unwrap();
        return;
    }
    let golden: Vec<Case> = serde_json::from_slice(&std::fs::read(fixture_path()).unwrap()).unwrap();
    assert_eq!(golden.len(), cases.len());
    for (want, got) in golden.iter().zip(&cases) {
        assert_eq!(want, got, "case {}", want.name);
    }
    let statuses: Vec<u16> = golden.iter().map(|c| c.status).collect();
    assert_eq!(statuses, [200, 200, 200, 200, 200, 200, 200, 200, 500, 400, 200, 404, 400, 400, 400, 400]);
}

#[test]
fn golden_replies_parse_as_protocol_messages() {
    let golden: Vec<Case> = serde_json::from_slice(&std::fs::read(fixture_path()).unwrap()).unwrap();
    for c in golden {
        let v: serde_json::Value = serde_json::from_str(&c.response).unwrap();
        if c.path == "/health" {
            let h: wire::Health = serde_json::from_value(v).unwrap();
            assert_eq!((h.ok, h.embedding_dim, h.relation_dim), (true, DIM, REL_DIM));
            continue;
        }
        let reply: wire::Reply = serde_json::from_value(v).unwrap();
        assert_eq!(reply.ok, c.status == 200, "{}", c.name);
        assert_eq!(reply.error.is_some(), c.status != 200, "{}", c.name);
        if !c.request.is_empty() && c.status != 404 {
            if let Ok(req) = serde_json::from_str::<wire::Request>(&c.request) {
                assert!(wire::OPS.contains(&req.op.as_str()), "{}", c.name);
            }
        }
    }
}
