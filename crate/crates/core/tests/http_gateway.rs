//! Gateway integration against a real HTTP server speaking the
//! chat-completions and embeddings wire format.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use common::FrozenClock;
use spectral_uncertainty::gateway::{
    ChatRequest, Gateway, GatewayError, GatewaySettings, HttpEndpoint, HttpProvider,
};

type Responder = dyn Fn(&str, usize) -> (u16, String) + Send + Sync;

/// Minimal one-thread HTTP server: reads each request, hands (path, hit
/// count) to the responder, writes the reply, closes the connection.
fn spawn_server(responder: Arc<Responder>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
    let address = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let recorded = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() || request_line.is_empty() {
                continue;
            }
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("/")
                .to_string();
            let mut content_length = 0usize;
            loop {
                let mut header = String::new();
                if reader.read_line(&mut header).is_err() || header.trim().is_empty() {
                    break;
                }
                if let Some(value) = header.to_lowercase().strip_prefix("content-length:") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0u8; content_length];
            let _ = reader.read_exact(&mut body);

            let hit = recorded.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = responder(&path, hit);
            let reason = match status {
                200 => "OK",
                400 => "Bad Request",
                429 => "Too Many Requests",
                _ => "Error",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            let mut stream = reader.into_inner();
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{address}"), hits)
}

fn gateway_for(base_url: &str, cache: &std::path::Path) -> Gateway {
    let endpoint = HttpEndpoint {
        base_url: base_url.to_string(),
        api_key: Some("test-key".into()),
    };
    let provider = HttpProvider::new(
        endpoint.clone(),
        endpoint,
        std::time::Duration::from_secs(5),
    );
    Gateway::new(
        Box::new(provider),
        GatewaySettings::new(cache),
        Arc::new(FrozenClock),
    )
    .unwrap()
}

fn chat_request(prompt: &str) -> ChatRequest {
    ChatRequest {
        model: "test-model".into(),
        system_prompt: "be brief".into(),
        user_prompt: prompt.into(),
        temperature: 0.5,
        sample_index: 0,
        max_tokens: 32,
    }
}

fn chat_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3}
    })
    .to_string()
}

#[test]
fn chat_round_trip_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (base, hits) = spawn_server(Arc::new(|path: &str, _| {
        assert_eq!(path, "/chat/completions");
        (200, chat_body("Answer: Paris"))
    }));
    let gateway = gateway_for(&base, dir.path());
    assert_eq!(
        gateway.chat(&chat_request("capital?")).unwrap(),
        "Answer: Paris"
    );
    // Second identical request is a cache hit, not a network call.
    assert_eq!(
        gateway.chat(&chat_request("capital?")).unwrap(),
        "Answer: Paris"
    );
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn rate_limited_responses_are_retried_until_success() {
    let dir = tempfile::tempdir().unwrap();
    let (base, hits) = spawn_server(Arc::new(|_: &str, hit| {
        if hit < 2 {
            (429, r#"{"error": "slow down"}"#.to_string())
        } else {
            (200, chat_body("ok"))
        }
    }));
    let gateway = gateway_for(&base, dir.path());
    assert_eq!(gateway.chat(&chat_request("q")).unwrap(), "ok");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_permanent_and_not_retried() {
    let dir = tempfile::tempdir().unwrap();
    let (base, hits) = spawn_server(Arc::new(|_: &str, _| {
        (400, r#"{"error": "bad model"}"#.to_string())
    }));
    let gateway = gateway_for(&base, dir.path());
    let err = gateway.chat(&chat_request("q")).unwrap_err();
    match err {
        GatewayError::Permanent { status, message } => {
            assert_eq!(status, 400);
            assert!(message.contains("bad model"));
        }
        other => panic!("unexpected error: {other}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn embeddings_come_back_normalized_and_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = spawn_server(Arc::new(|path: &str, _| {
        assert_eq!(path, "/embeddings");
        // Out-of-order indices on the wire; the client must reorder.
        let body = serde_json::json!({
            "data": [
                {"index": 1, "embedding": [0.0, 2.0]},
                {"index": 0, "embedding": [3.0, 4.0]}
            ],
            "usage": {"prompt_tokens": 2, "completion_tokens": 0}
        });
        (200, body.to_string())
    }));
    let gateway = gateway_for(&base, dir.path());
    let embeddings = gateway
        .embed("embedder", &["first".to_string(), "second".to_string()])
        .unwrap();
    assert_eq!(embeddings[0].values(), &[0.6, 0.8]);
    assert_eq!(embeddings[1].values(), &[0.0, 1.0]);
}
