//! Remote oracle tests: recorded fixtures replayed through the reply parser,
//! and a scripted local HTTP server exercising retry, backoff, auth failure,
//! and response normalization over a real socket.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::time::Duration;

use fademem::embedding::{EmbeddingProvider, RemoteEmbedder, EMBED_KEY_ENV};
use fademem::oracle::{
    extract_relation_label, extract_score, parse_chat_reply, RemoteOracle, RemoteOracleConfig,
};
use fademem::{MergeOracle, OracleError, Relation, RelationOracle};

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/remote_oracle")
        .join(name);
    std::fs::read_to_string(path).expect("fixture exists")
}

// ── Fixture replay ──────────────────────────────────────────────────

#[test]
fn recorded_responses_replay_through_the_parser() {
    let content = parse_chat_reply(&fixture("classify_contradictory.response.json")).unwrap();
    assert_eq!(extract_relation_label(&content), Some(Relation::Contradictory));

    let content = parse_chat_reply(&fixture("classify_subsumed.response.json")).unwrap();
    assert_eq!(extract_relation_label(&content), Some(Relation::Subsumed));

    let content = parse_chat_reply(&fixture("classify_unlabeled.response.json")).unwrap();
    assert_eq!(extract_relation_label(&content), None);

    let content = parse_chat_reply(&fixture("merge.response.json")).unwrap();
    assert!(content.contains("Alice arrived at noon"));

    let content = parse_chat_reply(&fixture("score.response.json")).unwrap();
    assert_eq!(extract_score(&content), Some(0.95));
}

#[test]
fn recorded_requests_carry_the_chat_completion_shape() {
    for name in ["classify_contradictory", "classify_subsumed", "merge", "score"] {
        let body: serde_json::Value =
            serde_json::from_str(&fixture(&format!("{name}.request.json"))).unwrap();
        assert!(body["model"].is_string(), "{name}");
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 2, "{name}");
        assert_eq!(messages[0]["role"], "system", "{name}");
        assert_eq!(messages[1]["role"], "user", "{name}");
    }
}

// ── Scripted live server ────────────────────────────────────────────

/// Serves the scripted `(status, body)` responses, one connection each, and
/// returns how many requests arrived.
fn serve_script(script: Vec<(u16, String)>) -> (SocketAddr, std::thread::JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind local listener");
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut served = 0usize;
        for (status, body) in script {
            let (mut stream, _) = listener.accept().expect("accept");
            read_http_request(&mut stream);
            let response = format!(
                "HTTP/1.1 {status} Scripted\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).expect("write response");
            served += 1;
        }
        served
    });
    (addr, handle)
}

fn read_http_request(stream: &mut std::net::TcpStream) {
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .unwrap();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let mut content_length = 0usize;
    let mut header_end = 0usize;
    loop {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if header_end == 0 {
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        header_end = pos + 4;
                        let headers = String::from_utf8_lossy(&buf[..pos]);
                        for line in headers.lines() {
                            let lower = line.to_ascii_lowercase();
                            if let Some(value) = lower.strip_prefix("content-length:") {
                                content_length = value.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                }
                if header_end > 0 && buf.len() >= header_end + content_length {
                    break;
                }
            }
            Err(_) => break,
        }
    }
}

fn chat_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn oracle_at(addr: SocketAddr) -> RemoteOracle {
    RemoteOracle::new(RemoteOracleConfig {
        endpoint: format!("http://{addr}"),
        api_key: "test-key".to_string(),
        model: "test-model".to_string(),
        max_retries: 3,
        backoff_base: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        max_in_flight: 2,
    })
}

#[test]
fn classify_extracts_label_over_the_wire() {
    let (addr, server) = serve_script(vec![(200, chat_body("contradictory — the dates differ"))]);
    let oracle = oracle_at(addr);
    let verdict = oracle.classify("a b", "c d").unwrap();
    assert_eq!(verdict.relation, Relation::Contradictory);
    assert!(verdict.rationale.unwrap().contains("dates differ"));
    assert_eq!(server.join().unwrap(), 1);
}

#[test]
fn transient_server_error_retries_with_backoff() {
    let (addr, server) = serve_script(vec![
        (500, "oops".to_string()),
        (429, "slow down".to_string()),
        (200, chat_body("subsumes")),
    ]);
    let oracle = oracle_at(addr);
    let verdict = oracle.classify("a b", "c d").unwrap();
    assert_eq!(verdict.relation, Relation::Subsumes);
    assert_eq!(server.join().unwrap(), 3);
}

#[test]
fn auth_failure_surfaces_immediately() {
    let (addr, server) = serve_script(vec![(401, "denied".to_string())]);
    let oracle = oracle_at(addr);
    let err = oracle.classify("a b", "c d").unwrap_err();
    assert_eq!(err, OracleError::Auth(401));
    assert_eq!(server.join().unwrap(), 1);
}

#[test]
fn unlabeled_replies_retry_then_fail() {
    let replies: Vec<(u16, String)> = (0..4)
        .map(|i| (200, chat_body(&format!("nothing useful {i}"))))
        .collect();
    let (addr, server) = serve_script(replies);
    let oracle = oracle_at(addr);
    let err = oracle.classify("a b", "c d").unwrap_err();
    assert!(matches!(err, OracleError::Unparseable(_)), "{err:?}");
    // Initial attempt plus the three configured retries.
    assert_eq!(server.join().unwrap(), 4);
}

#[test]
fn preservation_score_parses_over_the_wire() {
    let (addr, server) = serve_script(vec![(200, chat_body("0.85\nmost details kept"))]);
    let oracle = oracle_at(addr);
    let score = oracle.preservation_score(&["a b"], "a").unwrap();
    assert_eq!(score, 0.85);
    assert_eq!(server.join().unwrap(), 1);
}

#[test]
fn merge_returns_reply_text() {
    let (addr, server) = serve_script(vec![(200, chat_body("merged passage here"))]);
    let oracle = oracle_at(addr);
    let merged = oracle.merge(&["one", "two"]).unwrap();
    assert_eq!(merged, "merged passage here");
    assert_eq!(server.join().unwrap(), 1);
}

#[test]
fn remote_embedder_normalizes_on_receipt() {
    let (addr, server) = serve_script(vec![(
        200,
        serde_json::json!({"embedding": [3.0, 4.0]}).to_string(),
    )]);
    std::env::set_var(EMBED_KEY_ENV, "test-key");
    let embedder = RemoteEmbedder::new(format!("http://{addr}"), 2).unwrap();
    let embedding = embedder.embed("hello").unwrap();
    assert_eq!(embedding.values(), &[0.6, 0.8]);
    assert!((embedding.norm() - 1.0).abs() < 1e-6);
    assert_eq!(server.join().unwrap(), 1);
}
