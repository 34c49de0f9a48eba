use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use convsearch::embed::{EmbeddingKey, EmbeddingProvider};
use convsearch::rewrite::{Conversation, RewriteRequest, RewriteResponse, Rewriter};
use convsearch::sidecar::{EmbedRequest, EmbedResponse, Health, SidecarClient};
use convsearch::Error;
use serde_json::Value;

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/sidecar")
        .join(name);
    std::fs::read_to_string(p).unwrap()
}

fn json(name: &str) -> Value {
    serde_json::from_str(&fixture(name)).unwrap()
}

#[derive(Default)]
struct Seen {
    requests: Vec<(String, String, Value)>,
}

/// Serves canned replies keyed by path; records every request.
fn serve(routes: Vec<(&'static str, u16, String)>) -> (String, Arc<Mutex<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Seen::default()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut first = String::new();
            reader.read_line(&mut first).unwrap();
            let mut parts = first.split_whitespace();
            let method = parts.next().unwrap_or_default().to_string();
            let path = parts.next().unwrap_or_default().to_string();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let value = if body.is_empty() {
                Value::Null
            } else {
                serde_json::from_slice(&body).unwrap()
            };
            log.lock()
                .unwrap()
                .requests
                .push((method, path.clone(), value));
            let (status, reply) = routes
                .iter()
                .find(|(p, _, _)| *p == path)
                .map(|(_, s, b)| (*s, b.clone()))
                .unwrap_or((404, "{\"detail\":\"not found\"}".into()));
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}"), seen)
}

#[test]
fn golden_fixtures_match_wire_types() {
    let req: EmbedRequest = serde_json::from_value(json("embed_request.json")).unwrap();
    assert_eq!(
        serde_json::to_value(&req).unwrap(),
        json("embed_request.json")
    );
    let resp: EmbedResponse = serde_json::from_value(json("embed_response.json")).unwrap();
    assert!(resp.embeddings.iter().all(|v| v.len() == resp.dim));
    let rw: RewriteRequest = serde_json::from_value(json("rewrite_request.json")).unwrap();
    assert_eq!(
        serde_json::to_value(&rw).unwrap(),
        json("rewrite_request.json")
    );
    assert_eq!(rw.t5_input(), fixture("rewrite_input.txt").trim_end());
    let out: RewriteResponse = serde_json::from_value(json("rewrite_response.json")).unwrap();
    assert_eq!(out.rewritten, "How can you become a physician’s assistant?");
    let h: Health = serde_json::from_value(json("health_response.json")).unwrap();
    assert_eq!(h.embedding_dim, resp.dim);
}

#[test]
fn rewrite_request_built_from_conversation_matches_fixture() {
    let mut conv = Conversation::from_queries(
        "t",
        &[
            "What is a physician’s assistant?",
            "How can you become one?",
        ],
    )
    .unwrap();
    conv.turn_mut(1).unwrap().top_passage_text = Some(
        "A physician assistant is a licensed medical professional who practices medicine on a team with physicians."
            .into(),
    );
    let req = RewriteRequest::for_turn(&conv, 2).unwrap();
    assert_eq!(
        serde_json::to_value(&req).unwrap(),
        json("rewrite_request.json")
    );
}

#[test]
fn client_round_trips_against_mock() {
    let (url, seen) = serve(vec![
        ("/health", 200, fixture("health_response.json")),
        ("/embed", 200, fixture("embed_response.json")),
        ("/rewrite", 200, fixture("rewrite_response.json")),
    ]);
    let client = SidecarClient::connect(&url).unwrap();
    assert_eq!(client.dim(), 4);

    let req: EmbedRequest = serde_json::from_value(json("embed_request.json")).unwrap();
    let vecs = client.embed_batch(&req.pairs).unwrap();
    assert_eq!(vecs.len(), 2);
    assert_eq!(vecs[1].values(), &[0.0, 0.6, 0.0, 0.8]);

    let rw: RewriteRequest = serde_json::from_value(json("rewrite_request.json")).unwrap();
    assert_eq!(
        client.rewrite(&rw).unwrap(),
        "How can you become a physician’s assistant?"
    );

    let seen = seen.lock().unwrap();
    let embed_call = seen.requests.iter().find(|r| r.1 == "/embed").unwrap();
    assert_eq!(embed_call.0, "POST");
    assert_eq!(embed_call.2, json("embed_request.json"));
    let rewrite_call = seen.requests.iter().find(|r| r.1 == "/rewrite").unwrap();
    assert_eq!(rewrite_call.2, json("rewrite_request.json"));
}

#[test]
fn batches_are_split() {
    let (url, seen) = serve(vec![
        ("/health", 200, fixture("health_response.json")),
        ("/embed", 200, fixture("embed_response.json")),
    ]);
    let client = SidecarClient::connect_with(&url, std::time::Duration::from_secs(10), 2).unwrap();
    let keys: Vec<EmbeddingKey> = (0..4)
        .map(|i| EmbeddingKey::new(format!("q{i}"), "p").unwrap())
        .collect();
    assert_eq!(client.embed_batch(&keys).unwrap().len(), 4);
    let n = seen
        .lock()
        .unwrap()
        .requests
        .iter()
        .filter(|r| r.1 == "/embed")
        .count();
    assert_eq!(n, 2);
}

#[test]
fn server_errors_surface_as_transport() {
    let (url, _) = serve(vec![
        ("/health", 200, fixture("health_response.json")),
        ("/embed", 503, fixture("error_response.json")),
    ]);
    let client = SidecarClient::connect(&url).unwrap();
    let key = EmbeddingKey::new("q", "p").unwrap();
    match client.embed_batch(&[key]) {
        Err(Error::Transport(msg)) => assert!(
            msg.contains("503") && msg.contains("model not ready"),
            "{msg}"
        ),
        other => panic!("{other:?}"),
    }
}

#[test]
fn count_mismatch_is_rejected() {
    let (url, _) = serve(vec![
        ("/health", 200, fixture("health_response.json")),
        ("/embed", 200, fixture("embed_response.json")),
    ]);
    let client = SidecarClient::connect(&url).unwrap();
    let key = EmbeddingKey::new("q", "p").unwrap();
    assert!(matches!(
        client.embed_batch(&[key]),
        Err(Error::Transport(_))
    ));
}

#[test]
fn loading_sidecar_refuses_connection() {
    let (url, _) = serve(vec![("/health", 503, "{\"detail\":\"loading\"}".into())]);
    assert!(matches!(
        SidecarClient::connect(&url),
        Err(Error::Transport(_))
    ));
}
