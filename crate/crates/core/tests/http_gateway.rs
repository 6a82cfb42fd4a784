//! Replays the shared wire fixture through a local HTTP server and checks the
//! client side of the protocol.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use labelforge_core::gateway::{
    fetch_vocabulary, score_label_position, HttpOptions, HttpProvider, LogitProvider, TokenEntry,
};
use labelforge_core::Error;
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Clone, Deserialize)]
struct Exchange {
    name: String,
    method: String,
    path: String,
    query: HashMap<String, String>,
    request: Option<Value>,
    status: u16,
    response: Value,
}

#[derive(Debug, Deserialize)]
struct Fixture {
    exchanges: Vec<Exchange>,
}

fn fixture() -> Fixture {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/wire_conformance.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn parse_query(url: &str) -> (String, HashMap<String, String>) {
    let (path, q) = url.split_once('?').unwrap_or((url, ""));
    let query = url::form_urlencoded::parse(q.as_bytes())
        .into_owned()
        .collect();
    (path.to_string(), query)
}

/// Serves fixture exchanges; unmatched requests get a 404.
fn serve(exchanges: Vec<Exchange>) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
    let exchanges = Arc::new(exchanges);
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let (path, query) = parse_query(req.url());
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let body: Option<Value> = serde_json::from_str(&body).ok();
            let method = req.method().as_str().to_string();
            let hit = exchanges.iter().find(|e| {
                e.method == method && e.path == path && e.query == query && e.request == body
            });
            let (status, payload) = match hit {
                Some(e) => (e.status, e.response.to_string()),
                None => (404, "{\"error\":\"no fixture\"}".to_string()),
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(
                tiny_http::Response::from_string(payload)
                    .with_status_code(status)
                    .with_header(header),
            );
        }
    });
    addr
}

fn tokens(texts: &[&str]) -> Vec<TokenEntry> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| TokenEntry {
            token_id: i as u32,
            text: t.to_string(),
        })
        .collect()
}

fn exchange<'a>(f: &'a Fixture, name: &str) -> &'a Exchange {
    f.exchanges.iter().find(|e| e.name == name).unwrap()
}

#[test]
fn info_and_capabilities() {
    let f = fixture();
    let p = HttpProvider::connect(&serve(f.exchanges.clone()), HttpOptions::default()).unwrap();
    let caps = p.capabilities();
    assert_eq!(caps.model_id, "fixture-model");
    assert_eq!(caps.max_concurrency, 1);
    assert_eq!(p.info().vocab_size, 8);
}

#[test]
fn vocabulary_roundtrip() {
    let f = fixture();
    let p = HttpProvider::connect(&serve(f.exchanges.clone()), HttpOptions::default()).unwrap();
    let v = fetch_vocabulary(&p, "Ġ").unwrap();
    let ids: Vec<u32> = v.tokens().iter().map(|t| t.token_id).collect();
    assert_eq!(ids, vec![2, 3, 5, 7]);
    assert_eq!(v.display(0), "angry");
}

#[test]
fn golden_score_request() {
    let f = fixture();
    let p = HttpProvider::connect(&serve(f.exchanges.clone()), HttpOptions::default()).unwrap();
    let ex = exchange(&f, "score_three_labels");
    let req = ex.request.as_ref().unwrap();
    let cands: Vec<&str> = req["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    let logits =
        score_label_position(&p, req["prompt"].as_str().unwrap(), &tokens(&cands)).unwrap();
    let expected: Vec<f64> = ex.response["logits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(logits, expected);
    assert_eq!(logits.len(), cands.len());

    let single = exchange(&f, "score_singleton");
    let prompt = single.request.as_ref().unwrap()["prompt"].as_str().unwrap();
    assert_eq!(
        score_label_position(&p, prompt, &tokens(&["Ġfear"])).unwrap(),
        vec![0.0625]
    );
}

#[test]
fn unknown_token_maps_to_index() {
    let f = fixture();
    let p = HttpProvider::connect(&serve(f.exchanges.clone()), HttpOptions::default()).unwrap();
    let err = score_label_position(
        &p,
        "Sentence: My dog ran away\nCategory:",
        &tokens(&["Ġhappy", "Ġnotatoken"]),
    )
    .unwrap_err();
    match err {
        Error::UnknownToken { index, token, .. } => {
            assert_eq!(index, 1);
            assert_eq!(token, "Ġnotatoken");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn unmatched_request_is_transport_error() {
    let f = fixture();
    let p = HttpProvider::connect(&serve(f.exchanges.clone()), HttpOptions::default()).unwrap();
    let err = score_label_position(&p, "something else", &tokens(&["Ġhappy"])).unwrap_err();
    assert!(matches!(err, Error::Transport(_)));
    assert!(err.is_provider_error());
}

#[test]
fn wrong_length_response_rejected() {
    let f = fixture();
    let mut ex = exchange(&f, "score_singleton").clone();
    ex.response = serde_json::json!({ "logits": [1.0, 2.0] });
    let mut all = vec![exchange(&f, "info").clone()];
    all.push(ex.clone());
    let p = HttpProvider::connect(&serve(all), HttpOptions::default()).unwrap();
    let prompt = ex.request.as_ref().unwrap()["prompt"].as_str().unwrap();
    assert!(matches!(
        score_label_position(&p, prompt, &tokens(&["Ġfear"])),
        Err(Error::LogitCount {
            expected: 1,
            got: 2
        })
    ));
}

#[test]
fn connection_refused_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let opts = HttpOptions {
        timeout: std::time::Duration::from_secs(2),
        ..Default::default()
    };
    assert!(matches!(
        HttpProvider::connect(&format!("http://{addr}"), opts),
        Err(Error::Transport(_))
    ));
}

#[test]
fn advertised_concurrency_is_used() {
    let f = fixture();
    let mut info = exchange(&f, "info").clone();
    info.response = serde_json::json!({ "model_id": "m", "vocab_size": 3, "max_concurrency": 4 });
    let p = HttpProvider::connect(&serve(vec![info]), HttpOptions::default()).unwrap();
    assert_eq!(p.capabilities().max_concurrency, 4);
}
