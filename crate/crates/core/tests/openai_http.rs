//! OpenAI-compatible provider against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use l2r_core::llm_gateway::{ChatProvider, GatewayError, Message, OpenAiProvider, ProviderConfig};

#[derive(Debug, Clone)]
struct Seen {
    auth: Option<String>,
    path: String,
    body: serde_json::Value,
}

/// Serves one canned (status, body) per connection, in order.
fn stub(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0usize;
            let mut auth = None;
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let (name, value) = l.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                auth,
                path,
                body: serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null),
            });
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            out.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn provider(endpoint: &str, key_env: &str, retries: u32) -> OpenAiProvider {
    OpenAiProvider::new(ProviderConfig {
        endpoint: endpoint.into(),
        model: "stub-model".into(),
        api_key_env: key_env.into(),
        timeout_ms: 5_000,
        max_retries: retries,
        ..ProviderConfig::default()
    })
    .unwrap()
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn msgs() -> Vec<Message> {
    vec![Message::system("sys"), Message::user("hello")]
}

#[test]
fn retries_429_and_5xx_then_succeeds() {
    std::env::set_var("L2R_STUB_KEY_RETRY", "sk-test");
    let (url, seen) = stub(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, ok_body("fine")),
    ]);
    let p = provider(&url, "L2R_STUB_KEY_RETRY", 3);
    assert_eq!(p.complete(&msgs()).unwrap(), "fine");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let first = &seen[0];
    assert_eq!(first.path, "/v1/chat/completions");
    assert_eq!(first.auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(first.body["model"], "stub-model");
    assert_eq!(first.body["temperature"], 0.0);
    assert_eq!(first.body["top_p"], 1.0);
    assert_eq!(first.body["messages"][1]["content"], "hello");
}

#[test]
fn gives_up_after_max_retries() {
    std::env::set_var("L2R_STUB_KEY_GIVEUP", "sk-test");
    let (url, seen) = stub(vec![(500, "boom".into()), (502, "boom".into())]);
    let p = provider(&url, "L2R_STUB_KEY_GIVEUP", 1);
    match p.complete(&msgs()).unwrap_err() {
        GatewayError::Transport { attempts, .. } => assert_eq!(attempts, 2),
        e => panic!("unexpected {e:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn unauthorized_is_not_retried() {
    std::env::set_var("L2R_STUB_KEY_401", "sk-bad");
    let (url, seen) = stub(vec![(401, "{\"error\":\"bad key\"}".into()), (200, ok_body("x"))]);
    let p = provider(&url, "L2R_STUB_KEY_401", 3);
    assert!(matches!(p.complete(&msgs()), Err(GatewayError::Auth(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn bad_request_is_a_rejection() {
    std::env::set_var("L2R_STUB_KEY_400", "sk-test");
    let (url, seen) = stub(vec![(400, "context too long".into()), (200, ok_body("x"))]);
    let p = provider(&url, "L2R_STUB_KEY_400", 3);
    match p.complete(&msgs()).unwrap_err() {
        GatewayError::ProviderRejection { status, body } => {
            assert_eq!(status, 400);
            assert_eq!(body, "context too long");
        }
        e => panic!("unexpected {e:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn missing_key_fails_before_any_request() {
    let (url, seen) = stub(vec![(200, ok_body("x"))]);
    let p = provider(&url, "L2R_STUB_KEY_NEVER_SET", 3);
    assert!(matches!(p.complete(&msgs()), Err(GatewayError::Auth(_))));
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn malformed_success_body() {
    std::env::set_var("L2R_STUB_KEY_MALFORMED", "sk-test");
    let (url, _) = stub(vec![(200, "{\"choices\": []}".into())]);
    let p = provider(&url, "L2R_STUB_KEY_MALFORMED", 0);
    assert!(matches!(p.complete(&msgs()), Err(GatewayError::Malformed(_))));
}
