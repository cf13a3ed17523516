use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use contextevolve::wire::{Backoff, Endpoint, WireProvider};
use contextevolve_core::llm::{AgentProfiles, AgentRole, Llm, LlmError};

/// Serves the given (status, body) replies in order, one per connection,
/// and records each request body.
fn stub_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut headers = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            if headers.to_ascii_lowercase().contains("transfer-encoding: chunked") {
                loop {
                    let mut size = String::new();
                    reader.read_line(&mut size).unwrap();
                    let n = usize::from_str_radix(size.trim(), 16).unwrap();
                    let mut chunk = vec![0; n + 2];
                    reader.read_exact(&mut chunk).unwrap();
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                }
            }
            log.lock().unwrap().push(format!("{headers}\n{}", String::from_utf8_lossy(&buf)));
            let mut s = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            s.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn provider(url: &str, key: Option<&str>) -> WireProvider {
    let endpoint = Endpoint { base_url: url.into(), api_key: key.map(String::from) };
    let endpoints = AgentRole::ALL.iter().map(|r| (*r, endpoint.clone())).collect();
    let backoff = Backoff { base: Duration::from_millis(5), ..Backoff::default() };
    WireProvider::new(endpoints, Duration::from_secs(5), backoff)
}

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"use a heap"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;

#[test]
fn retries_after_429() {
    let (url, seen) = stub_server(vec![(429, "{}".into()), (200, OK_BODY.into())]);
    let mut llm = Llm::new(Box::new(provider(&url, Some("sk-test"))), AgentProfiles::default());
    let resp = llm.complete(AgentRole::Navigator, "sys", "hello").unwrap();
    assert_eq!(resp.text, "use a heap");
    assert_eq!(resp.attempts, 2);
    assert!(resp.provider_reported);
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (12, 3));
    let requests = seen.lock().unwrap();
    assert_eq!(requests.len(), 2);
    assert!(requests[0].to_ascii_lowercase().contains("authorization: bearer sk-test"), "{}", requests[0]);
    let body: serde_json::Value = serde_json::from_str(requests[0].split_once("\n\n").unwrap().1).unwrap();
    assert_eq!(body["messages"][1]["content"], "hello");
    assert_eq!(body["messages"][0]["role"], "system");
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = stub_server(vec![(401, "{}".into()), (200, OK_BODY.into())]);
    let mut llm = Llm::new(Box::new(provider(&url, Some("bad"))), AgentProfiles::default());
    let err = llm.complete(AgentRole::Generator, "sys", "hello").unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
    assert_eq!(llm.usage_ledger().total().calls, 0);
}

#[test]
fn server_errors_exhaust_the_retry_budget() {
    let mut profiles = AgentProfiles::default();
    profiles.sampler.retry_budget = 2;
    let (url, seen) = stub_server(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into())]);
    let mut llm = Llm::new(Box::new(provider(&url, None)), profiles);
    match llm.complete(AgentRole::Sampler, "sys", "hello").unwrap_err() {
        LlmError::Backend { attempts, .. } => assert_eq!(attempts, 3),
        e => panic!("{e:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn missing_usage_falls_back_to_heuristic() {
    let body = r#"{"choices":[{"message":{"content":"abcdefgh"}}]}"#;
    let (url, _) = stub_server(vec![(200, body.into())]);
    let mut llm = Llm::new(Box::new(provider(&url, None)), AgentProfiles::default());
    let resp = llm.complete(AgentRole::Summarizer, "", "abcd").unwrap();
    assert!(!resp.provider_reported);
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (1, 2));
}
