//! Remote client behavior against a hand-rolled local HTTP server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tabgr_core::llm::{LlmClient, LlmError, LlmRequest, PromptKind, RemoteLlmClient, TokenBasis};

/// Serve one canned HTTP response per connection, in order, then repeat the
/// last one. Returns the base URL and a hit counter.
fn spawn_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_clone = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = hits_clone.fetch_add(1, Ordering::SeqCst);
            let (status, body) = responses
                .get(n.min(responses.len().saturating_sub(1)))
                .cloned()
                .unwrap_or((500, String::new()));
            // Read the request until the end of headers, then the body.
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            let mut content_length = 0usize;
            let mut header_end = None;
            loop {
                match stream.read(&mut chunk) {
                    Ok(0) => break,
                    Ok(k) => {
                        buf.extend_from_slice(&chunk[..k]);
                        if header_end.is_none() {
                            if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
                                header_end = Some(pos + 4);
                                let headers = String::from_utf8_lossy(&buf[..pos]);
                                for line in headers.lines() {
                                    if let Some(v) =
                                        line.to_ascii_lowercase().strip_prefix("content-length:")
                                    {
                                        content_length = v.trim().parse().unwrap_or(0);
                                    }
                                }
                            }
                        }
                        if let Some(end) = header_end {
                            if buf.len() >= end + content_length {
                                break;
                            }
                        }
                    }
                    Err(_) => break,
                }
            }
            let reason = match status {
                200 => "OK",
                401 => "Unauthorized",
                429 => "Too Many Requests",
                _ => "Error",
            };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (format!("http://{addr}"), hits)
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}

fn ok_body(content: &str, with_usage: bool) -> String {
    if with_usage {
        format!(
            r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}],"usage":{{"prompt_tokens":11,"completion_tokens":3}}}}"#
        )
    } else {
        format!(r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}]}}"#)
    }
}

fn request() -> LlmRequest {
    LlmRequest::new("test-model", "Finished:", PromptKind::Sufficiency)
}

fn client(base: &str) -> RemoteLlmClient {
    RemoteLlmClient::new(base, Some("test-key".to_string()))
        .unwrap()
        .with_backoff(Duration::from_millis(1))
}

#[test]
fn rate_limited_then_ok_succeeds_after_one_retry() {
    let (base, hits) = spawn_server(vec![
        (429, String::new()),
        (200, ok_body("Finished: True", true)),
    ]);
    let out = client(&base).complete(&request()).unwrap();
    assert_eq!(out.text, "Finished: True");
    assert_eq!(out.input_tokens, 11);
    assert_eq!(out.output_tokens, 3);
    assert_eq!(out.token_basis, TokenBasis::Provider);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn missing_usage_falls_back_to_approximation() {
    let (base, _) = spawn_server(vec![(200, ok_body("ok!", false))]);
    let out = client(&base).complete(&request()).unwrap();
    assert_eq!(out.token_basis, TokenBasis::ApproxCharsDiv4);
    assert_eq!(out.output_tokens, 1);
}

#[test]
fn exhausted_retries_are_unavailable() {
    let (base, hits) = spawn_server(vec![(429, String::new())]);
    let err = client(&base).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Unavailable(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn auth_failures_do_not_retry() {
    let (base, hits) = spawn_server(vec![(401, String::new())]);
    let err = client(&base).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    // Nothing listens on this port (bound then dropped).
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let err = client(&format!("http://127.0.0.1:{port}"))
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::Unavailable(_)));
}
