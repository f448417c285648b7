//! Chat-completion HTTP client shared by concept generation and paraphrasing.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the bearer token when none is configured.
pub const DEFAULT_TOKEN_ENV: &str = "WIRETEXT_API_TOKEN";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider request failed: {0}")]
    Transport(String),
    #[error("provider returned status {0}")]
    Status(u16),
    #[error("provider returned an empty response")]
    Empty,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider gave up after {attempts} attempts: {reason}")]
    Exhausted { attempts: usize, reason: String },
}

/// Endpoint settings for a chat-completion style service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

fn default_model() -> String {
    "default".into()
}
fn default_timeout() -> f64 {
    30.0
}
fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.into()
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: default_model(),
            timeout_s: default_timeout(),
            token_env: default_token_env(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

/// Sends one user message and returns the first choice's text.
pub fn chat(settings: &HttpSettings, prompt: &str) -> Result<String, ProviderError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(settings.timeout_s.max(0.001))))
        .http_status_as_error(false)
        .build()
        .into();
    let body = ChatRequest {
        model: &settings.model,
        messages: vec![ChatMessage {
            role: "user",
            content: prompt,
        }],
    };
    let mut req = agent.post(&settings.endpoint);
    if let Ok(token) = std::env::var(&settings.token_env) {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req
        .send_json(&body)
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(ProviderError::Status(status));
    }
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    extract_content(&text)
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_content(body: &str) -> Result<String, ProviderError> {
    if body.trim().is_empty() {
        return Err(ProviderError::Empty);
    }
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/choices/0/text"))
        .and_then(|c| c.as_str())
        .ok_or_else(|| ProviderError::Malformed("no choices[0].message.content".into()))?;
    if content.trim().is_empty() {
        return Err(ProviderError::Empty);
    }
    Ok(content.trim().to_string())
}

#[cfg(test)]
pub(crate) mod testing {
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// One-shot-per-connection HTTP server answering every request with `body`.
    /// Returns the endpoint URL and a log of received request bodies.
    pub fn serve(status: u16, body: &'static str, connections: usize) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let log = Arc::new(Mutex::new(Vec::new()));
        let log2 = log.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().take(connections) {
                let mut s = stream.unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = s.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf).to_string();
                    if let Some(hdr_end) = text.find("\r\n\r\n") {
                        let len = text[..hdr_end]
                            .lines()
                            .find_map(|l| {
                                let l = l.to_ascii_lowercase();
                                l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap_or(0))
                            })
                            .unwrap_or(0);
                        if buf.len() >= hdr_end + 4 + len {
                            log2.lock().unwrap().push(text[hdr_end + 4..].to_string());
                            break;
                        }
                    }
                }
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = s.write_all(resp.as_bytes());
            }
        });
        (format!("http://{addr}/v1/chat/completions"), log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":" hi there "}},{"message":{"content":"no"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "hi there");
        assert!(matches!(extract_content(""), Err(ProviderError::Empty)));
        assert!(matches!(extract_content("{}"), Err(ProviderError::Malformed(_))));
    }

    #[test]
    fn round_trip_against_local_server() {
        let (url, log) = testing::serve(200, r#"{"choices":[{"message":{"content":"ok"}}]}"#, 1);
        let out = chat(&HttpSettings::new(url), "hello").unwrap();
        assert_eq!(out, "ok");
        let sent: serde_json::Value = serde_json::from_str(&log.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "hello");
        assert!(sent["model"].is_string());
    }

    #[test]
    fn non_success_status_is_error() {
        let (url, _) = testing::serve(503, "{}", 1);
        assert!(matches!(chat(&HttpSettings::new(url), "x"), Err(ProviderError::Status(503))));
    }
}
