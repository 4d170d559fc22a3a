use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, Usage};

pub const BASE_URL_ENV: &str = "AGILE_BASE_URL";
pub const API_KEY_ENV: &str = "AGILE_API_KEY";

/// Client for an HTTP+JSON chat-completions endpoint.
pub struct LiveBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        LiveBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(300))
                .build(),
        }
    }

    /// Reads `AGILE_BASE_URL` (required) and `AGILE_API_KEY` (optional).
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| {
            BackendError::InvalidRequest(format!("{BASE_URL_ENV} is not set"))
        })?;
        Ok(LiveBackend::new(base, std::env::var(API_KEY_ENV).ok()))
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            top_p: request.top_p,
            max_tokens: request.max_output_tokens,
        };
        let mut call = self
            .agent
            .post(&self.endpoint())
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match call.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                return Err(BackendError::Http {
                    status,
                    body: r.into_string().unwrap_or_default(),
                })
            }
            Err(ureq::Error::Transport(t)) => return Err(BackendError::Transport(t.to_string())),
        };
        let wire: WireResponse = response
            .into_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let usage = wire.usage.map_or(Usage::default(), |u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
        Ok(ChatResponse {
            content: choice.message.content.unwrap_or_default(),
            usage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// One-shot HTTP server: returns the captured request body.
    fn serve_once(status: &str, body: &str) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        let status = status.to_string();
        let body = body.to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            tx.send((head, String::from_utf8(buf).unwrap())).unwrap();
        });
        (format!("http://{addr}/v1"), rx)
    }

    #[test]
    fn sends_wire_shape_and_parses_first_choice() {
        let (url, rx) = serve_once(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"hello"}},{"message":{"content":"second"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#,
        );
        let backend = LiveBackend::new(url, Some("sk-test".into()));
        let req = ChatRequest::new(
            "gpt-test",
            vec![ChatMessage::system("sys"), ChatMessage::user("hi")],
        );
        let resp = backend.complete(&req).unwrap();
        assert_eq!(resp.content, "hello");
        assert_eq!(resp.usage, Usage { prompt_tokens: 12, completion_tokens: 3 });

        let (head, body) = rx.recv().unwrap();
        assert!(head.starts_with("POST /v1/chat/completions"));
        assert!(head.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let json: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(json["temperature"], 0.2);
        assert_eq!(json["top_p"], 1.0);
        assert_eq!(json["model"], "gpt-test");
        assert_eq!(json["messages"][0]["role"], "system");
        assert_eq!(json["messages"][1]["role"], "user");
        assert_eq!(json["messages"][1]["content"], "hi");
    }

    #[test]
    fn server_error_is_retryable_http_error() {
        let (url, _rx) = serve_once("503 Service Unavailable", r#"{"error":"busy"}"#);
        let err = LiveBackend::new(url, None)
            .complete(&ChatRequest::new("m", vec![ChatMessage::user("x")]))
            .unwrap_err();
        assert!(matches!(err, BackendError::Http { status: 503, .. }));
        assert!(err.is_retryable());
    }

    #[test]
    fn missing_choices_is_protocol_error() {
        let (url, _rx) = serve_once("200 OK", r#"{"choices":[]}"#);
        let err = LiveBackend::new(url, None)
            .complete(&ChatRequest::new("m", vec![ChatMessage::user("x")]))
            .unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn unreachable_host_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = LiveBackend::new(format!("http://{addr}"), None)
            .complete(&ChatRequest::new("m", vec![ChatMessage::user("x")]))
            .unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}
