use std::fmt;
use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::PromptBundle;

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "INFUSE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    /// Maximum requests in flight.
    pub parallelism: usize,
    /// Retries after the first attempt, for transport errors, 429 and 5xx.
    pub retry_budget: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
    /// Abort the run after this many samples in a row failed at the endpoint.
    pub max_consecutive_failures: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "llava-v1.5-7b".into(),
            timeout_secs: 120,
            parallelism: 4,
            retry_budget: 3,
            backoff_ms: 500,
            max_consecutive_failures: 10,
        }
    }
}

impl EndpointConfig {
    /// Decoding temperature. Pinned so runs are reproducible.
    pub const TEMPERATURE: f64 = 0.0;

    pub fn chat_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// Connection refused, DNS, timeout, TLS.
    Transport,
    /// Non-success HTTP status.
    Status,
    /// Reply was not a parseable chat completion.
    Protocol,
    /// The request could not be built (e.g. unreadable image).
    Input,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::Transport => "transport",
            ErrorClass::Status => "status",
            ErrorClass::Protocol => "protocol",
            ErrorClass::Input => "input",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{class} error{}: {message}", .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
pub struct EndpointError {
    pub class: ErrorClass,
    pub status: Option<u16>,
    pub message: String,
}

impl EndpointError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            status: None,
            message: message.into(),
        }
    }

    pub fn status(code: u16, message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Status,
            status: Some(code),
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self.class {
            ErrorClass::Transport => true,
            ErrorClass::Status => self.status.is_some_and(|s| s == 429 || s >= 500),
            ErrorClass::Protocol | ErrorClass::Input => false,
        }
    }

    /// Failures that say something about the endpoint rather than the sample.
    pub fn is_endpoint_failure(&self) -> bool {
        match self.class {
            ErrorClass::Transport => true,
            ErrorClass::Status => self.status.is_some_and(|s| s >= 500),
            ErrorClass::Protocol | ErrorClass::Input => false,
        }
    }
}

/// Something that answers prompts.
pub trait Endpoint: Send + Sync {
    fn complete(&self, bundle: &PromptBundle, prompt: &str) -> Result<String, EndpointError>;
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// The image part of a message: URLs and data URLs pass through, local files
/// are inlined as base64 data URLs, an empty reference yields no part.
pub fn image_part(image_ref: &str) -> Result<Option<Value>, EndpointError> {
    if image_ref.is_empty() {
        return Ok(None);
    }
    let url = if ["http://", "https://", "data:"].iter().any(|p| image_ref.starts_with(p)) {
        image_ref.to_string()
    } else {
        let path = Path::new(image_ref);
        let bytes = std::fs::read(path)
            .map_err(|e| EndpointError::new(ErrorClass::Input, format!("cannot read image {image_ref}: {e}")))?;
        format!(
            "data:{};base64,{}",
            mime_for(path),
            base64::engine::general_purpose::STANDARD.encode(bytes)
        )
    };
    Ok(Some(json!({"type": "image_url", "image_url": {"url": url}})))
}

/// Chat-completions request body for a single user turn.
pub fn build_request_body(model: &str, image: Option<Value>, prompt: &str) -> Value {
    let mut content: Vec<Value> = image.into_iter().collect();
    content.push(json!({"type": "text", "text": prompt}));
    json!({
        "model": model,
        "temperature": EndpointConfig::TEMPERATURE,
        "messages": [{"role": "user", "content": content}],
    })
}

/// Pulls the first choice's message content out of a reply body.
pub fn parse_reply(body: &str) -> Result<String, EndpointError> {
    let protocol = |m: &str| EndpointError::new(ErrorClass::Protocol, m);
    let v: Value = serde_json::from_str(body).map_err(|e| protocol(&format!("reply is not JSON: {e}")))?;
    let content = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| protocol("reply has no choices[0].message.content"))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            if texts.is_empty() {
                Err(protocol("reply content has no text parts"))
            } else {
                Ok(texts.concat())
            }
        }
        _ => Err(protocol("reply content is neither a string nor a list of parts")),
    }
}

/// Blocking chat-completions client.
pub struct HttpEndpoint {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpEndpoint {
    pub fn new(config: &EndpointConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: config.chat_url(),
            model: config.model.clone(),
            api_key: api_key.filter(|k| !k.is_empty()),
        }
    }

    /// Reads the token from [`API_KEY_ENV`].
    pub fn from_env(config: &EndpointConfig) -> Self {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }
}

impl Endpoint for HttpEndpoint {
    fn complete(&self, bundle: &PromptBundle, prompt: &str) -> Result<String, EndpointError> {
        let body = build_request_body(&self.model, image_part(&bundle.image_ref)?, prompt).to_string();
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| EndpointError::new(ErrorClass::Transport, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EndpointError::new(ErrorClass::Transport, format!("reading reply: {e}")))?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Err(EndpointError::status(status, snippet));
        }
        parse_reply(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let body = build_request_body("m", image_part("https://x/y.jpg").unwrap(), "hello");
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.0);
        let content = &body["messages"][0]["content"];
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(content[0]["type"], "image_url");
        assert_eq!(content[0]["image_url"]["url"], "https://x/y.jpg");
        assert_eq!(content[1]["text"], "hello");

        let body = build_request_body("m", image_part("").unwrap(), "hi");
        assert_eq!(body["messages"][0]["content"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn local_images_are_inlined() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.PNG");
        std::fs::write(&p, [1u8, 2, 3]).unwrap();
        let part = image_part(p.to_str().unwrap()).unwrap().unwrap();
        assert_eq!(part["image_url"]["url"], "data:image/png;base64,AQID");
        let err = image_part("/no/such/file.jpg").unwrap_err();
        assert_eq!(err.class, ErrorClass::Input);
        assert!(!err.is_retryable());
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply(r#"{"choices": [{"message": {"content": "yes"}}]}"#).unwrap(), "yes");
        assert_eq!(
            parse_reply(r#"{"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]}"#)
                .unwrap(),
            "ab"
        );
        for bad in ["nope", "{}", r#"{"choices": []}"#, r#"{"choices": [{"message": {"content": 3}}]}"#] {
            assert_eq!(parse_reply(bad).unwrap_err().class, ErrorClass::Protocol, "{bad}");
        }
    }

    #[test]
    fn retry_classes() {
        assert!(EndpointError::status(503, "").is_retryable());
        assert!(EndpointError::status(429, "").is_retryable());
        assert!(!EndpointError::status(400, "").is_retryable());
        assert!(!EndpointError::status(429, "").is_endpoint_failure());
        assert!(EndpointError::new(ErrorClass::Transport, "").is_endpoint_failure());
        assert_eq!(EndpointError::status(502, "bad").to_string(), "status error (HTTP 502): bad");
    }

    #[test]
    fn chat_url() {
        let mut c = EndpointConfig {
            base_url: "http://h:1/v1/".into(),
            ..EndpointConfig::default()
        };
        assert_eq!(c.chat_url(), "http://h:1/v1/chat/completions");
        c.base_url = "http://h:1/v1/chat/completions".into();
        assert_eq!(c.chat_url(), "http://h:1/v1/chat/completions");
    }
}
