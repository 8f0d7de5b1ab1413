//! Completion backends: a chat-completion HTTP client plus scripted,
//! closure, and mock backends for tests and offline runs.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatRequest, LlmError};

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

/// Chat-completion-style HTTP backend
/// (`POST {model, messages, temperature, max_tokens}` ->
/// `{choices: [{message: {content}}]}`). A bearer token is attached when an
/// API key is supplied.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    timeout: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let timeout = Duration::from_secs(60);
        HttpBackend {
            endpoint: endpoint.into(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("client builds"),
            timeout,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self.client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        self
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &request.system_text {
            messages.push(WireMessage {
                role: "system",
                content: system,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &request.user_text,
        });
        let wire = WireRequest {
            model: &request.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self.client.post(&self.endpoint).json(&wire);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout(self.timeout)
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(LlmError::BackendError {
                status: status.as_u16(),
                body: response.text().unwrap_or_default(),
            });
        }
        let body: WireResponse = response
            .json()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::BackendError {
                status: status.as_u16(),
                body: "response had no choices".into(),
            })
    }
}

/// Replays a fixed queue of responses, failing when exhausted.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    responses: Mutex<VecDeque<String>>,
    served: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScriptedBackend {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            served: Mutex::new(0),
        }
    }

    pub fn served(&self) -> usize {
        *self.served.lock().unwrap()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, _request: &ChatRequest) -> Result<String, LlmError> {
        let mut queue = self.responses.lock().unwrap();
        match queue.pop_front() {
            Some(response) => {
                *self.served.lock().unwrap() += 1;
                Ok(response)
            }
            None => Err(LlmError::ScriptExhausted(*self.served.lock().unwrap())),
        }
    }
}

/// Computes responses from the request; the workhorse for oracle labelers
/// in tests.
pub struct FnBackend<F>(pub F);

impl<F> LlmBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (self.0)(request)
    }
}

/// Deterministic offline backend for smoke runs: labels everything `1`,
/// reranks in the given order, and "translates" by echoing the prompt's
/// final line (the query sentence).
#[derive(Debug, Default, Clone, Copy)]
pub struct MockBackend;

impl LlmBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let text = &request.user_text;
        if text.contains("Return only the score") {
            return Ok("1".into());
        }
        if text.contains("comma-separated list of candidate numbers") {
            let candidates = text.lines().filter(|l| is_numbered(l)).count().max(1);
            let order: Vec<String> = (1..=candidates).map(|i| i.to_string()).collect();
            return Ok(order.join(","));
        }
        Ok(text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").to_string())
    }
}

fn is_numbered(line: &str) -> bool {
    let mut chars = line.chars();
    let mut saw_digit = false;
    for c in chars.by_ref() {
        if c.is_ascii_digit() {
            saw_digit = true;
        } else {
            return saw_digit && c == '.';
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::deterministic("test-model", text, 8)
    }

    #[test]
    fn scripted_backend_replays_then_exhausts() {
        let backend = ScriptedBackend::new(["1", "0"]);
        assert_eq!(backend.complete(&request("a")).unwrap(), "1");
        assert_eq!(backend.complete(&request("b")).unwrap(), "0");
        assert!(matches!(
            backend.complete(&request("c")),
            Err(LlmError::ScriptExhausted(2))
        ));
    }

    #[test]
    fn fn_backend_sees_the_request() {
        let backend = FnBackend(|req: &ChatRequest| Ok(format!("len={}", req.user_text.len())));
        assert_eq!(backend.complete(&request("abcd")).unwrap(), "len=4");
    }

    #[test]
    fn mock_backend_echoes_query_line() {
        let backend = MockBackend;
        let out = backend
            .complete(&request("instructions here\n\nthe query line"))
            .unwrap();
        assert_eq!(out, "the query line");
        assert_eq!(backend.complete(&request("x Return only the score")).unwrap(), "1");
        let rerank = backend
            .complete(&request(
                "rank these\n1. a\n2. b\n3. c\ncomma-separated list of candidate numbers",
            ))
            .unwrap();
        assert_eq!(rerank, "1,2,3");
    }
}
