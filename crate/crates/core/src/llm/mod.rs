//! LLM access: a uniform completion interface over HTTP and scripted
//! backends, a persistent response cache with a single-flight guarantee,
//! three-way label parsing, and exact per-phase call accounting.

mod backend;
mod cache;
mod client;
mod ledger;

pub use backend::{FnBackend, HttpBackend, LlmBackend, MockBackend, ScriptedBackend};
pub use cache::ResponseCache;
pub use client::{LlmClient, RetryPolicy};
pub use ledger::{CallLedger, LedgerSnapshot, Phase};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend error (status {status}): {body}")]
    BackendError { status: u16, body: String },
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("no label token in completion {0:?}")]
    UnparsableLabel(String),
    #[error("scripted backend exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("{phase:?} requests must use temperature 0, got {temperature}")]
    NonZeroTemperature { phase: Phase, temperature: f64 },
    #[error("transport error: {0}")]
    Transport(String),
}

/// One chat-style completion request. The full prompt rides in `user_text`;
/// `system_text` is optional and unused by the shipped prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Labeling replies are a bare score; temperature 0 and a tiny budget keep
/// them deterministic and cacheable.
pub const LABEL_MAX_TOKENS: u32 = 8;

impl ChatRequest {
    /// A deterministic (temperature 0) request, as required for labeling
    /// and reranking.
    pub fn deterministic(model: impl Into<String>, user_text: impl Into<String>, max_tokens: u32) -> Self {
        ChatRequest {
            model: model.into(),
            system_text: None,
            user_text: user_text.into(),
            temperature: 0.0,
            max_tokens,
        }
    }
}

/// The judge's three-way verdict on an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Neutral,
    Positive,
}

impl Label {
    pub fn score(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Neutral => 0,
            Label::Negative => -1,
        }
    }

    pub fn from_score(score: i8) -> Option<Label> {
        match score {
            1 => Some(Label::Positive),
            0 => Some(Label::Neutral),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.score())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let score = i8::deserialize(deserializer)?;
        Label::from_score(score)
            .ok_or_else(|| serde::de::Error::custom(format!("label score must be -1, 0, or 1, got {score}")))
    }
}

/// Find the first standalone `1`, `0`, or `-1` token in a completion,
/// ignoring punctuation wrappers (`"Score: 1"`, `"(-1)"`, ...). Longer
/// numbers like `10` never match.
pub fn parse_label(text: &str) -> Result<Label, LlmError> {
    for token in text.split_whitespace() {
        let stripped = token
            .trim_matches(|c: char| !(c.is_ascii_digit() || c == '-'))
            .trim_end_matches('-');
        match stripped {
            "1" => return Ok(Label::Positive),
            "0" => return Ok(Label::Neutral),
            "-1" => return Ok(Label::Negative),
            _ => {}
        }
    }
    Err(LlmError::UnparsableLabel(text.to_string()))
}

/// Total labeling prompts for a full tree run: `n_nbr * k_nn + r`
/// (neighbors per expansion times expansions, plus the initial sample).
pub fn count_label_prompts(r: u64, n_nbr: u64, k_nn: u64) -> u64 {
    n_nbr * k_nn + r
}
