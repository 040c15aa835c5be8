//! Chat-completions scorer reading first-token log-probabilities.
//!
//! Request sent to the configured endpoint:
//!
//! ```json
//! {"model": "...", "messages": [{"role": "user", "content": "<prompt>"}],
//!  "max_tokens": 1, "temperature": 0.0, "logprobs": true, "top_logprobs": 5}
//! ```
//!
//! The top candidates for the first generated token are read from
//! `choices[0].logprobs.content[0].top_logprobs` (`[{"token", "logprob"}]`).
//! The legacy completions shape `choices[0].logprobs.top_logprobs[0]`
//! (`{"token": logprob}`) is accepted as well.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{ScoreError, Scorer, ScorerKind, YesProbability};
use crate::prompt::PromptInstance;

pub const MIN_TOP_LOGPROBS: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RemoteScorerConfig {
    /// Full URL of the chat completions route.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_top")]
    pub top_logprobs: usize,
    /// Renormalize P(Y) over {Y, N}; otherwise report the raw token probability.
    #[serde(default = "default_true")]
    pub renormalize: bool,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_key_env() -> String {
    "CATS_API_KEY".into()
}
fn default_top() -> usize {
    MIN_TOP_LOGPROBS
}
fn default_true() -> bool {
    true
}
fn default_retries() -> usize {
    3
}
fn default_timeout() -> u64 {
    120
}

/// P(first token = 'Y') from the top-K candidates of the first token.
///
/// Candidates are matched after trimming whitespace, so `" Y"` counts as
/// `"Y"`; repeated matches are summed. Returns `None` when neither label
/// appears. With `renormalize` an absent label contributes zero mass.
pub fn yes_probability(top: &[(String, f64)], renormalize: bool) -> Option<f64> {
    let mass = |label: &str| -> Option<f64> {
        let lps: Vec<f64> = top
            .iter()
            .filter(|(tok, _)| tok.trim() == label)
            .map(|(_, lp)| *lp)
            .collect();
        (!lps.is_empty()).then(|| lps.iter().map(|lp| lp.exp()).sum())
    };
    let (y, n) = (mass("Y"), mass("N"));
    match (y, n, renormalize) {
        (None, None, _) => None,
        (y, n, true) => {
            let (y, n) = (y.unwrap_or(0.0), n.unwrap_or(0.0));
            Some(y / (y + n))
        }
        (y, _, false) => Some(y.unwrap_or(0.0).min(1.0)),
    }
}

/// Extracts `(token, logprob)` pairs for the first generated token.
pub fn first_token_logprobs(resp: &Value) -> Result<Vec<(String, f64)>, String> {
    let logprobs = resp
        .pointer("/choices/0/logprobs")
        .ok_or("response has no choices[0].logprobs")?;
    if let Some(list) = logprobs.pointer("/content/0/top_logprobs").and_then(Value::as_array) {
        return list
            .iter()
            .map(|e| {
                let tok = e.get("token").and_then(Value::as_str).ok_or("top_logprobs entry without token")?;
                let lp = e.get("logprob").and_then(Value::as_f64).ok_or("top_logprobs entry without logprob")?;
                Ok((tok.to_string(), lp))
            })
            .collect();
    }
    if let Some(map) = logprobs.pointer("/top_logprobs/0").and_then(Value::as_object) {
        return map
            .iter()
            .map(|(tok, lp)| Ok((tok.clone(), lp.as_f64().ok_or("non-numeric logprob")?)))
            .collect();
    }
    Err("no first-token top_logprobs in response".into())
}

pub struct RemoteLlmScorer {
    cfg: RemoteScorerConfig,
    name: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl RemoteLlmScorer {
    pub fn new(cfg: RemoteScorerConfig) -> Result<Self, ScoreError> {
        if cfg.top_logprobs < MIN_TOP_LOGPROBS {
            return Err(ScoreError::Config(format!(
                "top_logprobs must be at least {MIN_TOP_LOGPROBS}"
            )));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ScoreError::Config(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env).ok();
        let name = format!(
            "remote:{}@{}:{}",
            cfg.model,
            cfg.endpoint,
            if cfg.renormalize { "renorm" } else { "raw" }
        );
        Ok(Self {
            cfg,
            name,
            api_key,
            http,
        })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": true,
            "top_logprobs": self.cfg.top_logprobs,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Vec<(String, f64)>, String> {
        let mut req = self.http.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| e.to_string())?;
        let value: Value = resp.json().map_err(|e| format!("invalid JSON: {e}"))?;
        first_token_logprobs(&value)
    }
}

impl Scorer for RemoteLlmScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ScorerKind {
        ScorerKind::RemoteLlm
    }

    fn score(&self, prompt: &PromptInstance) -> Result<YesProbability, ScoreError> {
        let body = self.request_body(&prompt.text);
        let attempts = self.cfg.max_retries.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Ok(top) => {
                    return Ok(match yes_probability(&top, self.cfg.renormalize) {
                        Some(p) => YesProbability { p, fallback: false },
                        None => {
                            warn!(query = %prompt.query.linearize(), "neither Y nor N among first-token candidates");
                            YesProbability { p: 0.5, fallback: true }
                        }
                    });
                }
                Err(e) => {
                    warn!(attempt, error = %e, "scoring request failed");
                    last = e;
                    if attempt < attempts {
                        std::thread::sleep(Duration::from_millis(250 * attempt as u64));
                    }
                }
            }
        }
        Err(ScoreError::Transport {
            attempts,
            message: last,
        })
    }
}
