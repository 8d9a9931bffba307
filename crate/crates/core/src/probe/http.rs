//! OpenAI-compatible `/completions` client.
//!
//! Probing requests carry `temperature: 0`, `max_tokens: MT` and
//! `logprobs: K`. Both the legacy `top_logprobs` map layout and the
//! `content` array layout of the `logprobs` object are accepted.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{check_prompt, EosSignal, Generator, ProbeConfig, ProbeError, Rollout, StepDistribution, TokenLogprob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// e.g. `http://127.0.0.1:8000/v1`; `/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Sent as a bearer token when set.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Explicit end-of-sequence token text, if the server returns it.
    pub eos_token: Option<String>,
    /// Server honours `echo: true` with prompt logprobs (needed for forced scoring).
    pub supports_echo: bool,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: String::new(),
            api_key: None,
            eos_token: None,
            supports_echo: false,
            max_retries: 3,
            backoff_ms: 200,
            timeout_secs: 120,
        }
    }
}

pub struct HttpGenerator {
    cfg: HttpConfig,
    url: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpGenerator")
            .field("url", &self.url)
            .field("model", &self.cfg.model)
            .finish()
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Default, Deserialize)]
struct Logprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Vec<Option<Map<String, Value>>>,
    #[serde(default)]
    text_offset: Vec<usize>,
    #[serde(default)]
    content: Option<Vec<ContentToken>>,
}

#[derive(Debug, Deserialize)]
struct ContentToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopEntry>,
}

#[derive(Debug, Deserialize)]
struct TopEntry {
    token: String,
    logprob: f64,
}

impl HttpGenerator {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .build()
            .into();
        let url = format!("{}/completions", cfg.base_url.trim_end_matches('/'));
        Self { cfg, url, agent }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn post_once(&self, body: &Value) -> Result<CompletionResponse, ProbeError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| ProbeError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProbeError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProbeError::Status { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| ProbeError::Malformed(e.to_string()))
    }

    /// Retries transport and throttling failures with exponential backoff.
    fn post(&self, body: &Value) -> Result<Choice, ProbeError> {
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Ok(mut r) => {
                    if r.choices.is_empty() {
                        return Err(ProbeError::Malformed("response has no choices".into()));
                    }
                    return Ok(r.choices.swap_remove(0));
                }
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let wait = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    tracing::warn!(attempt, wait_ms = wait, error = %e, "retrying completion request");
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn request(&self, prompt: &str, max_tokens: usize, logprobs: Option<usize>, echo: bool) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0,
        });
        if let Some(k) = logprobs {
            body["logprobs"] = json!(k);
        }
        if echo {
            body["echo"] = json!(true);
        }
        body
    }
}

fn parse_top_map(map: &Map<String, Value>) -> Result<Vec<TokenLogprob>, ProbeError> {
    map.iter()
        .map(|(tok, v)| {
            v.as_f64()
                .map(|lp| TokenLogprob::new(tok.clone(), lp))
                .ok_or_else(|| ProbeError::Malformed(format!("non-numeric logprob for {tok:?}")))
        })
        .collect()
}

/// Per-step `(greedy token, entries)` from either logprobs layout.
fn step_entries(lp: &Logprobs) -> Result<Vec<(String, Vec<TokenLogprob>)>, ProbeError> {
    if let Some(content) = &lp.content {
        return Ok(content
            .iter()
            .map(|c| {
                let mut entries: Vec<TokenLogprob> = c
                    .top_logprobs
                    .iter()
                    .map(|t| TokenLogprob::new(t.token.clone(), t.logprob))
                    .collect();
                if entries.is_empty() {
                    entries.push(TokenLogprob::new(c.token.clone(), c.logprob));
                }
                (c.token.clone(), entries)
            })
            .collect());
    }
    if lp.top_logprobs.len() != lp.tokens.len() {
        return Err(ProbeError::Malformed(format!(
            "{} tokens but {} top_logprobs entries",
            lp.tokens.len(),
            lp.top_logprobs.len()
        )));
    }
    lp.tokens
        .iter()
        .zip(&lp.top_logprobs)
        .map(|(tok, top)| {
            let top = top
                .as_ref()
                .ok_or_else(|| ProbeError::Malformed(format!("missing top_logprobs for token {tok:?}")))?;
            Ok((tok.clone(), parse_top_map(top)?))
        })
        .collect()
}

fn rollout_from_choice(choice: &Choice, cfg: &ProbeConfig, eos_token: Option<&str>) -> Result<Rollout, ProbeError> {
    let lp = choice.logprobs.as_ref().ok_or(ProbeError::MissingLogprobs)?;
    let raw = step_entries(lp)?;
    if raw.is_empty() && lp.content.is_none() && lp.tokens.is_empty() && lp.top_logprobs.is_empty() {
        if choice.text.is_empty() {
            return Err(ProbeError::EmptyRollout);
        }
        return Err(ProbeError::MissingLogprobs);
    }
    let mut steps = Vec::with_capacity(raw.len());
    for (i, (tok, entries)) in raw.into_iter().enumerate() {
        let is_eos = eos_token.is_some_and(|e| e == tok);
        steps.push(StepDistribution::new(i + 1, entries, cfg.top_k, is_eos)?);
    }
    let end = match choice.finish_reason.as_deref() {
        Some("stop") | Some("eos") => Some(EosSignal::FinishReason),
        _ => None,
    };
    Rollout::from_steps(steps, cfg.max_tokens, end)
}

fn forced_logprobs(choice: &Choice, prompt: &str, continuation: &str) -> Result<Vec<f64>, ProbeError> {
    let lp = choice.logprobs.as_ref().ok_or(ProbeError::MissingLogprobs)?;
    if lp.text_offset.len() != lp.tokens.len() || lp.token_logprobs.len() != lp.tokens.len() {
        return Err(ProbeError::Unsupported("echoed prompt logprobs"));
    }
    let start = prompt.chars().count();
    let end = start + continuation.chars().count();
    let out: Vec<f64> = lp
        .text_offset
        .iter()
        .zip(&lp.token_logprobs)
        .filter(|(off, _)| **off >= start && **off < end)
        .map(|(_, l)| l.ok_or_else(|| ProbeError::Malformed("null logprob inside continuation".into())))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(ProbeError::Unsupported("echoed prompt logprobs"));
    }
    Ok(out)
}

impl Generator for HttpGenerator {
    fn greedy_rollout(&self, prompt: &str, cfg: &ProbeConfig) -> Result<Rollout, ProbeError> {
        check_prompt(prompt)?;
        let choice = self.post(&self.request(prompt, cfg.max_tokens, Some(cfg.top_k), false))?;
        rollout_from_choice(&choice, cfg, self.cfg.eos_token.as_deref())
    }

    fn force_score(&self, prompt: &str, continuation: &str, _cfg: &ProbeConfig) -> Result<Vec<f64>, ProbeError> {
        check_prompt(prompt)?;
        if continuation.is_empty() {
            return Err(ProbeError::InvalidRequest("continuation must be non-empty".into()));
        }
        if !self.cfg.supports_echo {
            return Err(ProbeError::Unsupported("forced continuation scoring (echo)"));
        }
        let full = format!("{prompt}{continuation}");
        let choice = self.post(&self.request(&full, 1, Some(1), true))?;
        forced_logprobs(&choice, prompt, continuation)
    }

    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProbeError> {
        check_prompt(prompt)?;
        let choice = self.post(&self.request(prompt, max_tokens, None, false))?;
        Ok(choice.text.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choice(v: Value) -> Choice {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn parses_legacy_layout() {
        let c = choice(json!({
            "text": " Paris",
            "finish_reason": "stop",
            "logprobs": {
                "tokens": [" Paris", "."],
                "token_logprobs": [-0.1, -0.3],
                "top_logprobs": [{" Paris": -0.1, " Lyon": -2.5}, {".": -0.3, "!": -1.6}],
                "text_offset": [0, 6]
            }
        }));
        let r = rollout_from_choice(&c, &ProbeConfig::new(4, 32).unwrap(), None).unwrap();
        assert_eq!(r.effective_length, 2);
        assert_eq!(r.eos_signal, Some(EosSignal::FinishReason));
        assert!(r.steps[1].is_eos);
        assert_eq!(r.steps[0].chosen_token, " Paris");
    }

    #[test]
    fn parses_content_layout_and_length_finish() {
        let c = choice(json!({
            "text": "a b",
            "finish_reason": "length",
            "logprobs": { "content": [
                {"token": "a", "logprob": -0.2, "top_logprobs": [{"token": "a", "logprob": -0.2}, {"token": "b", "logprob": -1.7}]},
                {"token": " b", "logprob": -0.4, "top_logprobs": [{"token": " b", "logprob": -0.4}, {"token": " c", "logprob": -1.1}]}
            ]}
        }));
        let r = rollout_from_choice(&c, &ProbeConfig::new(4, 2).unwrap(), None).unwrap();
        assert_eq!(r.terminated_by, super::super::Termination::MaxTokens);
    }

    #[test]
    fn explicit_eos_token() {
        let c = choice(json!({
            "finish_reason": "length",
            "logprobs": {
                "tokens": ["x", "<|im_end|>", "y"],
                "top_logprobs": [{"x": -0.1, "z": -3.0}, {"<|im_end|>": -0.01, "z": -5.0}, {"y": -0.1, "q": -1.0}]
            }
        }));
        let r = rollout_from_choice(&c, &ProbeConfig::new(4, 3).unwrap(), Some("<|im_end|>")).unwrap();
        assert_eq!(r.effective_length, 2);
        assert_eq!(r.eos_signal, Some(EosSignal::Token));
    }

    #[test]
    fn missing_logprobs_is_fatal() {
        let c = choice(json!({"text": "x", "finish_reason": "stop", "logprobs": null}));
        let err = rollout_from_choice(&c, &ProbeConfig::default(), None).unwrap_err();
        assert!(matches!(err, ProbeError::MissingLogprobs));
        assert!(!err.is_retryable());
    }

    #[test]
    fn forced_logprobs_slice_continuation() {
        let c = choice(json!({
            "logprobs": {
                "tokens": ["Q", ":", " who", " won", "!"],
                "token_logprobs": [null, -1.0, -0.5, -0.25, -3.0],
                "text_offset": [0, 1, 2, 6, 10]
            }
        }));
        assert_eq!(forced_logprobs(&c, "Q:", " who won").unwrap(), vec![-0.5, -0.25]);
    }

    #[test]
    fn no_echo_capability_is_unsupported() {
        let g = HttpGenerator::new(HttpConfig::default());
        let err = g.force_score("p", "c", &ProbeConfig::default()).unwrap_err();
        assert!(matches!(err, ProbeError::Unsupported(_)));
    }
}
