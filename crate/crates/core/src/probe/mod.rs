//! Black-box generator access.
//!
//! Probing is always greedy (temperature 0). A probe returns, per decoding
//! step, the Top-K log-probabilities the backend exposes. Two backends ship:
//! [`HttpGenerator`] for OpenAI-compatible completions endpoints and
//! [`StubGenerator`], a table-driven generator for tests and fixtures.

mod cache;
mod http;
mod stub;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::RolloutCache;
pub use http::{HttpConfig, HttpGenerator};
pub use stub::{StubGenerator, StubRule, StubScript, StubSpec, StubStep};

pub const DEFAULT_TOP_K: usize = 128;
pub const DEFAULT_MAX_TOKENS: usize = 32;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("endpoint returned no logprobs; it must support top-k logprobs")]
    MissingLogprobs,
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("invalid probe request: {0}")]
    InvalidRequest(String),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("invalid step distribution: {0}")]
    InvalidStep(String),
    #[error("generation produced no steps")]
    EmptyRollout,
    #[error("stub has no script for prompt: {0}")]
    NoScript(String),
}

impl ProbeError {
    /// Transport problems and throttling/server errors may succeed on retry;
    /// everything else is a configuration or protocol fault.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProbeError::Transport(_) => true,
            ProbeError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
        }
    }
}

/// Descending by logprob, then lexicographic by token bytes.
fn entry_order(a: &TokenLogprob, b: &TokenLogprob) -> Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.token.as_bytes().cmp(b.token.as_bytes()))
}

/// Top-K record of one greedy decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    /// 1-based.
    pub step_index: usize,
    pub entries: Vec<TokenLogprob>,
    pub chosen_token: String,
    pub is_eos: bool,
}

impl StepDistribution {
    /// Sorts the entries, keeps at most `top_k` of them and picks the greedy
    /// token. Entries must be non-empty with finite logprobs and distinct tokens.
    pub fn new(
        step_index: usize,
        mut entries: Vec<TokenLogprob>,
        top_k: usize,
        is_eos: bool,
    ) -> Result<Self, ProbeError> {
        if step_index == 0 {
            return Err(ProbeError::InvalidStep("step_index is 1-based".into()));
        }
        if entries.is_empty() {
            return Err(ProbeError::InvalidStep(format!("step {step_index} has no entries")));
        }
        if let Some(bad) = entries.iter().find(|e| !e.logprob.is_finite()) {
            return Err(ProbeError::InvalidStep(format!(
                "step {step_index}: non-finite logprob for token {:?}",
                bad.token
            )));
        }
        entries.sort_by(entry_order);
        if entries.windows(2).any(|w| w[0].token == w[1].token) {
            return Err(ProbeError::InvalidStep(format!("step {step_index}: duplicate token")));
        }
        entries.truncate(top_k.max(1));
        let chosen_token = entries[0].token.clone();
        Ok(Self {
            step_index,
            entries,
            chosen_token,
            is_eos,
        })
    }

    pub fn chosen_logprob(&self) -> f64 {
        self.entries[0].logprob
    }

    /// How many alternatives short of `k` the backend returned.
    pub fn shortfall(&self, k: usize) -> usize {
        k.saturating_sub(self.entries.len())
    }

    /// The same step restricted to its `k` best entries.
    pub fn truncated(&self, k: usize) -> Self {
        let mut s = self.clone();
        s.entries.truncate(k.max(1));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxTokens,
}

/// Which end-of-generation signal fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EosSignal {
    /// An explicit end-of-sequence token was the greedy choice.
    Token,
    /// The backend reported that generation stopped on its own.
    FinishReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub steps: Vec<StepDistribution>,
    pub effective_length: usize,
    pub terminated_by: Termination,
    pub eos_signal: Option<EosSignal>,
}

impl Rollout {
    /// Cuts the raw steps at the first EOS step (inclusive) or at
    /// `max_tokens`, whichever comes first. When `end_signal` is given and the
    /// stream ends without an EOS step inside the horizon, the last step is
    /// marked as EOS.
    pub fn from_steps(
        mut steps: Vec<StepDistribution>,
        max_tokens: usize,
        end_signal: Option<EosSignal>,
    ) -> Result<Self, ProbeError> {
        if steps.is_empty() {
            return Err(ProbeError::EmptyRollout);
        }
        let eos_at = steps.iter().position(|s| s.is_eos);
        let (len, terminated_by, eos_signal) = match eos_at {
            Some(i) if i < max_tokens => (i + 1, Termination::Eos, Some(EosSignal::Token)),
            _ if steps.len() < max_tokens || (steps.len() == max_tokens && end_signal.is_some()) => match end_signal {
                Some(sig) => (steps.len(), Termination::Eos, Some(sig)),
                None => {
                    return Err(ProbeError::Malformed(format!(
                        "rollout stopped after {} of {max_tokens} steps without an end signal",
                        steps.len()
                    )))
                }
            },
            _ => (max_tokens, Termination::MaxTokens, None),
        };
        steps.truncate(len);
        for s in steps.iter_mut() {
            s.is_eos = false;
        }
        if terminated_by == Termination::Eos {
            steps[len - 1].is_eos = true;
        }
        for (i, s) in steps.iter_mut().enumerate() {
            s.step_index = i + 1;
        }
        Ok(Self {
            effective_length: len,
            steps,
            terminated_by,
            eos_signal,
        })
    }

    /// Each step restricted to its `k` best entries. The greedy path does not
    /// depend on `k`, so this equals a fresh probe at the smaller `k`.
    pub fn truncated_k(&self, k: usize) -> Self {
        Self {
            steps: self.steps.iter().map(|s| s.truncated(k)).collect(),
            ..self.clone()
        }
    }

    /// Concatenated greedy tokens, excluding an explicit EOS token.
    pub fn text(&self) -> String {
        self.steps
            .iter()
            .filter(|s| !(s.is_eos && self.eos_signal == Some(EosSignal::Token)))
            .map(|s| s.chosen_token.as_str())
            .collect()
    }
}

/// Top-K size and rollout horizon. Temperature is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawProbeConfig")]
pub struct ProbeConfig {
    pub top_k: usize,
    pub max_tokens: usize,
}

#[derive(Deserialize)]
struct RawProbeConfig {
    top_k: usize,
    max_tokens: usize,
}

impl TryFrom<RawProbeConfig> for ProbeConfig {
    type Error = ProbeError;
    fn try_from(r: RawProbeConfig) -> Result<Self, Self::Error> {
        ProbeConfig::new(r.top_k, r.max_tokens)
    }
}

impl ProbeConfig {
    pub fn new(top_k: usize, max_tokens: usize) -> Result<Self, ProbeError> {
        if top_k < 2 {
            return Err(ProbeError::InvalidConfig(format!("top_k must be >= 2, got {top_k}")));
        }
        if max_tokens == 0 {
            return Err(ProbeError::InvalidConfig("max_tokens must be >= 1".into()));
        }
        Ok(Self { top_k, max_tokens })
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// A generator that can be probed for greedy Top-K rollouts.
///
/// Implementations hold no per-call session state and are shared across
/// worker threads.
pub trait Generator: Send + Sync {
    fn greedy_rollout(&self, prompt: &str, cfg: &ProbeConfig) -> Result<Rollout, ProbeError>;

    /// Per-token logprobs of `continuation` under teacher forcing.
    fn force_score(&self, prompt: &str, continuation: &str, cfg: &ProbeConfig) -> Result<Vec<f64>, ProbeError>;

    fn first_step_distribution(&self, prompt: &str, cfg: &ProbeConfig) -> Result<StepDistribution, ProbeError> {
        let one = ProbeConfig { max_tokens: 1, ..*cfg };
        let mut r = self.greedy_rollout(prompt, &one)?;
        Ok(r.steps.swap_remove(0))
    }

    /// Free-form greedy answer generation for the final answer call.
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProbeError>;

    fn supports_generation(&self) -> bool {
        true
    }
}

pub(crate) fn check_prompt(prompt: &str) -> Result<(), ProbeError> {
    if prompt.is_empty() {
        Err(ProbeError::InvalidRequest("prompt must be non-empty".into()))
    } else {
        Ok(())
    }
}
