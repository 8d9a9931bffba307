//! Table-driven generator.
//!
//! A stub document maps prompts to scripted step distributions:
//!
//! ```json
//! {
//!   "eos_token": "</s>",
//!   "prompts": { "User: Q?\nAssistant:": { "steps": [ { "top": [["Paris", -0.1], ["Lyon", -2.4]] } ] } },
//!   "rules": [ { "contains": ["Context:", "Eiffel"], "script": { "steps": [] } } ],
//!   "fallback": { "steps": [ { "top": [["</s>", 0.0], ["x", -9.0]] } ] }
//! }
//! ```
//!
//! Lookup order is exact prompt, then the first rule whose substrings all
//! occur in the prompt, then the fallback. A script's rollout ends at the
//! first step whose greedy token is `eos_token`, at the probe's `max_tokens`,
//! or when the script runs out of steps (reported as a finish-reason EOS).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{check_prompt, EosSignal, Generator, ProbeConfig, ProbeError, Rollout, StepDistribution, TokenLogprob};

fn default_eos() -> String {
    "</s>".to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubStep {
    /// `(token, logprob)` pairs, any order.
    pub top: Vec<(String, f64)>,
}

impl StubStep {
    pub fn new<S: Into<String>>(top: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self {
            top: top.into_iter().map(|(t, l)| (t.into(), l)).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubScript {
    #[serde(default)]
    pub steps: Vec<StubStep>,
    /// Exact continuation -> forced per-token logprobs.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub forced: BTreeMap<String, Vec<f64>>,
    /// Logprob assigned to every whitespace token of any other forced continuation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_logprob: Option<f64>,
    /// Text returned by free generation; defaults to the greedy rollout text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubRule {
    pub contains: Vec<String>,
    pub script: StubScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubSpec {
    #[serde(default = "default_eos")]
    pub eos_token: String,
    #[serde(default)]
    pub prompts: BTreeMap<String, StubScript>,
    #[serde(default)]
    pub rules: Vec<StubRule>,
    #[serde(default)]
    pub fallback: Option<StubScript>,
}

impl Default for StubSpec {
    fn default() -> Self {
        Self {
            eos_token: default_eos(),
            prompts: BTreeMap::new(),
            rules: Vec::new(),
            fallback: None,
        }
    }
}

#[derive(Debug)]
pub struct StubGenerator {
    spec: StubSpec,
    calls: AtomicUsize,
}

fn excerpt(prompt: &str) -> String {
    let mut s: String = prompt.chars().take(80).collect();
    if s.len() < prompt.len() {
        s.push_str("...");
    }
    s
}

impl StubGenerator {
    pub fn new(spec: StubSpec) -> Self {
        Self {
            spec,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, ProbeError> {
        serde_json::from_str(json)
            .map(Self::new)
            .map_err(|e| ProbeError::InvalidConfig(format!("stub document: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self, ProbeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProbeError::InvalidConfig(format!("cannot read stub {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn spec(&self) -> &StubSpec {
        &self.spec
    }

    /// Number of probe/generation calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn script(&self, prompt: &str) -> Result<&StubScript, ProbeError> {
        if let Some(s) = self.spec.prompts.get(prompt) {
            return Ok(s);
        }
        if let Some(rule) = self
            .spec
            .rules
            .iter()
            .find(|r| r.contains.iter().all(|needle| prompt.contains(needle.as_str())))
        {
            return Ok(&rule.script);
        }
        self.spec
            .fallback
            .as_ref()
            .ok_or_else(|| ProbeError::NoScript(excerpt(prompt)))
    }

    fn rollout_from(&self, script: &StubScript, cfg: &ProbeConfig) -> Result<Rollout, ProbeError> {
        let mut steps = Vec::new();
        for (i, raw) in script.steps.iter().take(cfg.max_tokens).enumerate() {
            let entries = raw.top.iter().map(|(t, l)| TokenLogprob::new(t.clone(), *l)).collect();
            let mut step = StepDistribution::new(i + 1, entries, cfg.top_k, false)?;
            step.is_eos = step.chosen_token == self.spec.eos_token;
            let stop = step.is_eos;
            steps.push(step);
            if stop {
                break;
            }
        }
        let exhausted = steps.len() == script.steps.len();
        Rollout::from_steps(steps, cfg.max_tokens, exhausted.then_some(EosSignal::FinishReason))
    }
}

impl Generator for StubGenerator {
    fn greedy_rollout(&self, prompt: &str, cfg: &ProbeConfig) -> Result<Rollout, ProbeError> {
        check_prompt(prompt)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.rollout_from(self.script(prompt)?, cfg)
    }

    fn force_score(&self, prompt: &str, continuation: &str, cfg: &ProbeConfig) -> Result<Vec<f64>, ProbeError> {
        check_prompt(prompt)?;
        if continuation.trim().is_empty() {
            return Err(ProbeError::InvalidRequest("continuation must be non-empty".into()));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let script = self.script(prompt)?;
        if let Some(lps) = script.forced.get(continuation) {
            return Ok(lps.clone());
        }
        if !script.steps.is_empty() {
            let r = self.rollout_from(script, cfg)?;
            if r.text().trim() == continuation.trim() {
                return Ok(r
                    .steps
                    .iter()
                    .filter(|s| !(s.is_eos && r.eos_signal == Some(EosSignal::Token)))
                    .map(StepDistribution::chosen_logprob)
                    .collect());
            }
        }
        match script.forced_logprob {
            Some(lp) => Ok(vec![lp; continuation.split_whitespace().count()]),
            None => Err(ProbeError::NoScript(format!(
                "forced continuation {:?}",
                excerpt(continuation)
            ))),
        }
    }

    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProbeError> {
        check_prompt(prompt)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let script = self.script(prompt)?;
        if let Some(a) = &script.answer {
            return Ok(a.clone());
        }
        let cfg = ProbeConfig::new(2, max_tokens.max(1))?;
        Ok(self.rollout_from(script, &cfg)?.text().trim().to_string())
    }
}
