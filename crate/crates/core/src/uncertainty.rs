//! Normalized Top-K uncertainty (NU) and information gain (IG).
//!
//! For one greedy step the Top-K logprobs are renormalized over the returned
//! set, their entropy is divided by `ln K'` (`K'` = entries actually present,
//! capped at `K`), and the per-step values are averaged over the rollout.
//! IG of a passage is the unconditional NU minus the passage-conditional NU.
//! All logs are natural.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{ProbeConfig, Rollout, StepDistribution};

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("step {0} has no finite mass to renormalize")]
    DegenerateDistribution(usize),
    #[error("step {step} has only {present} usable entries; need at least 2 to normalize entropy")]
    DegenerateStep { step: usize, present: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("rollout has no steps")]
    EmptyRollout,
    #[error("NU estimates are not comparable: {0}")]
    Incomparable(String),
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Softmax over the step's entries only; order preserved.
pub fn topk_renormalize(step: &StepDistribution) -> Result<Vec<(String, f64)>, UncertaintyError> {
    let max = step
        .entries
        .iter()
        .map(|e| e.logprob)
        .filter(|l| !l.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(UncertaintyError::DegenerateDistribution(step.step_index));
    }
    let weights: Vec<f64> = step.entries.iter().map(|e| (e.logprob - max).exp()).collect();
    let z = compensated_sum(weights.iter().copied());
    Ok(step
        .entries
        .iter()
        .zip(weights)
        .map(|(e, w)| (e.token.clone(), w / z))
        .collect())
}

/// `-sum p ln p` in nats, with `0 ln 0 = 0`.
pub fn token_entropy(probs: &[f64]) -> f64 {
    let h = -compensated_sum(probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()));
    h.max(0.0)
}

/// Entropy of the renormalized step computed from logprobs as
/// `ln Z - sum p (l - max)`. Exact for uniform and one-hot steps.
pub fn step_entropy(step: &StepDistribution) -> Result<f64, UncertaintyError> {
    let max = step
        .entries
        .iter()
        .map(|e| e.logprob)
        .filter(|l| !l.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(UncertaintyError::DegenerateDistribution(step.step_index));
    }
    let shifted: Vec<f64> = step.entries.iter().map(|e| e.logprob - max).collect();
    let z = compensated_sum(shifted.iter().map(|s| s.exp()));
    let mean_shift = compensated_sum(shifted.iter().map(|s| {
        let p = s.exp() / z;
        if p > 0.0 {
            p * s
        } else {
            0.0
        }
    }));
    Ok((z.ln() - mean_shift).max(0.0))
}

/// Per-step uncertainty in `[0, 1]`, normalized by `ln K'`.
pub fn step_normalized_uncertainty(step: &StepDistribution, k: usize) -> Result<f64, UncertaintyError> {
    if k < 2 {
        return Err(UncertaintyError::InvalidK(k));
    }
    let present = step.entries.len().min(k);
    if present < 2 {
        return Err(UncertaintyError::DegenerateStep {
            step: step.step_index,
            present,
        });
    }
    let h = if present < step.entries.len() {
        step_entropy(&step.truncated(present))?
    } else {
        step_entropy(step)?
    };
    Ok((h / (present as f64).ln()).clamp(0.0, 1.0))
}

/// Sequence-level normalized uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuValue {
    pub value: f64,
    pub steps_used: usize,
    /// Configured Top-K.
    pub k_requested: usize,
    /// Smallest `K'` used by any step; below `k_requested` when the backend
    /// returned fewer alternatives.
    pub k_used: usize,
    pub max_tokens: usize,
}

/// Mean of the per-step uncertainties over the whole rollout.
pub fn sequence_nu(rollout: &Rollout, cfg: &ProbeConfig) -> Result<NuValue, UncertaintyError> {
    sequence_nu_with_horizon(rollout, cfg, None)
}

/// As [`sequence_nu`], optionally averaging only over the first `horizon` steps.
pub fn sequence_nu_with_horizon(
    rollout: &Rollout,
    cfg: &ProbeConfig,
    horizon: Option<usize>,
) -> Result<NuValue, UncertaintyError> {
    let k = cfg.top_k;
    let t = horizon.map_or(rollout.steps.len(), |h| h.min(rollout.steps.len()));
    if t == 0 {
        return Err(UncertaintyError::EmptyRollout);
    }
    let steps = &rollout.steps[..t];
    let us = steps
        .iter()
        .map(|s| step_normalized_uncertainty(s, k))
        .collect::<Result<Vec<_>, _>>()?;
    let value = (compensated_sum(us) / t as f64).clamp(0.0, 1.0);
    let k_used = steps.iter().map(|s| s.entries.len().min(k)).min().unwrap_or(k);
    Ok(NuValue {
        value,
        steps_used: t,
        k_requested: k,
        k_used,
        max_tokens: cfg.max_tokens,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgScore {
    pub passage_id: String,
    pub nu_unconditional: NuValue,
    pub nu_conditional: NuValue,
    /// `nu_unconditional.value - nu_conditional.value`; positive means the
    /// passage makes generation more decisive.
    pub ig: f64,
}

pub fn information_gain(
    nu_uncond: &NuValue,
    nu_cond: &NuValue,
    passage_id: impl Into<String>,
) -> Result<IgScore, UncertaintyError> {
    if nu_uncond.k_requested != nu_cond.k_requested {
        return Err(UncertaintyError::Incomparable(format!(
            "top_k {} vs {}",
            nu_uncond.k_requested, nu_cond.k_requested
        )));
    }
    if nu_uncond.max_tokens != nu_cond.max_tokens {
        return Err(UncertaintyError::Incomparable(format!(
            "max_tokens {} vs {}",
            nu_uncond.max_tokens, nu_cond.max_tokens
        )));
    }
    Ok(IgScore {
        passage_id: passage_id.into(),
        nu_unconditional: *nu_uncond,
        nu_conditional: *nu_cond,
        ig: nu_uncond.value - nu_cond.value,
    })
}
