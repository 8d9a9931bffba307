//! Evidence selection: IGP rerank + threshold pruning, the truncate
//! executor, and the generator-scored baselines.
//!
//! Every reranker produces a [`RankedList`]; [`truncate`] only looks at the
//! list order and the admitted flags, so swapping the scoring method never
//! changes how the budget is enforced.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{Generator, ProbeConfig, ProbeError, RolloutCache};
use crate::prompt::PromptBundle;
use crate::types::{CandidateSet, EvidenceBudget, Passage, Query};
use crate::uncertainty::{self, IgScore, UncertaintyError};

/// Admission threshold used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("unconditional probe failed for query `{query_id}`: {source}")]
    Unconditional {
        query_id: String,
        #[source]
        source: ProbeError,
    },
    #[error("unconditional NU undefined for query `{query_id}`: {source}")]
    UnconditionalNu {
        query_id: String,
        #[source]
        source: UncertaintyError,
    },
    #[error("{method} baseline unavailable: {source}")]
    BaselineUnavailable {
        method: &'static str,
        #[source]
        source: ProbeError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Ig,
    Qlm,
    Yesno,
    Retriever,
}

impl ScoreKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreKind::Ig => "ig",
            ScoreKind::Qlm => "qlm",
            ScoreKind::Yesno => "yesno",
            ScoreKind::Retriever => "retriever",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub passage: Passage,
    /// 0-based position in the first-stage candidate list.
    pub retriever_rank: usize,
    pub retriever_score: f64,
    /// `None` when scoring this passage failed; such entries sort last and
    /// are never admitted.
    pub score: Option<f64>,
    pub admitted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ig: Option<IgScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub kind: ScoreKind,
    pub entries: Vec<RankedEntry>,
    /// Generator calls spent on scoring (cache hits excluded).
    pub probe_calls: usize,
}

fn entry_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    let by_score = match (a.score, b.score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_score
        .then_with(|| a.retriever_rank.cmp(&b.retriever_rank))
        .then_with(|| a.passage.id.as_bytes().cmp(b.passage.id.as_bytes()))
}

impl RankedList {
    /// Sorts by score (descending), then retriever rank, then passage id.
    pub fn from_entries(query_id: impl Into<String>, kind: ScoreKind, mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(entry_order);
        Self {
            query_id: query_id.into(),
            kind,
            entries,
            probe_calls: 0,
        }
    }

    /// Admits exactly the entries scoring at least `threshold`.
    pub fn apply_threshold(&mut self, threshold: f64) {
        for e in &mut self.entries {
            e.admitted = e.score.is_some_and(|s| s >= threshold);
        }
    }

    /// Admits every successfully scored entry.
    pub fn admit_all(&mut self) {
        for e in &mut self.entries {
            e.admitted = e.score.is_some();
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.passage.id.as_str()).collect()
    }

    pub fn admitted_ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.admitted)
            .map(|e| e.passage.id.as_str())
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn base_entry(rank: usize, c: &crate::types::Candidate) -> RankedEntry {
    RankedEntry {
        passage: c.passage.clone(),
        retriever_rank: rank,
        retriever_score: c.retriever_score,
        score: None,
        admitted: false,
        ig: None,
        error: None,
    }
}

/// First-stage order unchanged, everything admitted.
pub fn retriever_ranking(candidates: &CandidateSet) -> RankedList {
    let entries = candidates
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| RankedEntry {
            score: Some(c.retriever_score),
            admitted: true,
            ..base_entry(i, c)
        })
        .collect();
    RankedList::from_entries(&candidates.query_id, ScoreKind::Retriever, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgpConfig {
    pub probe: ProbeConfig,
    /// Admission barrier; `f64::NEG_INFINITY` disables pruning.
    pub threshold: f64,
    /// Average both rollouts of a pair only over their common prefix length.
    pub common_horizon: bool,
}

impl Default for IgpConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            common_horizon: false,
        }
    }
}

/// Probes the unconditional prompt once, every candidate's conditional prompt
/// in parallel, scores each candidate by information gain, sorts, and admits
/// candidates with `ig >= threshold`.
///
/// A failed conditional probe leaves that candidate unscored and rejected.
/// Failure of the unconditional probe aborts the query.
pub fn igp_rerank(
    generator: &dyn Generator,
    prompts: &PromptBundle,
    query: &Query,
    candidates: &CandidateSet,
    cfg: &IgpConfig,
    cache: &RolloutCache,
) -> Result<RankedList, SelectError> {
    let probe = &cfg.probe;
    let uncond_prompt = prompts.render_probe_prompt(query, None);
    let (uncond, hit) = cache
        .get_or_probe(generator, &query.id, &uncond_prompt, probe)
        .map_err(|source| SelectError::Unconditional {
            query_id: query.id.clone(),
            source,
        })?;
    let nu0 = uncertainty::sequence_nu(&uncond, probe).map_err(|source| SelectError::UnconditionalNu {
        query_id: query.id.clone(),
        source,
    })?;

    let scored: Vec<(RankedEntry, bool)> = candidates
        .candidates
        .par_iter()
        .enumerate()
        .map(|(rank, c)| {
            let mut entry = base_entry(rank, c);
            let prompt = prompts.render_probe_prompt(query, Some(&c.passage));
            let (rollout, hit) = match cache.get_or_probe(generator, &query.id, &prompt, probe) {
                Ok(r) => r,
                Err(e) => {
                    entry.error = Some(e.to_string());
                    return (entry, false);
                }
            };
            let result = if cfg.common_horizon {
                let h = uncond.steps.len().min(rollout.steps.len());
                uncertainty::sequence_nu_with_horizon(&uncond, probe, Some(h)).and_then(|u| {
                    let d = uncertainty::sequence_nu_with_horizon(&rollout, probe, Some(h))?;
                    uncertainty::information_gain(&u, &d, &c.passage.id)
                })
            } else {
                uncertainty::sequence_nu(&rollout, probe)
                    .and_then(|d| uncertainty::information_gain(&nu0, &d, &c.passage.id))
            };
            match result {
                Ok(ig) => {
                    entry.score = Some(ig.ig);
                    entry.ig = Some(ig);
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            (entry, hit)
        })
        .collect();

    let probe_calls = usize::from(!hit) + scored.iter().filter(|(e, hit)| !hit && e.error.is_none()).count();
    let mut list = RankedList::from_entries(&query.id, ScoreKind::Ig, scored.into_iter().map(|(e, _)| e).collect());
    list.probe_calls = probe_calls;
    list.apply_threshold(cfg.threshold);
    Ok(list)
}

/// Query-likelihood baseline: mean forced logprob of the question given the
/// passage. Fails as a whole when the backend cannot score continuations.
pub fn qlm_rerank(
    generator: &dyn Generator,
    prompts: &PromptBundle,
    query: &Query,
    candidates: &CandidateSet,
    cfg: &ProbeConfig,
) -> Result<RankedList, SelectError> {
    let scored: Vec<Result<RankedEntry, ProbeError>> = candidates
        .candidates
        .par_iter()
        .enumerate()
        .map(|(rank, c)| {
            let mut entry = base_entry(rank, c);
            let (prompt, continuation) = prompts.render_qlm(query, &c.passage);
            match generator.force_score(&prompt, &continuation, cfg) {
                Ok(lps) if !lps.is_empty() => {
                    entry.score = Some(lps.iter().sum::<f64>() / lps.len() as f64);
                }
                Ok(_) => entry.error = Some("no forced tokens scored".into()),
                Err(e @ ProbeError::Unsupported(_)) => return Err(e),
                Err(e) => entry.error = Some(e.to_string()),
            }
            Ok(entry)
        })
        .collect();
    let entries = scored
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| SelectError::BaselineUnavailable { method: "qlm", source })?;
    let calls = entries.len();
    let mut list = RankedList::from_entries(&query.id, ScoreKind::Qlm, entries);
    list.probe_calls = calls;
    list.admit_all();
    Ok(list)
}

/// Renormalized first-step mass on tokens reading "yes" (trimmed,
/// case-insensitive); 0 when none is in the Top-K set.
pub fn affirmative_probability(step: &crate::probe::StepDistribution) -> Result<f64, UncertaintyError> {
    Ok(uncertainty::topk_renormalize(step)?
        .into_iter()
        .filter(|(tok, _)| tok.trim().eq_ignore_ascii_case("yes"))
        .map(|(_, p)| p)
        .sum())
}

/// Yes/No baseline: probability of an affirmative first token.
pub fn yesno_rerank(
    generator: &dyn Generator,
    prompts: &PromptBundle,
    query: &Query,
    candidates: &CandidateSet,
    cfg: &ProbeConfig,
) -> RankedList {
    let entries: Vec<RankedEntry> = candidates
        .candidates
        .par_iter()
        .enumerate()
        .map(|(rank, c)| {
            let mut entry = base_entry(rank, c);
            let prompt = prompts.render_yesno_prompt(query, &c.passage);
            match generator
                .first_step_distribution(&prompt, cfg)
                .map_err(|e| e.to_string())
                .and_then(|s| affirmative_probability(&s).map_err(|e| e.to_string()))
            {
                Ok(p) => entry.score = Some(p),
                Err(e) => entry.error = Some(e),
            }
            entry
        })
        .collect();
    let calls = entries.len();
    let mut list = RankedList::from_entries(&query.id, ScoreKind::Yesno, entries);
    list.probe_calls = calls;
    list.admit_all();
    list
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEvidence {
    pub query_id: String,
    pub passages: Vec<Passage>,
    pub total_tokens: usize,
}

impl SelectedEvidence {
    pub fn ids(&self) -> Vec<&str> {
        self.passages.iter().map(|p| p.id.as_str()).collect()
    }
}

/// Takes admitted entries in list order, at most `top_m` of them, stopping
/// before the first passage that would push the running token count past the
/// guard (no skipping ahead to shorter passages).
pub fn truncate(
    ranked: &RankedList,
    budget: &EvidenceBudget,
    token_counter: &dyn Fn(&str) -> usize,
) -> SelectedEvidence {
    let mut passages = Vec::new();
    let mut total = 0usize;
    for e in ranked.entries.iter().filter(|e| e.admitted).take(budget.top_m) {
        let n = token_counter(&e.passage.text);
        if budget.token_guard.is_some_and(|b| total + n > b) {
            break;
        }
        total += n;
        passages.push(e.passage.clone());
    }
    SelectedEvidence {
        query_id: ranked.query_id.clone(),
        passages,
        total_tokens: total,
    }
}
