//! Answer-quality, cost and ranking metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no reference answers; unlabeled samples must be excluded before scoring")]
    NoReferences,
    #[error("cannot summarize an empty result set")]
    EmptyResults,
    #[error("NTE undefined: {0}")]
    UndefinedNte(String),
    #[error("correlation needs two equal-length vectors of at least 2 values (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined for a constant vector")]
    ConstantInput,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Graded relevance judgments: query id -> passage id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn from_map(judgments: BTreeMap<String, BTreeMap<String, u32>>) -> Self {
        Self { judgments }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, passage_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(passage_id.into(), grade);
    }

    /// Unjudged pairs count as 0.
    pub fn relevance(&self, query_id: &str, passage_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn has_query(&self, query_id: &str) -> bool {
        self.judgments.contains_key(query_id)
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// Answer normalization. With `remove_articles` set, standalone
/// "a", "an" and "the" are dropped after the other rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalizer {
    pub remove_articles: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

impl Normalizer {
    pub fn normalize(&self, text: &str) -> String {
        let lowered = text.to_lowercase();
        let stripped: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
        stripped
            .split_whitespace()
            .filter(|t| !(self.remove_articles && matches!(*t, "a" | "an" | "the")))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn tokens(&self, text: &str) -> Vec<String> {
        self.normalize(text)
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn token_f1(&self, prediction: &str, reference: &str) -> Prf {
        let pred = self.tokens(prediction);
        let gold = self.tokens(reference);
        if pred.is_empty() || gold.is_empty() {
            return Prf::ZERO;
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for t in &pred {
            counts.entry(t).or_default().0 += 1;
        }
        for t in &gold {
            counts.entry(t).or_default().1 += 1;
        }
        let overlap: usize = counts.values().map(|&(a, b)| a.min(b)).sum();
        if overlap == 0 {
            return Prf::ZERO;
        }
        let precision = overlap as f64 / pred.len() as f64;
        let recall = overlap as f64 / gold.len() as f64;
        Prf {
            precision,
            recall,
            f1: 2.0 * precision * recall / (precision + recall),
        }
    }

    /// Best score over the references. In closed-set yes/no mode a reference
    /// scores 1 on normalized equality and 0 otherwise.
    pub fn best_of_refs<S: AsRef<str>>(
        &self,
        prediction: &str,
        refs: &[S],
        closed_set_yes_no: bool,
    ) -> Result<f64, EvalError> {
        if refs.is_empty() {
            return Err(EvalError::NoReferences);
        }
        let pred_norm = self.normalize(prediction);
        Ok(refs
            .iter()
            .map(|r| {
                if closed_set_yes_no {
                    if self.normalize(r.as_ref()) == pred_norm {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.token_f1(prediction, r.as_ref()).f1
                }
            })
            .fold(0.0, f64::max))
    }

    /// True when every reference normalizes to "yes" or "no".
    pub fn is_closed_set_yes_no<S: AsRef<str>>(&self, refs: &[S]) -> bool {
        !refs.is_empty()
            && refs
                .iter()
                .all(|r| matches!(self.normalize(r.as_ref()).as_str(), "yes" | "no"))
    }
}

pub fn normalize_answer(text: &str) -> String {
    Normalizer::default().normalize(text)
}

pub fn token_f1(prediction: &str, reference: &str) -> Prf {
    Normalizer::default().token_f1(prediction, reference)
}

pub fn f1_best_of_refs<S: AsRef<str>>(prediction: &str, refs: &[S], closed_set_yes_no: bool) -> Result<f64, EvalError> {
    Normalizer::default().best_of_refs(prediction, refs, closed_set_yes_no)
}

/// Whitespace token count; the default TK counter.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub query_id: String,
    pub prediction: String,
    pub f1: f64,
    pub input_tokens: usize,
    pub ndcg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_samples: usize,
    pub f1_mean: f64,
    pub tk_mean: f64,
    pub nte: Option<f64>,
}

/// `(F1_method / TK_method) / (F1_base / TK_base)`.
pub fn nte(f1: f64, tk: f64, base_f1: f64, base_tk: f64) -> Result<f64, EvalError> {
    if tk == 0.0 {
        return Err(EvalError::UndefinedNte("method TK is zero".into()));
    }
    if base_f1 == 0.0 {
        return Err(EvalError::UndefinedNte("baseline F1 is zero".into()));
    }
    if base_tk == 0.0 {
        return Err(EvalError::UndefinedNte("baseline TK is zero".into()));
    }
    Ok((f1 / tk) / (base_f1 / base_tk))
}

pub fn dataset_summary(
    results: &[SampleResult],
    baseline: Option<&DatasetSummary>,
) -> Result<DatasetSummary, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let n = results.len() as f64;
    let f1_mean = results.iter().map(|r| r.f1).sum::<f64>() / n;
    let tk_mean = results.iter().map(|r| r.input_tokens as f64).sum::<f64>() / n;
    let nte = baseline
        .map(|b| nte(f1_mean, tk_mean, b.f1_mean, b.tk_mean))
        .transpose()?;
    Ok(DatasetSummary {
        n_samples: results.len(),
        f1_mean,
        tk_mean,
        nte,
    })
}

fn dcg(grades: impl IntoIterator<Item = u32>) -> f64 {
    grades
        .into_iter()
        .enumerate()
        .map(|(i, rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of `ranked` against all judged passages of the query. Unjudged
/// passages count as relevance 0; a query with no positive judgment scores 0.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], qrels: &QrelSet, query_id: &str, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let Some(judged) = qrels.judged(query_id) else {
        return Ok(0.0);
    };
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return Ok(0.0);
    }
    let got = dcg(ranked.iter().take(k).map(|id| qrels.relevance(query_id, id.as_ref())));
    Ok((got / idcg).clamp(0.0, 1.0))
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}
