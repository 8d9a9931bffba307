use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("passage id must be non-empty")]
    EmptyPassageId,
    #[error("passage `{0}` has empty text")]
    EmptyPassageText(String),
    #[error("query `{0}` has an empty question")]
    EmptyQuestion(String),
    #[error("query `{0}` has an empty gold answer")]
    EmptyGoldAnswer(String),
    #[error("duplicate passage id `{0}` in candidate set")]
    DuplicateCandidate(String),
    #[error("top_m must be at least 1")]
    ZeroTopM,
    #[error("token guard must be at least 1 when set")]
    ZeroTokenGuard,
}

/// One retrievable evidence unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TypeError> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err(TypeError::EmptyPassageId);
        }
        if text.trim().is_empty() {
            return Err(TypeError::EmptyPassageText(id));
        }
        Ok(Self { id, text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub question: String,
    /// Empty for unlabeled runs.
    #[serde(default)]
    pub gold_answers: Vec<String>,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        gold_answers: Vec<String>,
    ) -> Result<Self, TypeError> {
        let id = id.into();
        let question = question.into();
        if question.trim().is_empty() {
            return Err(TypeError::EmptyQuestion(id));
        }
        if gold_answers.iter().any(|a| a.trim().is_empty()) {
            return Err(TypeError::EmptyGoldAnswer(id));
        }
        Ok(Self {
            id,
            question,
            gold_answers,
        })
    }

    pub fn is_labeled(&self) -> bool {
        !self.gold_answers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub passage: Passage,
    pub retriever_score: f64,
}

/// First-stage candidates for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    /// Builds a set from already-scored candidates. The list is sorted by
    /// retriever score (descending, id ascending on ties).
    pub fn new(query_id: impl Into<String>, mut candidates: Vec<Candidate>) -> Result<Self, TypeError> {
        let mut seen = std::collections::HashSet::new();
        for c in &candidates {
            if !seen.insert(c.passage.id.as_str()) {
                return Err(TypeError::DuplicateCandidate(c.passage.id.clone()));
            }
        }
        candidates.sort_by(|a, b| {
            b.retriever_score
                .total_cmp(&a.retriever_score)
                .then_with(|| a.passage.id.as_bytes().cmp(b.passage.id.as_bytes()))
        });
        Ok(Self {
            query_id: query_id.into(),
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn passages(&self) -> impl Iterator<Item = &Passage> {
        self.candidates.iter().map(|c| &c.passage)
    }
}

/// The truncate contract: at most `top_m` passages and, optionally, at most
/// `token_guard` evidence tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBudget {
    pub top_m: usize,
    pub token_guard: Option<usize>,
}

impl EvidenceBudget {
    pub fn new(top_m: usize, token_guard: Option<usize>) -> Result<Self, TypeError> {
        if top_m == 0 {
            return Err(TypeError::ZeroTopM);
        }
        if token_guard == Some(0) {
            return Err(TypeError::ZeroTokenGuard);
        }
        Ok(Self { top_m, token_guard })
    }

    pub fn top_m(top_m: usize) -> Result<Self, TypeError> {
        Self::new(top_m, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, score: f64) -> Candidate {
        Candidate {
            passage: Passage::new(id, "text").unwrap(),
            retriever_score: score,
        }
    }

    #[test]
    fn passage_invariants() {
        assert_eq!(Passage::new("", "x"), Err(TypeError::EmptyPassageId));
        assert!(matches!(Passage::new("a", "  "), Err(TypeError::EmptyPassageText(_))));
    }

    #[test]
    fn query_rejects_empty_gold() {
        assert!(Query::new("q", "Who?", vec!["".into()]).is_err());
        assert!(Query::new("q", "", vec![]).is_err());
        assert!(!Query::new("q", "Who?", vec![]).unwrap().is_labeled());
    }

    #[test]
    fn candidate_set_sorted_and_unique() {
        let set = CandidateSet::new("q", vec![cand("b", 1.0), cand("c", 2.0), cand("a", 1.0)]).unwrap();
        let ids: Vec<_> = set.passages().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert!(CandidateSet::new("q", vec![cand("a", 1.0), cand("a", 2.0)]).is_err());
    }

    #[test]
    fn budget_invariants() {
        assert_eq!(EvidenceBudget::new(0, None), Err(TypeError::ZeroTopM));
        assert_eq!(EvidenceBudget::new(1, Some(0)), Err(TypeError::ZeroTokenGuard));
        assert!(EvidenceBudget::new(3, Some(250)).is_ok());
    }
}
