//! Evidence selection for budgeted retrieval-augmented generation.
//!
//! The engine follows a `retrieve -> rerank -> truncate` pipeline. Candidates
//! come from a BM25 index, are rescored by how much each one reduces the
//! generator's normalized Top-K uncertainty (information gain), pruned against
//! an admission threshold, and finally cut to the evidence budget.
//!
//! Module map:
//!
//! * [`types`], [`prompt`], [`io`]: shared domain data, prompt templates, file formats
//! * [`probe`]: black-box generator access (OpenAI-compatible HTTP and a table-driven stub)
//! * [`uncertainty`]: Top-K renormalization, entropy, NU and information gain
//! * [`retrieve`]: BM25 inverted index
//! * [`select`]: IGP rerank/prune, the truncate executor and generator-scored baselines
//! * [`evaluate`]: token F1, TK, NTE, NDCG@k and Spearman correlation
//! * [`pipeline`]: end-to-end runs, parameter sweeps and reports

pub mod evaluate;
pub mod io;
pub mod pipeline;
pub mod probe;
pub mod prompt;
pub mod retrieve;
pub mod select;
pub mod types;
pub mod uncertainty;

pub use evaluate::{DatasetSummary, QrelSet, SampleResult};
pub use probe::{Generator, ProbeConfig, ProbeError, Rollout, StepDistribution};
pub use prompt::PromptBundle;
pub use retrieve::{Bm25Params, Bm25Retriever, InvertedIndex, Retriever};
pub use select::{RankedList, ScoreKind, SelectedEvidence};
pub use types::{CandidateSet, EvidenceBudget, Passage, Query};
pub use uncertainty::{IgScore, NuValue};
