use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BackendConfig, RerankMethod, RunConfig, API_KEY_ENV};
use super::report::SummaryRow;
use super::PipelineError;
use crate::evaluate::{self, Normalizer, QrelSet, SampleResult};
use crate::io;
use crate::probe::{Generator, HttpGenerator, ProbeConfig, RolloutCache, StubGenerator};
use crate::prompt::PromptBundle;
use crate::retrieve::{Analyzer, Bm25Retriever, InvertedIndex};
use crate::select::{self, IgpConfig, RankedList, SelectError};
use crate::types::{CandidateSet, EvidenceBudget, Passage, Query};

/// Counts the input tokens of a rendered prompt (TK).
pub type TokenCounter = Arc<dyn Fn(&str) -> usize + Send + Sync>;

/// Knobs that may change between runs over the same engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub method: RerankMethod,
    pub probe: ProbeConfig,
    /// Applied only by `igp`; `ig` always uses -inf.
    pub threshold: f64,
    pub budget: EvidenceBudget,
    pub common_horizon: bool,
}

impl RunSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            method: cfg.selection.rerank,
            probe: cfg.probe,
            threshold: cfg.selection.effective_threshold(),
            budget: cfg.selection.budget()?,
            common_horizon: cfg.selection.common_horizon,
        })
    }

    /// Retriever-only settings at the same budget.
    pub fn baseline(&self) -> Self {
        Self {
            method: RerankMethod::None,
            threshold: f64::NEG_INFINITY,
            ..*self
        }
    }

    fn effective_threshold(&self) -> f64 {
        if self.method.uses_threshold() {
            self.threshold
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub retriever_score: f64,
}

/// Per-candidate scoring outcome, in reranked order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_unconditional: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_conditional: Option<f64>,
    pub admitted: bool,
    pub probe_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wall-clock milliseconds; excluded from replay comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub retrieve_ms: f64,
    pub select_ms: f64,
    pub generate_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub question: String,
    pub method: RerankMethod,
    pub candidates: Vec<CandidateRecord>,
    pub scores: Vec<ScoreRecord>,
    pub admitted: Vec<String>,
    pub selected: Vec<String>,
    pub evidence_tokens: usize,
    pub final_prompt: String,
    pub prediction: Option<String>,
    pub f1: Option<f64>,
    pub input_tokens: usize,
    pub ndcg: Option<f64>,
    pub probe_calls: usize,
    pub probe_failures: usize,
    /// Set when the query failed as a whole; such records are left out of
    /// the summary.
    pub error: Option<String>,
    pub timings: Timings,
}

impl RunRecord {
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub fn is_failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Rebuilds the final answer prompt from a record and the corpus.
pub fn replay_prompt<'a>(
    record: &RunRecord,
    prompts: &PromptBundle,
    lookup: impl Fn(&str) -> Option<&'a Passage>,
) -> Result<String, PipelineError> {
    let passages = record
        .selected
        .iter()
        .map(|id| {
            lookup(id)
                .cloned()
                .ok_or_else(|| PipelineError::Config(format!("passage `{id}` not in corpus")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let query = Query {
        id: record.query_id.clone(),
        question: record.question.clone(),
        gold_answers: Vec::new(),
    };
    Ok(prompts.render_answer_prompt(&query, &passages))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub settings: RunSettings,
    pub records: Vec<RunRecord>,
    pub summary: SummaryRow,
    pub failures: usize,
    /// Failed queries exceed the configured ceiling.
    pub failed: bool,
}

impl RunOutput {
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone)]
pub struct EngineOptions {
    pub prompts: PromptBundle,
    pub normalizer: Normalizer,
    pub parallelism: usize,
    pub generate_answers: bool,
    pub answer_max_tokens: usize,
    pub compute_nte: bool,
    pub ndcg_k: usize,
    pub max_failure_rate: f64,
    pub dataset_name: String,
    pub token_counter: TokenCounter,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self::from_config(&RunConfig::default())
    }
}

impl EngineOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            prompts: cfg.prompts.clone(),
            normalizer: Normalizer {
                remove_articles: cfg.remove_articles,
            },
            parallelism: cfg.parallelism,
            generate_answers: cfg.generate_answers,
            answer_max_tokens: cfg.answer_max_tokens,
            compute_nte: cfg.compute_nte,
            ndcg_k: cfg.ndcg_k,
            max_failure_rate: cfg.max_failure_rate,
            dataset_name: cfg
                .dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            token_counter: Arc::new(evaluate::whitespace_token_count),
        }
    }
}

struct Prepared {
    query: Query,
    candidates: CandidateSet,
    retrieve_ms: f64,
}

/// Loaded corpus, queries and backend, with first-stage retrieval already
/// done. Runs over the same engine share the rollout cache.
pub struct Engine {
    retriever: Bm25Retriever,
    prepared: Vec<Prepared>,
    qrels: Option<QrelSet>,
    generator: Option<Arc<dyn Generator>>,
    options: EngineOptions,
    cache: RolloutCache,
    pool: rayon::ThreadPool,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub(super) fn build_generator(backend: &BackendConfig) -> Result<Arc<dyn Generator>, PipelineError> {
    Ok(match backend {
        BackendConfig::Stub { path } => Arc::new(StubGenerator::from_path(path)?),
        BackendConfig::Http(http) => {
            let mut http = http.clone();
            if http.api_key.is_none() {
                http.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            }
            Arc::new(HttpGenerator::new(http))
        }
    })
}

impl Engine {
    pub fn new(
        retriever: Bm25Retriever,
        queries: Vec<Query>,
        qrels: Option<QrelSet>,
        generator: Option<Arc<dyn Generator>>,
        options: EngineOptions,
    ) -> Result<Self, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism.max(1))
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let prepared = pool.install(|| {
            queries
                .into_par_iter()
                .map(|query| {
                    let t = Instant::now();
                    let candidates = retriever.search(&query.id, &query.question);
                    Prepared {
                        query,
                        candidates,
                        retrieve_ms: elapsed_ms(t),
                    }
                })
                .collect()
        });
        Ok(Self {
            retriever,
            prepared,
            qrels,
            generator,
            options,
            cache: RolloutCache::new(),
            pool,
        })
    }

    /// Loads every input named by the config. The index file is used when
    /// present, otherwise the index is built in memory.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let corpus = io::read_corpus(&cfg.corpus)?;
        let mut queries = io::read_dataset(&cfg.dataset)?;
        let qrels = cfg.qrels.as_deref().map(io::read_qrels).transpose()?;
        if cfg.require_qrels {
            let q = qrels
                .as_ref()
                .ok_or_else(|| PipelineError::Config("require_qrels needs a qrels file".into()))?;
            queries.retain(|query| q.has_query(&query.id) && query.is_labeled());
        }
        let analyzer = Analyzer::with_stopwords(&cfg.stopwords);
        let index = match cfg.index.as_deref().filter(|p| p.exists()) {
            Some(p) => InvertedIndex::load(p, &analyzer)?,
            None => InvertedIndex::build(&corpus, analyzer)?,
        };
        let retriever = Bm25Retriever::new(index, corpus, cfg.retrieval)?;
        let generator = cfg.backend.as_ref().map(build_generator).transpose()?;
        Self::new(retriever, queries, qrels, generator, EngineOptions::from_config(cfg))
    }

    pub fn retriever(&self) -> &Bm25Retriever {
        &self.retriever
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    pub fn cache(&self) -> &RolloutCache {
        &self.cache
    }

    pub fn query_count(&self) -> usize {
        self.prepared.len()
    }

    fn generates(&self) -> bool {
        self.options.generate_answers && self.generator.as_ref().is_some_and(|g| g.supports_generation())
    }

    /// Runs every query, then the retriever-only baseline when NTE is
    /// requested and the method is not already the baseline.
    pub fn run(&self, settings: &RunSettings) -> Result<RunOutput, PipelineError> {
        let mut out = self.run_without_nte(settings)?;
        if self.options.compute_nte {
            let base = if settings.method == RerankMethod::None {
                out.summary.clone()
            } else {
                self.run_without_nte(&settings.baseline())?.summary
            };
            out.summary.set_nte(&base);
        }
        Ok(out)
    }

    /// Like [`Engine::run`] with NTE taken against a precomputed baseline row.
    pub fn run_against(&self, settings: &RunSettings, baseline: &SummaryRow) -> Result<RunOutput, PipelineError> {
        let mut out = self.run_without_nte(settings)?;
        out.summary.set_nte(baseline);
        Ok(out)
    }

    pub fn run_without_nte(&self, settings: &RunSettings) -> Result<RunOutput, PipelineError> {
        if settings.method.needs_generator() && self.generator.is_none() {
            return Err(PipelineError::Config(format!(
                "rerank `{}` needs a backend",
                settings.method.as_str()
            )));
        }
        let records = self.pool.install(|| {
            self.prepared
                .par_iter()
                .map(|p| self.process(p, settings))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let failures = records.iter().filter(|r| r.is_failed()).count();
        let rate = if records.is_empty() {
            0.0
        } else {
            failures as f64 / records.len() as f64
        };
        if failures > 0 {
            tracing::warn!(failures, total = records.len(), "queries failed");
        }
        let summary = self.summarize(settings, &records, failures)?;
        Ok(RunOutput {
            settings: *settings,
            records,
            summary,
            failures,
            failed: rate > self.options.max_failure_rate,
        })
    }

    fn rank(&self, query: &Query, candidates: &CandidateSet, s: &RunSettings) -> Result<RankedList, SelectError> {
        let prompts = &self.options.prompts;
        let gen = || self.generator.as_deref().expect("checked before the run");
        Ok(match s.method {
            RerankMethod::None => select::retriever_ranking(candidates),
            RerankMethod::Ig | RerankMethod::Igp => {
                let cfg = IgpConfig {
                    probe: s.probe,
                    threshold: s.effective_threshold(),
                    common_horizon: s.common_horizon,
                };
                select::igp_rerank(gen(), prompts, query, candidates, &cfg, &self.cache)?
            }
            RerankMethod::Qlm => select::qlm_rerank(gen(), prompts, query, candidates, &s.probe)?,
            RerankMethod::Yesno => select::yesno_rerank(gen(), prompts, query, candidates, &s.probe),
        })
    }

    fn process(&self, p: &Prepared, s: &RunSettings) -> Result<RunRecord, PipelineError> {
        let query = &p.query;
        let mut record = RunRecord {
            query_id: query.id.clone(),
            question: query.question.clone(),
            method: s.method,
            candidates: p
                .candidates
                .candidates
                .iter()
                .map(|c| CandidateRecord {
                    id: c.passage.id.clone(),
                    retriever_score: c.retriever_score,
                })
                .collect(),
            scores: Vec::new(),
            admitted: Vec::new(),
            selected: Vec::new(),
            evidence_tokens: 0,
            final_prompt: String::new(),
            prediction: None,
            f1: None,
            input_tokens: 0,
            ndcg: None,
            probe_calls: 0,
            probe_failures: 0,
            error: None,
            timings: Timings {
                retrieve_ms: p.retrieve_ms,
                ..Timings::default()
            },
        };

        let t = Instant::now();
        let ranked = match self.rank(query, &p.candidates, s) {
            Ok(r) => r,
            Err(e @ SelectError::BaselineUnavailable { .. }) => return Err(e.into()),
            Err(e) => {
                tracing::warn!(query = %query.id, error = %e, "query failed");
                record.error = Some(e.to_string());
                record.timings.select_ms = elapsed_ms(t);
                return Ok(record);
            }
        };
        record.timings.select_ms = elapsed_ms(t);
        record.scores = ranked
            .entries
            .iter()
            .map(|e| ScoreRecord {
                id: e.passage.id.clone(),
                score: e.score,
                nu_unconditional: e.ig.as_ref().map(|g| g.nu_unconditional.value),
                nu_conditional: e.ig.as_ref().map(|g| g.nu_conditional.value),
                admitted: e.admitted,
                probe_failed: e.error.is_some(),
                error: e.error.clone(),
            })
            .collect();
        record.admitted = ranked.admitted_ids().into_iter().map(String::from).collect();
        record.probe_calls = ranked.probe_calls;
        record.probe_failures = ranked.failures();

        let counter = &self.options.token_counter;
        let evidence = select::truncate(&ranked, &s.budget, &|text: &str| counter(text));
        record.selected = evidence.ids().into_iter().map(String::from).collect();
        record.evidence_tokens = evidence.total_tokens;
        record.final_prompt = self.options.prompts.render_answer_prompt(query, &evidence.passages);
        record.input_tokens = counter(&record.final_prompt);

        if let Some(qrels) = self.qrels.as_ref().filter(|q| q.has_query(&query.id)) {
            record.ndcg = Some(evaluate::ndcg_at_k(
                &ranked.ids(),
                qrels,
                &query.id,
                self.options.ndcg_k,
            )?);
        }

        if self.generates() {
            let gen = self.generator.as_deref().expect("generates() checked");
            let t = Instant::now();
            match gen.generate(&record.final_prompt, self.options.answer_max_tokens) {
                Ok(answer) => {
                    if query.is_labeled() {
                        let norm = &self.options.normalizer;
                        let closed = norm.is_closed_set_yes_no(&query.gold_answers);
                        record.f1 = Some(norm.best_of_refs(&answer, &query.gold_answers, closed)?);
                    }
                    record.prediction = Some(answer);
                }
                Err(e) => {
                    tracing::warn!(query = %query.id, error = %e, "answer generation failed");
                    record.error = Some(format!("answer generation failed: {e}"));
                }
            }
            record.timings.generate_ms = elapsed_ms(t);
        }
        Ok(record)
    }

    /// Means over successful queries; with answer generation on, only
    /// labeled queries count so F1 and TK share the same sample set.
    fn summarize(&self, s: &RunSettings, records: &[RunRecord], failures: usize) -> Result<SummaryRow, PipelineError> {
        let generates = self.generates();
        let samples: Vec<&RunRecord> = records
            .iter()
            .filter(|r| !r.is_failed() && (!generates || r.f1.is_some()))
            .collect();
        let (f1, tk) = if samples.is_empty() {
            (None, None)
        } else if generates {
            let results: Vec<SampleResult> = samples
                .iter()
                .map(|r| SampleResult {
                    query_id: r.query_id.clone(),
                    prediction: r.prediction.clone().unwrap_or_default(),
                    f1: r.f1.unwrap_or_default(),
                    input_tokens: r.input_tokens,
                    ndcg: r.ndcg,
                })
                .collect();
            let d = evaluate::dataset_summary(&results, None)?;
            (Some(d.f1_mean), Some(d.tk_mean))
        } else {
            let tk = samples.iter().map(|r| r.input_tokens as f64).sum::<f64>() / samples.len() as f64;
            (None, Some(tk))
        };
        let ndcgs: Vec<f64> = samples.iter().filter_map(|r| r.ndcg).collect();
        let ndcg = (!ndcgs.is_empty()).then(|| ndcgs.iter().sum::<f64>() / ndcgs.len() as f64);
        let probes = s.method.needs_generator();
        Ok(SummaryRow {
            method: s.method.as_str().to_string(),
            topm: s.budget.top_m,
            tp: s.method.uses_threshold().then_some(s.threshold),
            f1,
            tk,
            nte: None,
            ndcg,
            n: samples.len(),
            dataset: self.options.dataset_name.clone(),
            k: probes.then_some(s.probe.top_k),
            mt: probes.then_some(s.probe.max_tokens),
            token_guard: s.budget.token_guard,
            failures,
        })
    }
}

/// Writes the config snapshot, the records and the one-row summary into
/// `dir`, replacing earlier files of the same names.
pub(super) fn write_run_dir(dir: &Path, config_toml: &str, out: &RunOutput) -> Result<(), PipelineError> {
    let write = |name: &str, body: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|source| PipelineError::Write { path, source })
    };
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    write("config.toml", config_toml.as_bytes())?;
    write("records.jsonl", out.records_jsonl().as_bytes())?;
    super::report::write_summary_csv(&dir.join("summary.csv"), std::slice::from_ref(&out.summary))
}
