//! End-to-end orchestration: configuration, runs, sweeps and reports.
//!
//! A run directory holds `config.toml` (the resolved config), `records.jsonl`
//! (one [`RunRecord`] per query, in dataset order) and `summary.csv`.

use std::path::PathBuf;

use thiserror::Error;

mod config;
mod engine;
mod report;
mod sweep;

pub use config::{BackendConfig, RerankMethod, RunConfig, SelectionConfig, API_KEY_ENV};
pub use engine::{
    replay_prompt, CandidateRecord, Engine, EngineOptions, RunOutput, RunRecord, RunSettings, ScoreRecord, Timings,
    TokenCounter,
};
pub use report::{
    correlation_table, pareto_table, read_summary_csv, write_summary_csv, CorrelationRow, ParetoRow, SummaryRow,
};
pub use sweep::{run_sweep, SweepGrid, SweepPoint};

use crate::evaluate::EvalError;
use crate::io::IoError;
use crate::probe::ProbeError;
use crate::retrieve::RetrieveError;
use crate::select::SelectError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("summary csv {}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
}

use std::path::Path;

use crate::io::read_corpus;
use crate::retrieve::{Analyzer, InvertedIndex};

/// Builds the BM25 index for a corpus file and writes it to `index_path`.
/// Identical inputs give identical bytes.
pub fn cmd_index<S: AsRef<str>>(
    corpus_path: &Path,
    index_path: &Path,
    stopwords: &[S],
) -> Result<InvertedIndex, PipelineError> {
    if !corpus_path.exists() {
        return Err(PipelineError::MissingInput(corpus_path.to_path_buf()));
    }
    let corpus = read_corpus(corpus_path)?;
    let index = InvertedIndex::build(&corpus, Analyzer::with_stopwords(stopwords))?;
    if let Some(parent) = index_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    index.save(index_path)?;
    Ok(index)
}

/// Runs the configured pipeline and writes the run directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    let engine = Engine::from_config(cfg)?;
    let settings = RunSettings::from_config(cfg)?;
    let out = engine.run(&settings)?;
    engine::write_run_dir(&cfg.output_dir, &cfg.to_toml(), &out)?;
    tracing::info!(
        records = out.records.len(),
        failures = out.failures,
        dir = %cfg.output_dir.display(),
        "run finished"
    );
    Ok(out)
}

/// Runs every grid point and writes `sweep.csv` (one row per point) plus the
/// config snapshot and grid into the output directory.
pub fn cmd_sweep(cfg: &RunConfig, grid: &SweepGrid) -> Result<Vec<(SweepPoint, RunOutput)>, PipelineError> {
    let engine = Engine::from_config(cfg)?;
    let base = RunSettings::from_config(cfg)?;
    let results = sweep::run_sweep(&engine, &base, grid)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let snapshot = format!(
        "{}\n[sweep]\n{}",
        cfg.to_toml(),
        toml::to_string(grid).map_err(|e| PipelineError::Config(e.to_string()))?
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, snapshot).map_err(|source| PipelineError::Write { path, source })?;
    let rows: Vec<SummaryRow> = results.iter().map(|(_, o)| o.summary.clone()).collect();
    write_summary_csv(&dir.join("sweep.csv"), &rows)?;
    tracing::info!(
        points = results.len(),
        cache_hits = engine.cache().hits(),
        "sweep finished"
    );
    Ok(results)
}

/// Reads summary CSVs and writes `pareto.csv` and `correlation.csv`.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<(Vec<ParetoRow>, Vec<CorrelationRow>), PipelineError> {
    let mut rows = Vec::new();
    for p in inputs {
        if !p.exists() {
            return Err(PipelineError::MissingInput(p.clone()));
        }
        rows.extend(read_summary_csv(p)?);
    }
    if rows.is_empty() {
        return Err(PipelineError::Config("report needs at least one summary row".into()));
    }
    let pareto = pareto_table(&rows);
    let corr = correlation_table(&rows);
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    report::write_pareto_csv(&out_dir.join("pareto.csv"), &pareto)?;
    report::write_correlation_csv(&out_dir.join("correlation.csv"), &corr)?;
    Ok((pareto, corr))
}
