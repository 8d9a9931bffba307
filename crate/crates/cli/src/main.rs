use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use igp_core::pipeline::{self, BackendConfig, RerankMethod, RunConfig, SweepGrid};
use igp_core::probe::HttpConfig;
use igp_core::ProbeConfig;
use tracing_subscriber::EnvFilter;

/// Evidence selection for budgeted retrieval-augmented generation.
#[derive(Parser)]
#[command(name = "igp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a corpus JSONL file.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Comma-separated stopword list.
        #[arg(long, value_delimiter = ',')]
        stopwords: Vec<String>,
    },
    /// Retrieve, rerank, truncate, answer and score every query.
    Run(RunArgs),
    /// Run once per grid point and write a long-form CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Threshold values, e.g. `-inf,0,0.05`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        tp_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        k_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        mt_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        topm_grid: Vec<usize>,
    },
    /// Pareto and NDCG/F1 correlation tables from summary CSVs.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// none | ig | igp | qlm | yesno
    #[arg(long)]
    rerank: Option<RerankMethod>,
    /// Admission threshold for `igp`; accepts `-inf`.
    #[arg(long, allow_hyphen_values = true)]
    tp: Option<f64>,
    #[arg(long)]
    topm: Option<usize>,
    #[arg(long)]
    token_guard: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Top-K logprobs per probe step.
    #[arg(long)]
    k: Option<usize>,
    /// Probe rollout cap in tokens.
    #[arg(long)]
    mt: Option<usize>,
    /// Use a stub backend file.
    #[arg(long, conflicts_with = "endpoint")]
    stub: Option<PathBuf>,
    /// OpenAI-compatible base URL, e.g. http://127.0.0.1:8000/v1.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Skip final answer generation.
    #[arg(long)]
    no_generate: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(m) = self.rerank {
            cfg.selection.rerank = m;
        }
        if let Some(tp) = self.tp {
            cfg.selection.threshold = tp;
        }
        if let Some(m) = self.topm {
            cfg.selection.top_m = m;
        }
        if self.token_guard.is_some() {
            cfg.selection.token_guard = self.token_guard;
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if self.k.is_some() || self.mt.is_some() {
            cfg.probe = ProbeConfig::new(
                self.k.unwrap_or(cfg.probe.top_k),
                self.mt.unwrap_or(cfg.probe.max_tokens),
            )?;
        }
        if let Some(path) = &self.stub {
            cfg.backend = Some(BackendConfig::Stub { path: path.clone() });
        }
        if let Some(url) = &self.endpoint {
            let mut http = match cfg.backend.take() {
                Some(BackendConfig::Http(h)) => h,
                _ => HttpConfig::default(),
            };
            http.base_url = url.clone();
            cfg.backend = Some(BackendConfig::Http(http));
        }
        if let Some(model) = &self.model {
            match cfg.backend.as_mut() {
                Some(BackendConfig::Http(h)) => h.model = model.clone(),
                _ => bail!("--model needs an HTTP backend"),
            }
        }
        if let Some(q) = &self.qrels {
            cfg.qrels = Some(q.clone());
        }
        if self.no_generate {
            cfg.generate_answers = false;
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Index {
            corpus,
            output,
            stopwords,
        } => {
            let index = pipeline::cmd_index(&corpus, &output, &stopwords)
                .with_context(|| format!("indexing {}", corpus.display()))?;
            println!(
                "indexed {} passages (avg length {:.2}) -> {}",
                index.doc_count(),
                index.avg_doc_length(),
                output.display()
            );
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let out = pipeline::cmd_run(&cfg)?;
            let s = &out.summary;
            println!(
                "{} topm={} n={} f1={} tk={} nte={} ndcg={} failures={} -> {}",
                s.method,
                s.topm,
                s.n,
                fmt(s.f1),
                fmt(s.tk),
                fmt(s.nte),
                fmt(s.ndcg),
                out.failures,
                cfg.output_dir.display()
            );
            if out.failed {
                eprintln!("failure rate above max_failure_rate ({})", cfg.max_failure_rate);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep {
            run,
            tp_grid,
            k_grid,
            mt_grid,
            topm_grid,
        } => {
            let cfg = run.load()?;
            let grid = SweepGrid {
                tp: tp_grid,
                k: k_grid,
                mt: mt_grid,
                top_m: topm_grid,
            };
            let results = pipeline::cmd_sweep(&cfg, &grid)?;
            println!(
                "{} grid points -> {}",
                results.len(),
                cfg.output_dir.join("sweep.csv").display()
            );
            if results.iter().any(|(_, o)| o.failed) {
                eprintln!("failure rate above max_failure_rate at one or more grid points");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { summaries, output } => {
            let (pareto, corr) = pipeline::cmd_report(&summaries, &output)?;
            let dominated = pareto.iter().filter(|r| r.dominated).count();
            println!(
                "{} rows ({} dominated), {} correlation groups -> {}",
                pareto.len(),
                dominated,
                corr.len(),
                output.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
