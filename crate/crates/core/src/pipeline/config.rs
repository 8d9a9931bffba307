use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::probe::{HttpConfig, ProbeConfig};
use crate::prompt::PromptBundle;
use crate::retrieve::Bm25Params;
use crate::select::DEFAULT_THRESHOLD;
use crate::types::EvidenceBudget;

/// Environment variable holding the API credential for the HTTP backend.
pub const API_KEY_ENV: &str = "IGP_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankMethod {
    /// Retriever order, no pruning.
    None,
    /// IG reordering only (threshold forced to -inf).
    Ig,
    /// IG reordering plus threshold pruning.
    Igp,
    Qlm,
    Yesno,
}

impl RerankMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RerankMethod::None => "none",
            RerankMethod::Ig => "ig",
            RerankMethod::Igp => "igp",
            RerankMethod::Qlm => "qlm",
            RerankMethod::Yesno => "yesno",
        }
    }

    pub fn needs_generator(&self) -> bool {
        !matches!(self, RerankMethod::None)
    }

    pub fn uses_threshold(&self) -> bool {
        matches!(self, RerankMethod::Igp)
    }
}

impl std::str::FromStr for RerankMethod {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" | "retriever" => RerankMethod::None,
            "ig" => RerankMethod::Ig,
            "igp" => RerankMethod::Igp,
            "qlm" => RerankMethod::Qlm,
            "yesno" => RerankMethod::Yesno,
            other => return Err(PipelineError::Config(format!("unknown rerank method `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Stub { path: PathBuf },
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub rerank: RerankMethod,
    /// Admission threshold for `igp`.
    pub threshold: f64,
    pub top_m: usize,
    pub token_guard: Option<usize>,
    pub common_horizon: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            rerank: RerankMethod::Igp,
            threshold: DEFAULT_THRESHOLD,
            top_m: 5,
            token_guard: None,
            common_horizon: false,
        }
    }
}

impl SelectionConfig {
    pub fn budget(&self) -> Result<EvidenceBudget, PipelineError> {
        EvidenceBudget::new(self.top_m, self.token_guard).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Threshold actually applied for this method.
    pub fn effective_threshold(&self) -> f64 {
        match self.rerank {
            RerankMethod::Igp => self.threshold,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Everything a run needs. Relative paths are resolved against the config
/// file's directory by [`RunConfig::from_file`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Prebuilt index; the index is built in memory when absent.
    pub index: Option<PathBuf>,
    pub dataset: PathBuf,
    pub qrels: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub backend: Option<BackendConfig>,
    pub retrieval: Bm25Params,
    pub stopwords: Vec<String>,
    pub probe: ProbeConfig,
    pub selection: SelectionConfig,
    pub prompts: PromptBundle,
    pub parallelism: usize,
    /// Generate and score final answers when the backend can.
    pub generate_answers: bool,
    pub answer_max_tokens: usize,
    /// Also run the retriever-only pipeline to report NTE.
    pub compute_nte: bool,
    pub ndcg_k: usize,
    /// Keep only queries that have relevance judgments.
    pub require_qrels: bool,
    pub remove_articles: bool,
    /// Fraction of failed queries above which the run is reported as failed.
    pub max_failure_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            index: None,
            dataset: PathBuf::from("dataset.jsonl"),
            qrels: None,
            output_dir: PathBuf::from("runs/default"),
            backend: None,
            retrieval: Bm25Params::default(),
            stopwords: Vec::new(),
            probe: ProbeConfig::default(),
            selection: SelectionConfig::default(),
            prompts: PromptBundle::default(),
            parallelism: 4,
            generate_answers: true,
            answer_max_tokens: 32,
            compute_nte: true,
            ndcg_k: 5,
            require_qrels: false,
            remove_articles: false,
            max_failure_rate: 0.1,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.corpus);
        resolve(base, &mut cfg.dataset);
        resolve(base, &mut cfg.output_dir);
        for p in [&mut cfg.index, &mut cfg.qrels].into_iter().flatten() {
            resolve(base, p);
        }
        if let Some(BackendConfig::Stub { path }) = &mut cfg.backend {
            resolve(base, path);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks invariants and that every referenced input exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.selection.budget()?;
        if self.parallelism == 0 {
            return Err(PipelineError::Config("parallelism must be >= 1".into()));
        }
        if self.ndcg_k == 0 {
            return Err(PipelineError::Config("ndcg_k must be >= 1".into()));
        }
        if self.answer_max_tokens == 0 {
            return Err(PipelineError::Config("answer_max_tokens must be >= 1".into()));
        }
        if self.selection.threshold.is_nan() {
            return Err(PipelineError::Config("threshold must not be NaN".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(PipelineError::Config("max_failure_rate must be in [0, 1]".into()));
        }
        if self.selection.rerank.needs_generator() && self.backend.is_none() {
            return Err(PipelineError::Config(format!(
                "rerank `{}` needs a backend",
                self.selection.rerank.as_str()
            )));
        }
        let mut required: Vec<&Path> = vec![&self.corpus, &self.dataset];
        required.extend(self.qrels.as_deref());
        if let Some(BackendConfig::Stub { path }) = &self.backend {
            required.push(path);
        }
        if let Some(missing) = required.into_iter().find(|p| !p.exists()) {
            return Err(PipelineError::MissingInput(missing.to_path_buf()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_with_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            corpus = "c.jsonl"
            dataset = "d.jsonl"
            [backend]
            kind = "stub"
            path = "stub.json"
            [selection]
            rerank = "igp"
            threshold = -inf
            top_m = 3
            [probe]
            top_k = 16
            max_tokens = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.selection.threshold, f64::NEG_INFINITY);
        assert_eq!(cfg.probe, ProbeConfig::new(16, 8).unwrap());
        assert_eq!(cfg.retrieval, Bm25Params::default());
        assert!(matches!(cfg.backend, Some(BackendConfig::Stub { .. })));
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(RunConfig::from_toml("[probe]\ntop_k = 1\nmax_tokens = 4").is_err());
        assert!(RunConfig::from_toml("[selection]\nrerank = \"bogus\"").is_err());
        let mut cfg = RunConfig::default();
        cfg.selection.rerank = RerankMethod::Qlm;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        cfg.selection.rerank = RerankMethod::None;
        assert!(matches!(cfg.validate(), Err(PipelineError::MissingInput(_))));
        cfg.selection.top_m = 0;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("IGP".parse::<RerankMethod>().unwrap(), RerankMethod::Igp);
        assert_eq!("none".parse::<RerankMethod>().unwrap(), RerankMethod::None);
        assert!("ce".parse::<RerankMethod>().is_err());
        let s = SelectionConfig {
            rerank: RerankMethod::Ig,
            ..SelectionConfig::default()
        };
        assert_eq!(s.effective_threshold(), f64::NEG_INFINITY);
    }
}
