use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evaluate;

/// One dataset-level result. The first eight CSV columns are the summary
/// schema; the rest identify the grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub topm: usize,
    pub tp: Option<f64>,
    pub f1: Option<f64>,
    pub tk: Option<f64>,
    pub nte: Option<f64>,
    pub ndcg: Option<f64>,
    pub n: usize,
    pub dataset: String,
    pub k: Option<usize>,
    pub mt: Option<usize>,
    pub token_guard: Option<usize>,
    pub failures: usize,
}

const COLUMNS: [&str; 13] = [
    "method",
    "topm",
    "tp",
    "f1",
    "tk",
    "nte",
    "ndcg",
    "n",
    "dataset",
    "k",
    "mt",
    "token_guard",
    "failures",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SummaryRow {
    /// NTE against `base`; left empty when either side lacks F1 or the
    /// ratio is undefined.
    pub fn set_nte(&mut self, base: &SummaryRow) {
        self.nte = match (self.f1, self.tk, base.f1, base.tk) {
            (Some(f), Some(t), Some(bf), Some(bt)) => evaluate::nte(f, t, bf, bt).ok(),
            _ => None,
        };
    }

    fn fields(&self) -> [String; 13] {
        [
            self.method.clone(),
            self.topm.to_string(),
            opt(self.tp),
            opt(self.f1),
            opt(self.tk),
            opt(self.nte),
            opt(self.ndcg),
            self.n.to_string(),
            self.dataset.clone(),
            opt(self.k),
            opt(self.mt),
            opt(self.token_guard),
            self.failures.to_string(),
        ]
    }
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), PipelineError> {
    write_rows(path, &COLUMNS, rows, |r| r.fields().to_vec())
}

/// Reads summary or sweep CSVs. Only `method`, `topm`, `f1`, `tk` and `n`
/// are required; other known columns are picked up when present.
pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, PipelineError> {
    let fail = |message: String| PipelineError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| fail(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    for required in ["method", "topm", "f1", "tk", "n"] {
        if col(required).is_none() {
            return Err(fail(format!("missing column `{required}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let line = i + 2;
        let get = |name: &str| col(name).and_then(|c| rec.get(c)).map(str::trim).unwrap_or("");
        let float = |name: &str| -> Result<Option<f64>, PipelineError> {
            match get(name) {
                "" => Ok(None),
                s => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| fail(format!("line {line}: bad {name} `{s}`"))),
            }
        };
        let int = |name: &str| -> Result<Option<usize>, PipelineError> {
            match get(name) {
                "" => Ok(None),
                s => s
                    .parse::<usize>()
                    .map(Some)
                    .map_err(|_| fail(format!("line {line}: bad {name} `{s}`"))),
            }
        };
        rows.push(SummaryRow {
            method: get("method").to_string(),
            topm: int("topm")?.ok_or_else(|| fail(format!("line {line}: empty topm")))?,
            tp: float("tp")?,
            f1: float("f1")?,
            tk: float("tk")?,
            nte: float("nte")?,
            ndcg: float("ndcg")?,
            n: int("n")?.unwrap_or(0),
            dataset: get("dataset").to_string(),
            k: int("k")?,
            mt: int("mt")?,
            token_guard: int("token_guard")?,
            failures: int("failures")?.unwrap_or(0),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub dataset: String,
    pub method: String,
    pub topm: usize,
    pub tp: Option<f64>,
    pub k: Option<usize>,
    pub mt: Option<usize>,
    pub f1: Option<f64>,
    pub tk: Option<f64>,
    /// Some other row of the same dataset has F1 >= and TK <=, one strictly.
    pub dominated: bool,
}

fn dominates(a: &SummaryRow, b: &SummaryRow) -> bool {
    match (a.f1, a.tk, b.f1, b.tk) {
        (Some(af), Some(at), Some(bf), Some(bt)) => af >= bf && at <= bt && (af > bf || at < bt),
        _ => false,
    }
}

/// Flags Pareto-dominated rows (F1 up, TK down) within each dataset. Rows
/// without F1 or TK are never dominated and never dominate.
pub fn pareto_table(rows: &[SummaryRow]) -> Vec<ParetoRow> {
    rows.iter()
        .map(|r| ParetoRow {
            dataset: r.dataset.clone(),
            method: r.method.clone(),
            topm: r.topm,
            tp: r.tp,
            k: r.k,
            mt: r.mt,
            f1: r.f1,
            tk: r.tk,
            dominated: rows.iter().any(|o| o.dataset == r.dataset && dominates(o, r)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub dataset: String,
    pub topm: usize,
    /// Rows with both NDCG and F1.
    pub n: usize,
    pub spearman: Option<f64>,
    pub note: Option<String>,
}

/// Spearman correlation of NDCG against F1 across the rows of each
/// (dataset, topm) group.
pub fn correlation_table(rows: &[SummaryRow]) -> Vec<CorrelationRow> {
    let mut groups: BTreeMap<(String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        if let (Some(ndcg), Some(f1)) = (r.ndcg, r.f1) {
            let g = groups.entry((r.dataset.clone(), r.topm)).or_default();
            g.0.push(ndcg);
            g.1.push(f1);
        }
    }
    groups
        .into_iter()
        .map(|((dataset, topm), (ndcg, f1))| {
            let (spearman, note) = match evaluate::spearman(&ndcg, &f1) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            CorrelationRow {
                dataset,
                topm,
                n: ndcg.len(),
                spearman,
                note,
            }
        })
        .collect()
}

fn write_rows<T>(
    path: &Path,
    header: &[&str],
    rows: &[T],
    to_fields: impl Fn(&T) -> Vec<String>,
) -> Result<(), PipelineError> {
    let err = |e: csv::Error| PipelineError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(to_fields(r)).map_err(err)?;
    }
    w.flush().map_err(|source| PipelineError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub(super) fn write_pareto_csv(path: &Path, rows: &[ParetoRow]) -> Result<(), PipelineError> {
    write_rows(
        path,
        &["dataset", "method", "topm", "tp", "k", "mt", "f1", "tk", "dominated"],
        rows,
        |r| {
            vec![
                r.dataset.clone(),
                r.method.clone(),
                r.topm.to_string(),
                opt(r.tp),
                opt(r.k),
                opt(r.mt),
                opt(r.f1),
                opt(r.tk),
                r.dominated.to_string(),
            ]
        },
    )
}

pub(super) fn write_correlation_csv(path: &Path, rows: &[CorrelationRow]) -> Result<(), PipelineError> {
    write_rows(path, &["dataset", "topm", "n", "spearman", "note"], rows, |r| {
        vec![
            r.dataset.clone(),
            r.topm.to_string(),
            r.n.to_string(),
            opt(r.spearman),
            r.note.clone().unwrap_or_default(),
        ]
    })
}
