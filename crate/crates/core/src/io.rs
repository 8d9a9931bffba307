//! Corpus, dataset and qrels file formats.
//!
//! * corpus: JSON Lines, `{"id": "...", "contents": "..."}`
//! * dataset: JSON Lines, `{"id": "...", "question": "...", "golden_answers": ["..."]}`
//! * qrels: TSV, `query-id<TAB>passage-id<TAB>relevance`

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::evaluate::QrelSet;
use crate::types::{Passage, Query, TypeError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: duplicate id `{id}`")]
    DuplicateId { path: PathBuf, id: String },
    #[error("read failed: {0}")]
    Read(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    contents: String,
}

#[derive(Deserialize)]
struct DatasetLine {
    id: String,
    question: String,
    #[serde(default)]
    golden_answers: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::Open {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

fn type_err(path: &Path, line: usize, e: TypeError) -> IoError {
    parse_err(path, line, e)
}

/// Reads JSON Lines, skipping blank lines; `line` numbers are 1-based.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, IoError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Passage>, IoError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<CorpusLine>(path)? {
        let p = Passage::new(rec.id, rec.contents).map_err(|e| type_err(path, line, e))?;
        if !seen.insert(p.id.clone()) {
            return Err(IoError::DuplicateId {
                path: path.to_path_buf(),
                id: p.id,
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Query>, IoError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_jsonl::<DatasetLine>(path)? {
        let q = Query::new(rec.id, rec.question, rec.golden_answers).map_err(|e| type_err(path, line, e))?;
        if !seen.insert(q.id.clone()) {
            return Err(IoError::DuplicateId {
                path: path.to_path_buf(),
                id: q.id,
            });
        }
        out.push(q);
    }
    Ok(out)
}

/// Parses a qrels TSV. A header line whose third column is not an integer is
/// skipped only when it is the first line.
pub fn read_qrels(path: &Path) -> Result<QrelSet, IoError> {
    let mut map: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected 3 tab-separated columns, got {}", cols.len()),
            ));
        }
        let rel = match cols[2].trim().parse::<i64>() {
            Ok(r) if r >= 0 => r as u32,
            Ok(r) => return Err(parse_err(path, i + 1, format!("negative relevance {r}"))),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_err(path, i + 1, e)),
        };
        map.entry(cols[0].trim().to_string())
            .or_default()
            .insert(cols[1].trim().to_string(), rel);
    }
    Ok(QrelSet::from_map(map))
}
