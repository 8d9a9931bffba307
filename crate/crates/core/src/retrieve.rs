//! First-stage BM25 retrieval.
//!
//! Analyzer: lowercase, split on runs of non-alphanumeric characters, no
//! stemming, optional stopword list. Scoring is Okapi BM25 with the
//! non-negative IDF `ln(1 + (N - df + 0.5) / (df + 0.5))`, summed over the
//! distinct query terms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{Candidate, CandidateSet, Passage};

const MAGIC: &[u8; 8] = b"IGPBM25\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate passage id `{0}`")]
    DuplicateId(String),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("index file is not a BM25 index (bad magic)")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("analyzer mismatch: index built with `{stored}`, expected `{expected}`")]
    AnalyzerMismatch { stored: String, expected: String },
    #[error("corpus does not match index: {0}")]
    CorpusMismatch(String),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    pub stopwords: BTreeSet<String>,
}

impl Analyzer {
    pub fn with_stopwords<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        Self {
            stopwords: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }

    /// Identifies the token stream an index was built with.
    pub fn fingerprint(&self) -> String {
        let stop = if self.stopwords.is_empty() {
            "none".to_string()
        } else {
            let mut h = Sha256::new();
            for w in &self.stopwords {
                h.update(w.as_bytes());
                h.update(b"\n");
            }
            h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
        };
        format!("analyzer/v1;lowercase;split=non-alnum;stem=none;stop={stop}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBm25Params")]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub top_n: usize,
}

#[derive(Deserialize)]
struct RawBm25Params {
    k1: f64,
    b: f64,
    top_n: usize,
}

impl TryFrom<RawBm25Params> for Bm25Params {
    type Error = RetrieveError;
    fn try_from(r: RawBm25Params) -> Result<Self, Self::Error> {
        Bm25Params::new(r.k1, r.b, r.top_n)
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64, top_n: usize) -> Result<Self, RetrieveError> {
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(RetrieveError::InvalidParams(format!("k1 must be >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(RetrieveError::InvalidParams(format!("b must be in [0, 1], got {b}")));
        }
        if top_n == 0 {
            return Err(RetrieveError::InvalidParams("top_n must be >= 1".into()));
        }
        Ok(Self { k1, b, top_n })
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 0.9,
            b: 0.4,
            top_n: 5,
        }
    }
}

/// Collection statistics used by the length normalization and IDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_doc_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub ordinal: u32,
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    analyzer: Analyzer,
    /// term -> (ordinal, term frequency), sorted by ordinal.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    ids: Vec<String>,
    ordinals: HashMap<String, u32>,
}

pub fn bm25_idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn bm25_term_weight(tf: f64, doc_len: f64, avg_doc_len: f64, k1: f64, b: f64) -> f64 {
    let norm = if avg_doc_len > 0.0 { doc_len / avg_doc_len } else { 0.0 };
    tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
}

impl InvertedIndex {
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a Passage>, analyzer: Analyzer) -> Result<Self, RetrieveError> {
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::new();
        let mut ids = Vec::new();
        let mut ordinals = HashMap::new();
        for p in corpus {
            let ord = ids.len() as u32;
            if ordinals.insert(p.id.clone(), ord).is_some() {
                return Err(RetrieveError::DuplicateId(p.id.clone()));
            }
            ids.push(p.id.clone());
            let tokens = analyzer.tokenize(&p.text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((ord, count));
            }
        }
        if ids.is_empty() {
            return Err(RetrieveError::EmptyCorpus);
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self {
            analyzer,
            postings,
            doc_lengths,
            avg_doc_length,
            ids,
            ordinals,
        })
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn ordinal(&self, id: &str) -> Option<u32> {
        self.ordinals.get(id).copied()
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            doc_count: self.doc_count(),
            avg_doc_length: self.avg_doc_length,
        }
    }

    pub fn search(&self, query: &str, params: &Bm25Params) -> Vec<Hit> {
        self.search_with_stats(query, params, self.stats())
    }

    /// Scores with caller-supplied collection statistics (document
    /// frequencies still come from the index).
    pub fn search_with_stats(&self, query: &str, params: &Bm25Params, stats: CorpusStats) -> Vec<Hit> {
        let terms: BTreeSet<String> = self.analyzer.tokenize(query).into_iter().collect();
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in &terms {
            let plist = self.postings(term);
            if plist.is_empty() {
                continue;
            }
            let idf = bm25_idf(stats.doc_count, plist.len());
            for &(ord, tf) in plist {
                let dl = self.doc_lengths[ord as usize] as f64;
                *scores.entry(ord).or_default() +=
                    idf * bm25_term_weight(tf as f64, dl, stats.avg_doc_length, params.k1, params.b);
            }
        }
        let mut hits: Vec<Hit> = scores
            .into_iter()
            .map(|(ordinal, score)| Hit {
                ordinal,
                id: self.ids[ordinal as usize].clone(),
                score,
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.id.as_bytes().cmp(b.id.as_bytes()))
        });
        hits.truncate(params.top_n);
        hits
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), RetrieveError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        write_str(w, &self.analyzer.fingerprint())?;
        w.write_u32::<LittleEndian>(self.analyzer.stopwords.len() as u32)?;
        for s in &self.analyzer.stopwords {
            write_str(w, s)?;
        }
        w.write_u32::<LittleEndian>(self.ids.len() as u32)?;
        for (id, len) in self.ids.iter().zip(&self.doc_lengths) {
            write_str(w, id)?;
            w.write_u32::<LittleEndian>(*len)?;
        }
        w.write_u32::<LittleEndian>(self.postings.len() as u32)?;
        for (term, plist) in &self.postings {
            write_str(w, term)?;
            w.write_u32::<LittleEndian>(plist.len() as u32)?;
            for &(ord, tf) in plist {
                w.write_u32::<LittleEndian>(ord)?;
                w.write_u32::<LittleEndian>(tf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, expected: &Analyzer) -> Result<Self, RetrieveError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(RetrieveError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(RetrieveError::UnsupportedVersion(version));
        }
        let stored = read_str(r)?;
        if stored != expected.fingerprint() {
            return Err(RetrieveError::AnalyzerMismatch {
                stored,
                expected: expected.fingerprint(),
            });
        }
        let n_stop = r.read_u32::<LittleEndian>()?;
        let stopwords = (0..n_stop).map(|_| read_str(r)).collect::<Result<BTreeSet<_>, _>>()?;
        let analyzer = Analyzer { stopwords };
        if analyzer != *expected {
            return Err(RetrieveError::Corrupt(
                "stopword list does not match fingerprint".into(),
            ));
        }
        let n_docs = r.read_u32::<LittleEndian>()? as usize;
        let mut ids = Vec::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        let mut ordinals = HashMap::with_capacity(n_docs);
        for ord in 0..n_docs {
            let id = read_str(r)?;
            if ordinals.insert(id.clone(), ord as u32).is_some() {
                return Err(RetrieveError::DuplicateId(id));
            }
            ids.push(id);
            doc_lengths.push(r.read_u32::<LittleEndian>()?);
        }
        if n_docs == 0 {
            return Err(RetrieveError::EmptyCorpus);
        }
        let n_terms = r.read_u32::<LittleEndian>()?;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = read_str(r)?;
            let n = r.read_u32::<LittleEndian>()?;
            let mut plist = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let ord = r.read_u32::<LittleEndian>()?;
                let tf = r.read_u32::<LittleEndian>()?;
                if ord as usize >= n_docs {
                    return Err(RetrieveError::Corrupt(format!("posting ordinal {ord} out of range")));
                }
                plist.push((ord, tf));
            }
            postings.insert(term, plist);
        }
        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self {
            analyzer,
            postings,
            doc_lengths,
            avg_doc_length,
            ids,
            ordinals,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrieveError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, expected: &Analyzer) -> Result<Self, RetrieveError> {
        Self::read_from(&mut BufReader::new(File::open(path)?), expected)
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    let total: u64 = lengths.iter().map(|&l| l as u64).sum();
    total as f64 / lengths.len().max(1) as f64
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String, RetrieveError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 24 {
        return Err(RetrieveError::Corrupt(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| RetrieveError::Corrupt(e.to_string()))
}

/// Query text in, scored candidates out. Dense retrievers plug in here.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query_id: &str, query_text: &str) -> CandidateSet;
}

/// BM25 over an index plus the passage texts it was built from.
#[derive(Debug, Clone)]
pub struct Bm25Retriever {
    index: InvertedIndex,
    passages: Vec<Passage>,
    params: Bm25Params,
}

impl Bm25Retriever {
    /// Aligns `corpus` to the index ordinals; the id sets must be identical.
    pub fn new(index: InvertedIndex, corpus: Vec<Passage>, params: Bm25Params) -> Result<Self, RetrieveError> {
        if corpus.len() != index.doc_count() {
            return Err(RetrieveError::CorpusMismatch(format!(
                "index has {} passages, corpus has {}",
                index.doc_count(),
                corpus.len()
            )));
        }
        let mut slots: Vec<Option<Passage>> = vec![None; corpus.len()];
        for p in corpus {
            let ord = index
                .ordinal(&p.id)
                .ok_or_else(|| RetrieveError::CorpusMismatch(format!("passage `{}` is not indexed", p.id)))?;
            if slots[ord as usize].replace(p).is_some() {
                return Err(RetrieveError::CorpusMismatch("duplicate passage in corpus".into()));
            }
        }
        let passages = slots.into_iter().map(|p| p.expect("every ordinal filled")).collect();
        Ok(Self {
            index,
            passages,
            params,
        })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    pub fn passage(&self, id: &str) -> Option<&Passage> {
        self.index.ordinal(id).map(|o| &self.passages[o as usize])
    }

    pub fn search(&self, query_id: &str, query_text: &str) -> CandidateSet {
        let candidates = self
            .index
            .search(query_text, &self.params)
            .into_iter()
            .map(|h| Candidate {
                passage: self.passages[h.ordinal as usize].clone(),
                retriever_score: h.score,
            })
            .collect();
        CandidateSet {
            query_id: query_id.to_string(),
            candidates,
        }
    }
}

impl Retriever for Bm25Retriever {
    fn retrieve(&self, query_id: &str, query_text: &str) -> CandidateSet {
        self.search(query_id, query_text)
    }
}
