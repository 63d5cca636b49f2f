//! Minimal text retrieval over segment captions: an inverted index with
//! Okapi BM25 scoring (`k1 = 1.2`, `b = 0.75`).
//!
//! Caption and on-screen text are indexed as a single field. Tokens are
//! lowercased runs of Unicode alphanumerics. Repeated query terms count once.
//! IDF is `ln(1 + (N - n + 0.5) / (n + 0.5))`, which stays positive, so every
//! matching document scores above zero.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::VideoSegment;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("query has no terms")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("document {index} is invalid: {message}")]
    InvalidDoc { index: usize, message: String },
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SegmentDoc {
    pub video_id: String,
    pub segment: VideoSegment,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_screen_text: Option<String>,
}

impl SegmentDoc {
    /// Stable identifier derived from the segment itself.
    pub fn segment_id(&self) -> String {
        format!(
            "{}_{}_{}",
            self.segment.video_id, self.segment.start_ms, self.segment.end_ms
        )
    }

    fn text(&self) -> String {
        match &self.on_screen_text {
            Some(t) => format!("{} {}", self.caption, t),
            None => self.caption.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RankedHit {
    pub segment_id: String,
    pub doc: SegmentDoc,
    pub score: f64,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct Posting {
    doc: usize,
    tf: u32,
}

/// Immutable after construction; safe to query from many threads.
#[derive(Debug, Clone)]
pub struct Index {
    docs: Vec<SegmentDoc>,
    lengths: Vec<u32>,
    avg_len: f64,
    postings: HashMap<String, Vec<Posting>>,
    by_id: HashMap<String, usize>,
}

impl Index {
    pub fn build(docs: Vec<SegmentDoc>) -> Result<Self, RetrievalError> {
        if docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut lengths = Vec::with_capacity(docs.len());
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if doc.caption.trim().is_empty() {
                return Err(RetrievalError::InvalidDoc {
                    index: i,
                    message: "caption is empty".into(),
                });
            }
            if !doc.segment.is_valid() || doc.segment.video_id != doc.video_id {
                return Err(RetrievalError::InvalidDoc {
                    index: i,
                    message: "segment is invalid or belongs to another video".into(),
                });
            }
            let tokens = tokenize(&doc.text());
            if tokens.is_empty() {
                return Err(RetrievalError::InvalidDoc {
                    index: i,
                    message: "caption has no indexable terms".into(),
                });
            }
            lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push(Posting { doc: i, tf: n });
            }
            by_id.insert(doc.segment_id(), i);
        }
        let total: u64 = lengths.iter().map(|l| u64::from(*l)).sum();
        let avg_len = total as f64 / docs.len() as f64;
        Ok(Self {
            docs,
            lengths,
            avg_len,
            postings,
            by_id,
        })
    }

    /// Reads a JSON-Lines file of [`SegmentDoc`]s; blank lines are skipped.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, RetrievalError> {
        let mut docs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| RetrievalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            docs.push(serde_json::from_str(&line).map_err(|e| RetrievalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Self::build(docs)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn posting_len(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn segment(&self, segment_id: &str) -> Option<&SegmentDoc> {
        self.by_id.get(segment_id).map(|i| &self.docs[*i])
    }

    pub fn docs(&self) -> &[SegmentDoc] {
        &self.docs
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` documents by BM25; only documents matching at least one term.
    pub fn query(&self, text: &str, k: usize) -> Result<Vec<RankedHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let terms: BTreeSet<String> = tokenize(text).into_iter().collect();
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for p in list {
                let tf = f64::from(p.tf);
                let norm = K1 * (1.0 - B + B * f64::from(self.lengths[p.doc]) / self.avg_len);
                *scores.entry(p.doc).or_default() += idf * tf * (K1 + 1.0) / (tf + norm);
            }
        }
        let mut hits: Vec<(usize, f64)> = scores.into_iter().collect();
        hits.sort_by(|a, b| self.rank_order(a, b));
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(i, score)| RankedHit {
                segment_id: self.docs[i].segment_id(),
                doc: self.docs[i].clone(),
                score,
            })
            .collect())
    }

    fn rank_order(&self, a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        let (da, db) = (&self.docs[a.0], &self.docs[b.0]);
        b.1.total_cmp(&a.1)
            .then_with(|| da.video_id.cmp(&db.video_id))
            .then_with(|| da.segment.start_ms.cmp(&db.segment.start_ms))
            .then_with(|| da.segment.end_ms.cmp(&db.segment.end_ms))
    }
}

/// A hit becomes a point submission at its segment midpoint.
pub fn to_submission(hit: &RankedHit) -> (String, i64) {
    (hit.doc.video_id.clone(), hit.doc.segment.midpoint_ms())
}
