//! Embedding and exact k-nearest-neighbor search over TMK documents.

mod embed;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{
    fnv1a64, similarity, tokenize, Embedder, EmbeddingVector, HashingEmbedder, RemoteEmbedder,
    DEFAULT_DIMENSION, NORM_TOLERANCE,
};

use crate::tmk::{Document, ElementKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("text to embed is empty")]
    EmptyText,
    #[error("embedding is the zero vector")]
    ZeroVector,
    #[error("embedding norm {0} is not 1")]
    NotNormalized(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate document key {0}")]
    DuplicateKey(DocumentKey),
    #[error("cannot build an index over zero documents")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("remote embedder failed: {0}")]
    Remote(String),
    #[error("index dump line {line}: {message}")]
    DumpFormat { line: usize, message: String },
}

impl RetrievalError {
    pub fn code(&self) -> &'static str {
        match self {
            RetrievalError::EmptyText => "EMPTY_TEXT",
            RetrievalError::ZeroVector => "ZERO_VECTOR",
            RetrievalError::NotNormalized(_) => "NOT_NORMALIZED",
            RetrievalError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            RetrievalError::DuplicateKey(_) => "DUPLICATE_KEY",
            RetrievalError::EmptyCorpus => "EMPTY_CORPUS",
            RetrievalError::InvalidK => "INVALID_K",
            RetrievalError::Remote(_) => "EMBEDDER_UNAVAILABLE",
            RetrievalError::DumpFormat { .. } => "MALFORMED_DUMP",
        }
    }
}

/// Document key. Ordered by kind, then element id; this is the tie-break
/// order for equal scores.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocumentKey {
    pub kind: ElementKind,
    pub element_id: String,
}

impl DocumentKey {
    pub fn new(kind: ElementKind, element_id: impl Into<String>) -> Self {
        Self { kind, element_id: element_id.into() }
    }
}

impl From<&Document> for DocumentKey {
    fn from(d: &Document) -> Self {
        Self::new(d.kind, d.element_id.clone())
    }
}

impl fmt::Display for DocumentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.element_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub element_id: String,
    pub kind: ElementKind,
    pub score: f64,
}

impl RetrievalHit {
    pub fn key(&self) -> DocumentKey {
        DocumentKey::new(self.kind, self.element_id.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: DocumentKey,
    pub vector: EmbeddingVector,
}

/// Immutable in-memory index searched exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dimension: usize,
    embedder_id: String,
    entries: Vec<IndexEntry>,
}

/// Text embedded for a document.
pub fn document_text(doc: &Document) -> String {
    format!("{}\n{}", doc.title, doc.body)
}

pub fn build_index(documents: &[Document], embedder: &dyn Embedder) -> Result<VectorIndex, RetrievalError> {
    if documents.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(documents.len());
    for doc in documents {
        let key = DocumentKey::from(doc);
        if !seen.insert(key.clone()) {
            return Err(RetrievalError::DuplicateKey(key));
        }
        let vector = embedder.embed(&document_text(doc))?;
        if vector.dimension() != embedder.dimension() {
            return Err(RetrievalError::DimensionMismatch {
                expected: embedder.dimension(),
                actual: vector.dimension(),
            });
        }
        entries.push(IndexEntry { key, vector });
    }
    Ok(VectorIndex { dimension: embedder.dimension(), embedder_id: embedder.id(), entries })
}

/// Heap candidate whose `Ord` puts the *worst* hit on top, so a max-heap of
/// size k keeps the k best.
struct Candidate<'a> {
    score: f64,
    key: &'a DocumentKey,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.key.cmp(other.key))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl VectorIndex {
    /// Index over precomputed vectors.
    pub fn from_entries(
        dimension: usize,
        embedder_id: impl Into<String>,
        entries: Vec<IndexEntry>,
    ) -> Result<Self, RetrievalError> {
        if entries.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if e.vector.dimension() != dimension {
                return Err(RetrievalError::DimensionMismatch { expected: dimension, actual: e.vector.dimension() });
            }
            if !seen.insert(&e.key) {
                return Err(RetrievalError::DuplicateKey(e.key.clone()));
            }
        }
        Ok(Self { dimension, embedder_id: embedder_id.into(), entries })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top `min(k, len)` hits by score, descending; equal scores ordered by
    /// ascending document key.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, actual: query.dimension() });
        }
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for entry in &self.entries {
            let candidate = Candidate { score: similarity(query, &entry.vector)?, key: &entry.key };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(mut worst) = heap.peek_mut() {
                if candidate < *worst {
                    *worst = candidate;
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| RetrievalHit { element_id: c.key.element_id.clone(), kind: c.key.kind, score: c.score })
            .collect())
    }

    /// Versioned plain-text dump for debugging.
    pub fn dump(&self) -> String {
        let mut out = format!("asktmk-index v1\ndimension {}\nembedder {}\n", self.dimension, self.embedder_id);
        for e in &self.entries {
            out.push_str(&format!("entry {} {}", e.key.kind, e.key.element_id));
            for v in e.vector.values() {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn load_dump(text: &str) -> Result<Self, RetrievalError> {
        let bad = |line: usize, message: &str| RetrievalError::DumpFormat { line, message: message.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "asktmk-index v1")) => {}
            _ => return Err(bad(1, "expected header `asktmk-index v1`")),
        }
        let (n, line) = lines.next().ok_or_else(|| bad(2, "missing dimension"))?;
        let dimension: usize = line
            .strip_prefix("dimension ")
            .and_then(|d| d.parse().ok())
            .filter(|d| *d > 0)
            .ok_or_else(|| bad(n, "expected `dimension <positive integer>`"))?;
        let (n, line) = lines.next().ok_or_else(|| bad(3, "missing embedder"))?;
        let embedder_id = line.strip_prefix("embedder ").ok_or_else(|| bad(n, "expected `embedder <id>`"))?;

        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            if parts.next() != Some("entry") {
                return Err(bad(n, "expected `entry`"));
            }
            let kind: ElementKind = parts
                .next()
                .ok_or_else(|| bad(n, "missing kind"))?
                .parse()
                .map_err(|e: String| bad(n, &e))?;
            let id = parts.next().ok_or_else(|| bad(n, "missing element id"))?;
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(n, &e.to_string()))?;
            if values.len() != dimension {
                return Err(RetrievalError::DimensionMismatch { expected: dimension, actual: values.len() });
            }
            let key = DocumentKey::new(kind, id);
            if !seen.insert(key.clone()) {
                return Err(RetrievalError::DuplicateKey(key));
            }
            entries.push(IndexEntry { key, vector: EmbeddingVector::new(values)? });
        }
        Ok(Self { dimension, embedder_id: embedder_id.to_string(), entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::vera_model;
    use crate::tmk::render_documents;

    fn fixture_index() -> (Vec<Document>, VectorIndex) {
        let docs = render_documents(&vera_model(), &ElementKind::ALL).unwrap();
        let index = build_index(&docs, &HashingEmbedder::default()).unwrap();
        (docs, index)
    }

    #[test]
    fn fixture_index_has_fifteen_entries() {
        let (_, index) = fixture_index();
        assert_eq!(index.len(), 15);
        assert_eq!(index.embedder_id(), "hashing-fnv1a64/256");
    }

    #[test]
    fn duplicate_and_empty_corpus() {
        let (docs, _) = fixture_index();
        let dup = vec![docs[0].clone(), docs[0].clone()];
        assert!(matches!(
            build_index(&dup, &HashingEmbedder::default()),
            Err(RetrievalError::DuplicateKey(_))
        ));
        assert_eq!(build_index(&[], &HashingEmbedder::default()), Err(RetrievalError::EmptyCorpus));
    }

    #[test]
    fn self_match_scores_one() {
        let (docs, index) = fixture_index();
        let e = HashingEmbedder::default();
        for doc in &docs {
            let hits = index.search(&e.embed(&document_text(doc)).unwrap(), 1).unwrap();
            assert_eq!(hits[0].element_id, doc.element_id);
            assert!((hits[0].score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k4_returns_four_sorted() {
        let (_, index) = fixture_index();
        let q = HashingEmbedder::default().embed("how does the simulation run").unwrap();
        let hits = index.search(&q, 4).unwrap();
        assert_eq!(hits.len(), 4);
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(hits.iter().all(|h| (0.0..=1.0).contains(&h.score)));
    }

    #[test]
    fn k_larger_than_corpus_and_zero() {
        let (_, index) = fixture_index();
        let q = HashingEmbedder::default().embed("ecology").unwrap();
        assert_eq!(index.search(&q, 100).unwrap().len(), 15);
        assert_eq!(index.search(&q, 0), Err(RetrievalError::InvalidK));
        let other = HashingEmbedder::new(8).embed("ecology").unwrap();
        assert!(matches!(index.search(&other, 1), Err(RetrievalError::DimensionMismatch { .. })));
    }

    #[test]
    fn ties_break_by_key() {
        let docs: Vec<Document> = ["b", "a", "c"]
            .iter()
            .map(|id| Document {
                element_id: id.to_string(),
                kind: ElementKind::Knowledge,
                title: "same".into(),
                body: "same text".into(),
            })
            .collect();
        let index = build_index(&docs, &HashingEmbedder::default()).unwrap();
        let q = HashingEmbedder::default().embed("same same text").unwrap();
        let ids: Vec<_> = index.search(&q, 3).unwrap().into_iter().map(|h| h.element_id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn dump_round_trips() {
        let (_, index) = fixture_index();
        let text = index.dump();
        assert!(text.starts_with("asktmk-index v1\ndimension 256\nembedder hashing-fnv1a64/256\n"));
        assert_eq!(VectorIndex::load_dump(&text).unwrap(), index);
        assert!(matches!(VectorIndex::load_dump("nope"), Err(RetrievalError::DumpFormat { .. })));
    }
}
