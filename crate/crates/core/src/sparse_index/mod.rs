//! BM25 retrieval over an in-memory inverted index.
//!
//! Scoring follows the Lucene variant of BM25 (no `k1 + 1` numerator):
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q ∩ d} idf(t) · tf / (tf + k1 · (1 − b + b · |d| / avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are treated as a set. Results are ordered by descending
//! score with ties broken by ascending document id.

mod analyzer;
mod persist;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analyzer::{is_stopword, tokenize, Analyzer, STOPWORDS};
pub use persist::{FORMAT_VERSION, MAGIC};

use crate::corpus::DocumentStore;
use crate::scored::{ScoredDoc, ScoredList};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over an empty document store")]
    EmptyStore,
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index file {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    pub k1: f64,
    pub b: f64,
    pub stemming: bool,
    pub stopwords: bool,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            k1: 0.9,
            b: 0.4,
            stemming: true,
            stopwords: true,
        }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(IndexError::InvalidParams(format!("k1 = {} must be >= 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::InvalidParams(format!("b = {} must lie in [0, 1]", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Anything that can answer top-k text queries.
pub trait Retriever: Send + Sync {
    fn search(&self, query: &str, k: usize) -> Result<ScoredList, IndexError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: IndexParams,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl InvertedIndex {
    /// Indexes `title + " " + text` of every document in store order.
    pub fn build(store: &DocumentStore, params: IndexParams) -> Result<Self, IndexError> {
        params.validate()?;
        if store.is_empty() {
            return Err(IndexError::EmptyStore);
        }
        let analyzer = Analyzer::new(&params);
        let mut doc_ids = Vec::with_capacity(store.len());
        let mut doc_lengths = Vec::with_capacity(store.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();

        for (ordinal, doc) in store.iter().enumerate() {
            let ordinal = ordinal as u32;
            let tokens = analyzer.tokenize(&doc.full_text());
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for token in &tokens {
                *counts.entry(token.clone()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: ordinal, tf });
            }
            doc_ids.push(doc.id.clone());
            doc_lengths.push(tokens.len() as u32);
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;

        Ok(Self {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub(crate) fn from_parts(
        params: IndexParams,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Result<Self, IndexError> {
        if doc_ids.is_empty() || doc_ids.len() != doc_lengths.len() {
            return Err(IndexError::Corrupt("document table is empty or inconsistent".into()));
        }
        let n = doc_ids.len() as u32;
        for (term, list) in &postings {
            let ordered = list.windows(2).all(|w| w[0].doc < w[1].doc);
            if !ordered || list.iter().any(|p| p.doc >= n || p.tf == 0) {
                return Err(IndexError::Corrupt(format!("bad postings for term `{term}`")));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        Ok(Self {
            params,
            avg_doc_length: total as f64 / doc_lengths.len() as f64,
            doc_ids,
            doc_lengths,
            postings,
        })
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, ordinal: u32) -> Option<&str> {
        self.doc_ids.get(ordinal as usize).map(String::as_str)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.document_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Unique analyzed query terms, first occurrence order.
    pub fn query_terms(&self, query: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        Analyzer::new(&self.params)
            .tokenize(query)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    pub fn search(&self, query: &str, k: usize) -> Result<ScoredList, IndexError> {
        if k < 1 {
            return Err(IndexError::InvalidK);
        }
        let IndexParams { k1, b, .. } = self.params;
        let mut acc = vec![0.0f64; self.doc_count()];
        let mut hit = vec![false; self.doc_count()];
        let mut touched: Vec<u32> = Vec::new();

        for term in self.query_terms(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for posting in list {
                let slot = &mut acc[posting.doc as usize];
                if !std::mem::replace(&mut hit[posting.doc as usize], true) {
                    touched.push(posting.doc);
                }
                let tf = f64::from(posting.tf);
                let len = f64::from(self.doc_lengths[posting.doc as usize]);
                let norm = k1 * (1.0 - b + b * len / self.avg_doc_length);
                *slot += idf * tf / (tf + norm);
            }
        }

        let mut hits: Vec<(u32, f64)> = touched.into_iter().map(|d| (d, acc[d as usize])).collect();
        hits.sort_unstable_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        });
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(d, s)| ScoredDoc::new(self.doc_ids[d as usize].clone(), s))
            .collect())
    }
}

impl Retriever for InvertedIndex {
    fn search(&self, query: &str, k: usize) -> Result<ScoredList, IndexError> {
        InvertedIndex::search(self, query, k)
    }
}

pub fn build_index(store: &DocumentStore, params: IndexParams) -> Result<InvertedIndex, IndexError> {
    InvertedIndex::build(store, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn plain() -> IndexParams {
        IndexParams {
            stemming: false,
            stopwords: false,
            ..IndexParams::default()
        }
    }

    fn store(texts: &[&str]) -> DocumentStore {
        DocumentStore::from_documents(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document::new(format!("d{}", i + 1), None, *t)),
        )
        .unwrap()
    }

    #[test]
    fn single_doc_postings() {
        let idx = InvertedIndex::build(&store(&["a b a"]), plain()).unwrap();
        assert_eq!(idx.postings("a").unwrap(), &[Posting { doc: 0, tf: 2 }]);
        assert_eq!(idx.postings("b").unwrap(), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.avg_doc_length(), 3.0);
    }

    #[test]
    fn df_and_avgdl() {
        let idx = InvertedIndex::build(&store(&["x", "x x"]), plain()).unwrap();
        assert_eq!(idx.document_frequency("x"), 2);
        assert_eq!(idx.avg_doc_length(), 1.5);
    }

    #[test]
    fn empty_document_has_no_postings() {
        let idx = InvertedIndex::build(&store(&["", "word"]), plain()).unwrap();
        assert_eq!(idx.doc_lengths(), &[0, 1]);
        assert!(idx.terms().all(|(_, p)| p.iter().all(|p| p.doc != 0)));
    }

    #[test]
    fn empty_store_is_rejected() {
        assert!(matches!(
            InvertedIndex::build(&DocumentStore::new(), plain()),
            Err(IndexError::EmptyStore)
        ));
    }

    #[test]
    fn title_is_indexed() {
        let s = DocumentStore::from_documents([Document::new("d1", Some("Soda"), "diet")]).unwrap();
        let idx = InvertedIndex::build(&s, plain()).unwrap();
        assert_eq!(idx.search("soda", 1).unwrap().len(), 1);
    }

    #[test]
    fn no_matching_terms() {
        let idx = InvertedIndex::build(&store(&["apple"]), plain()).unwrap();
        assert!(idx.search("zebra", 5).unwrap().is_empty());
        assert!(matches!(idx.search("apple", 0), Err(IndexError::InvalidK)));
    }

    #[test]
    fn worked_two_doc_example() {
        let idx = InvertedIndex::build(&store(&["apple", "apple apple banana"]), plain()).unwrap();
        let hits = idx.search("banana", 2).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits.entries()[0].doc_id, "d2");
        let expected = (1.0f64 + 1.5 / 1.5).ln() * (1.0 / (1.0 + 0.9 * (1.0 - 0.4 + 0.4 * 3.0 / 2.0)));
        assert!((hits.entries()[0].score - expected).abs() < 1e-12);
        assert!((hits.entries()[0].score - 0.3333).abs() < 1e-4);

        // tf 2 in the longer doc outweighs its length penalty:
        // 2/(2+0.9*1.2) = 0.649 against 1/(1+0.9*0.8) = 0.581
        let hits = idx.search("apple", 2).unwrap();
        assert_eq!(hits.ids().collect::<Vec<_>>(), vec!["d2", "d1"]);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let s = DocumentStore::from_documents([Document::new("b", None, "same"), Document::new("a", None, "same")])
            .unwrap();
        let idx = InvertedIndex::build(&s, plain()).unwrap();
        assert_eq!(idx.search("same", 2).unwrap().ids().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn params_validation() {
        let bad = IndexParams { b: 1.5, ..plain() };
        assert!(bad.validate().is_err());
        let bad = IndexParams { k1: -1.0, ..plain() };
        assert!(bad.validate().is_err());
    }
}
