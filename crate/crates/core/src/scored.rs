//! Ranked (doc id, score) lists shared by retrieval, filtering and re-ranking.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Ordered list of scored documents. Producers keep scores non-increasing
/// and ids distinct; [`ScoredList::is_sorted`] checks the first property.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoredList {
    entries: Vec<ScoredDoc>,
}

impl ScoredList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<ScoredDoc>) -> Self {
        Self { entries }
    }

    /// Builds a list whose scores are derived from positions: the head gets
    /// `len`, the tail gets 1. Used once a list has been re-ordered by
    /// something other than a numeric score.
    pub fn from_ranked_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        Self {
            entries: ids
                .into_iter()
                .enumerate()
                .map(|(i, id)| ScoredDoc::new(id, (n - i) as f64))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[ScoredDoc] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ScoredDoc> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ScoredDoc> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn push(&mut self, doc: ScoredDoc) {
        self.entries.push(doc);
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }

    /// True when scores are non-increasing.
    pub fn is_sorted(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].score >= w[1].score)
    }
}

impl<'a> IntoIterator for &'a ScoredList {
    type Item = &'a ScoredDoc;
    type IntoIter = std::slice::Iter<'a, ScoredDoc>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

impl FromIterator<ScoredDoc> for ScoredList {
    fn from_iter<T: IntoIterator<Item = ScoredDoc>>(iter: T) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}
