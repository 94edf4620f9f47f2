//! Ordinal (1 to 5) relevance judgments from a chat model, threshold
//! filtering, and the relevance ordering used to merge result lists.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DocumentStore;
use crate::gateway::{CallRecord, ChatMessage, ChatRequest, Gateway, GatewayError, Role, Stage};
use crate::prompts;
use crate::scored::{ScoredDoc, ScoredList};

pub const MIN_GRADE: u8 = 1;
pub const MAX_GRADE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RelevanceScore(u8);

impl RelevanceScore {
    pub fn new(value: u8) -> Option<Self> {
        (MIN_GRADE..=MAX_GRADE).contains(&value).then_some(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for RelevanceScore {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value).ok_or_else(|| format!("relevance score {value} outside 1..=5"))
    }
}

impl From<RelevanceScore> for u8 {
    fn from(s: RelevanceScore) -> u8 {
        s.0
    }
}

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("relevance score {value} outside 1..=5 in reply {raw:?}")]
    OutOfRange { value: i64, raw: String },
    #[error("no relevance score in reply {raw:?}")]
    Unparseable { raw: String },
    #[error("document `{0}` is not in the store")]
    UnknownDocument(String),
}

impl RelevanceError {
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, RelevanceError::Gateway(e) if e.is_exhaustion())
    }
}

/// Reads `<Score>n</Score>`; failing that, accepts a reply containing
/// exactly one standalone digit between 1 and 5.
pub fn parse_score(content: &str) -> Result<RelevanceScore, RelevanceError> {
    static TAG: OnceLock<Regex> = OnceLock::new();
    static LONE: OnceLock<Regex> = OnceLock::new();
    let tag = TAG.get_or_init(|| Regex::new(r"<Score>\s*(-?\d+)\s*</Score>").unwrap());
    if let Some(caps) = tag.captures(content) {
        let value: i64 = caps[1].parse().unwrap_or(i64::MAX);
        return u8::try_from(value)
            .ok()
            .and_then(RelevanceScore::new)
            .ok_or_else(|| RelevanceError::OutOfRange {
                value,
                raw: content.to_owned(),
            });
    }
    let lone = LONE.get_or_init(|| Regex::new(r"\b[1-5]\b").unwrap());
    let mut found = lone.find_iter(content);
    match (found.next(), found.next()) {
        (Some(m), None) => Ok(RelevanceScore(m.as_str().parse().unwrap())),
        _ => Err(RelevanceError::Unparseable {
            raw: content.to_owned(),
        }),
    }
}

pub fn relevance_request(model: &str, query: &str, document: &str) -> ChatRequest {
    ChatRequest::new(
        model,
        vec![
            ChatMessage::new(Role::System, prompts::assistant_system()),
            ChatMessage::new(Role::User, prompts::relevance_user(query, document)),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedDoc {
    pub doc_id: String,
    pub retrieval_score: f64,
    pub grade: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedDoc {
    pub doc_id: String,
    pub retrieval_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Partition of a retrieved list: `kept` in retrieval order with grades
/// above the threshold, everything else in `dropped`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilteredList {
    pub kept: Vec<JudgedDoc>,
    pub dropped: Vec<DroppedDoc>,
}

/// Grade descending, then retrieval score descending, then doc id.
pub fn relevance_order(a: &JudgedDoc, b: &JudgedDoc) -> Ordering {
    b.grade
        .cmp(&a.grade)
        .then_with(|| b.retrieval_score.total_cmp(&a.retrieval_score))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

pub fn sort_by_relevance(docs: &mut [JudgedDoc]) {
    docs.sort_by(relevance_order);
}

/// One scoring outcome: the grade (if any) and the call that produced it.
/// Memoised scores carry no call.
pub type Scored = Result<(RelevanceScore, Option<CallRecord>), RelevanceError>;

/// Scores documents against queries, memoising by (query text, doc id)
/// for the lifetime of the model.
pub struct RelevanceModel<'a> {
    gateway: &'a Gateway,
    store: &'a DocumentStore,
    model: String,
    parallelism: usize,
    memo: Mutex<HashMap<(String, String), RelevanceScore>>,
}

impl<'a> RelevanceModel<'a> {
    pub fn new(gateway: &'a Gateway, store: &'a DocumentStore, model: impl Into<String>) -> Self {
        Self {
            gateway,
            store,
            model: model.into(),
            parallelism: 1,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Maximum concurrent scoring calls for a single list.
    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn score(&self, query: &str, doc_id: &str) -> Scored {
        let key = (query.to_owned(), doc_id.to_owned());
        if let Some(&hit) = self.memo.lock().unwrap().get(&key) {
            return Ok((hit, None));
        }
        let doc = self
            .store
            .get(doc_id)
            .ok_or_else(|| RelevanceError::UnknownDocument(doc_id.to_owned()))?;
        let request = relevance_request(&self.model, query, &doc.full_text());
        let response = self.gateway.complete(&request)?;
        let record = CallRecord::new(Stage::Relevance, &self.model, &response);
        let score = parse_score(&response.content)?;
        self.memo.lock().unwrap().insert(key, score);
        Ok((score, Some(record)))
    }

    /// Scores every id, preserving input order in the result.
    pub fn score_all(&self, query: &str, doc_ids: &[&str]) -> Vec<Scored> {
        if self.parallelism <= 1 || doc_ids.len() <= 1 {
            return doc_ids.iter().map(|id| self.score(query, id)).collect();
        }
        let chunk = doc_ids.len().div_ceil(self.parallelism);
        std::thread::scope(|scope| {
            let handles: Vec<_> = doc_ids
                .chunks(chunk)
                .map(|ids| scope.spawn(move || ids.iter().map(|id| self.score(query, id)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("scoring thread panicked"))
                .collect()
        })
    }

    /// Keeps documents graded strictly above `tau`. Scoring failures drop
    /// the document, except backend exhaustion, which is returned.
    pub fn filter(
        &self,
        query: &str,
        retrieved: &ScoredList,
        tau: u8,
    ) -> Result<(FilteredList, Vec<CallRecord>), RelevanceError> {
        let ids: Vec<&str> = retrieved.ids().collect();
        let results = self.score_all(query, &ids);
        let mut out = FilteredList::default();
        let mut calls = Vec::new();
        for (entry, result) in retrieved.iter().zip(results) {
            match result {
                Ok((score, call)) => {
                    calls.extend(call);
                    if score.value() > tau {
                        out.kept.push(JudgedDoc {
                            doc_id: entry.doc_id.clone(),
                            retrieval_score: entry.score,
                            grade: score.value(),
                        });
                    } else {
                        out.dropped.push(DroppedDoc {
                            doc_id: entry.doc_id.clone(),
                            retrieval_score: entry.score,
                            grade: Some(score.value()),
                            error: None,
                        });
                    }
                }
                Err(e) if e.is_exhaustion() => return Err(e),
                Err(e) => out.dropped.push(DroppedDoc {
                    doc_id: entry.doc_id.clone(),
                    retrieval_score: entry.score,
                    grade: None,
                    error: Some(e.to_string()),
                }),
            }
        }
        Ok((out, calls))
    }

    /// Re-grades `docs` against `query` and sorts them by relevance. The
    /// entry scores are taken as retrieval scores for tie-breaking. Docs that
    /// fail to score are returned separately with their error.
    pub fn rank_by_relevance(&self, query: &str, docs: &[JudgedDoc]) -> Result<RankedByRelevance, RelevanceError> {
        let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        let mut ranked = RankedByRelevance::default();
        for (doc, result) in docs.iter().zip(self.score_all(query, &ids)) {
            match result {
                Ok((score, call)) => {
                    ranked.calls.extend(call);
                    ranked.docs.push(JudgedDoc {
                        grade: score.value(),
                        ..doc.clone()
                    });
                }
                Err(e) if e.is_exhaustion() => return Err(e),
                Err(e) => ranked.failed.push((doc.doc_id.clone(), e.to_string())),
            }
        }
        sort_by_relevance(&mut ranked.docs);
        Ok(ranked)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RankedByRelevance {
    pub docs: Vec<JudgedDoc>,
    pub failed: Vec<(String, String)>,
    pub calls: Vec<CallRecord>,
}

impl RankedByRelevance {
    /// The ordering as a list scored by grade.
    pub fn to_scored_list(&self) -> ScoredList {
        self.docs
            .iter()
            .map(|d| ScoredDoc::new(d.doc_id.clone(), f64::from(d.grade)))
            .collect()
    }
}
