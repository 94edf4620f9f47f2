//! Deterministic offline backend driven by declarative rules.
//!
//! The mock recognises which template a request was rendered from and
//! answers it from the matching rule. Anything it cannot recognise, or has
//! no rule for, is an [`BackendError::Unhandled`] error.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendReply, ChatBackend, ChatRequest};
use crate::prompts::{self, PromptKind, RoundView};
use crate::sparse_index::{tokenize, IndexParams};

fn default_grade() -> u8 {
    1
}

fn default_max_terms() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeEntry {
    /// Matched as a substring of the document text.
    pub needle: String,
    pub grade: u8,
    /// Restricts the entry to queries containing this text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

/// Hidden grade of a (query, document) pair, used for both relevance
/// scores and window permutations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GradeRule {
    /// 1 with no shared analyzed terms, up to 5 when every query term occurs.
    Overlap,
    /// First entry whose needle occurs in the document wins.
    Keyed {
        entries: Vec<GradeEntry>,
        #[serde(default = "default_grade")]
        default: u8,
    },
}

impl GradeRule {
    pub fn grade(&self, query: &str, document: &str) -> u8 {
        match self {
            GradeRule::Overlap => {
                let params = IndexParams::default();
                let q: BTreeSet<String> = tokenize(query, &params).into_iter().collect();
                if q.is_empty() {
                    return 1;
                }
                let d: BTreeSet<String> = tokenize(document, &params).into_iter().collect();
                let shared = q.intersection(&d).count();
                if shared == 0 {
                    1
                } else {
                    (1 + (4 * shared).div_ceil(q.len())).min(5) as u8
                }
            }
            GradeRule::Keyed { entries, default } => {
                let query = query.to_lowercase();
                entries
                    .iter()
                    .find(|e| {
                        document.contains(&e.needle)
                            && e.query.as_ref().is_none_or(|q| query.contains(&q.to_lowercase()))
                    })
                    .map_or(*default, |e| e.grade)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RewriteRule {
    /// Per-topic list of rewrites; the prompt's round count picks the entry.
    Scripted {
        scripts: BTreeMap<String, Vec<String>>,
        /// Return the script entry as the whole reply, without tags.
        #[serde(default)]
        raw: bool,
    },
    /// Word-for-word substitution applied to the latest query.
    Substitution { words: BTreeMap<String, String> },
    /// Builds the rewrite from vocabulary terms seen in the latest round's
    /// feedback documents and not used by any earlier query. Without usable
    /// feedback it echoes the topic.
    FeedbackVocabulary {
        vocabulary: Vec<String>,
        #[serde(default = "default_max_terms")]
        max_terms: usize,
    },
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl RewriteRule {
    /// `None` when the rule has nothing to say about this topic.
    fn reply(&self, topic: &str, rounds: &[RoundView]) -> Option<String> {
        let latest = rounds.last()?;
        match self {
            RewriteRule::Scripted { scripts, raw } => {
                let entry = scripts.get(topic)?.get(rounds.len() - 1)?;
                Some(if *raw {
                    entry.clone()
                } else {
                    format!("<Rewrite>{entry}</Rewrite>")
                })
            }
            RewriteRule::Substitution { words: map } => {
                let rewritten: Vec<String> = latest
                    .query
                    .split_whitespace()
                    .map(|w| map.get(&w.to_lowercase()).cloned().unwrap_or_else(|| w.to_owned()))
                    .collect();
                Some(format!("<Rewrite>{}</Rewrite>", rewritten.join(" ")))
            }
            RewriteRule::FeedbackVocabulary { vocabulary, max_terms } => {
                let vocab: BTreeSet<String> = vocabulary.iter().map(|v| v.to_lowercase()).collect();
                let used: BTreeSet<String> = words(topic)
                    .chain(rounds.iter().flat_map(|r| words(&r.query)))
                    .collect();
                let mut picked: Vec<String> = Vec::new();
                for w in latest.documents.iter().flat_map(|d| words(d)) {
                    if picked.len() >= *max_terms {
                        break;
                    }
                    if vocab.contains(&w) && !used.contains(&w) && !picked.contains(&w) {
                        picked.push(w);
                    }
                }
                let text = if picked.is_empty() {
                    topic.to_owned()
                } else {
                    picked.join(" ")
                };
                Some(format!("<Rewrite>{text}</Rewrite>"))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRules {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<GradeRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank: Option<GradeRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<RewriteRule>,
    /// Requests whose text contains any of these fail with a transient 503.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fail_on: Vec<String>,
}

impl MockRules {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Overlap grading for relevance and re-ranking, no rewrite rule.
    pub fn overlap() -> Self {
        Self {
            relevance: Some(GradeRule::Overlap),
            rerank: Some(GradeRule::Overlap),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockCounters {
    pub relevance: u64,
    pub rewrite: u64,
    pub rerank: u64,
    pub failures: u64,
}

#[derive(Debug, Default)]
pub struct MockBackend {
    rules: MockRules,
    relevance: AtomicU64,
    rewrite: AtomicU64,
    rerank: AtomicU64,
    failures: AtomicU64,
}

fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl MockBackend {
    pub fn new(rules: MockRules) -> Self {
        Self {
            rules,
            ..Self::default()
        }
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    pub fn counters(&self) -> MockCounters {
        MockCounters {
            relevance: self.relevance.load(Ordering::SeqCst),
            rewrite: self.rewrite.load(Ordering::SeqCst),
            rerank: self.rerank.load(Ordering::SeqCst),
            failures: self.failures.load(Ordering::SeqCst),
        }
    }

    fn answer(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let unhandled = |what: &str| BackendError::Unhandled(what.to_owned());
        let kind = prompts::classify(request).ok_or_else(|| unhandled("unrecognised template"))?;
        match kind {
            PromptKind::Relevance { query, document } => {
                let rule = self
                    .rules
                    .relevance
                    .as_ref()
                    .ok_or_else(|| unhandled("no relevance rule"))?;
                self.relevance.fetch_add(1, Ordering::SeqCst);
                Ok(format!("<Score>{}</Score>", rule.grade(&query, &document)))
            }
            PromptKind::Rerank { query, passages } => {
                let rule = self.rules.rerank.as_ref().ok_or_else(|| unhandled("no rerank rule"))?;
                self.rerank.fetch_add(1, Ordering::SeqCst);
                let mut order: Vec<(usize, u8)> = passages
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i + 1, rule.grade(&query, p)))
                    .collect();
                order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                Ok(order
                    .iter()
                    .map(|(i, _)| format!("[{i}]"))
                    .collect::<Vec<_>>()
                    .join(" > "))
            }
            PromptKind::Rewrite { topic, rounds } => {
                let rule = self
                    .rules
                    .rewrite
                    .as_ref()
                    .ok_or_else(|| unhandled("no rewrite rule"))?;
                let reply = rule
                    .reply(&topic, &rounds)
                    .ok_or_else(|| unhandled(&format!("no rewrite for topic `{topic}` round {}", rounds.len())))?;
                self.rewrite.fetch_add(1, Ordering::SeqCst);
                Ok(reply)
            }
        }
    }
}

impl ChatBackend for MockBackend {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        if let Some(needle) = self
            .rules
            .fail_on
            .iter()
            .find(|n| request.messages.iter().any(|m| m.content.contains(n.as_str())))
        {
            self.failures.fetch_add(1, Ordering::SeqCst);
            return Err(BackendError::Status {
                status: 503,
                body: format!("mock failure triggered by `{needle}`"),
            });
        }
        let content = self.answer(request)?;
        Ok(BackendReply {
            input_tokens: request.messages.iter().map(|m| whitespace_tokens(&m.content)).sum(),
            output_tokens: whitespace_tokens(&content),
            content,
        })
    }
}
