//! A small corpus with a deliberate vocabulary gap.
//!
//! Relevant documents come in five groups. Only the first shares words
//! with the topic query; each later group is reachable only through the
//! vocabulary of the previous one, which every document of that previous
//! group mentions once. A rewriter that picks up new vocabulary from its
//! feedback can therefore walk the chain one group per round, while the
//! original query alone finds a fifth of the relevant set.

use std::collections::BTreeMap;

use crate::corpus::{Document, DocumentStore, Qrels, Query};
use crate::gateway::{GradeEntry, GradeRule, MockRules, RewriteRule};

/// Present in the title of every relevant document and nowhere else.
pub const NEEDLE: &str = "relevant-study";
pub const TOPIC: &str = "diet soda weight gain";
pub const GROUP_SIZE: usize = 8;
pub const DISTRACTORS: usize = 60;

const VOCABULARIES: [[&str; 4]; 4] = [
    ["aspartame", "sucralose", "saccharin", "stevia"],
    ["insulin", "glycemic", "pancreas", "glucose"],
    ["appetite", "ghrelin", "leptin", "satiety"],
    ["microbiome", "bacteria", "gut", "flora"],
];

const FILLER: [&str; 12] = [
    "market", "report", "finance", "weather", "travel", "garden", "music", "history", "engine", "ocean", "railway",
    "painting",
];

pub struct LexicalGapCorpus {
    pub store: DocumentStore,
    pub query: Query,
    pub qrels: Qrels,
    /// Vocabularies that lead from each group to the next.
    pub vocabularies: Vec<Vec<String>>,
    pub relevant: Vec<String>,
}

impl LexicalGapCorpus {
    pub fn build() -> Self {
        let mut docs = Vec::new();
        let mut relevant = Vec::new();
        for group in 0..=VOCABULARIES.len() {
            for i in 0..GROUP_SIZE {
                let mut words: Vec<&str> = Vec::new();
                if group == 0 {
                    words.extend(TOPIC.split(' '));
                } else {
                    let own = &VOCABULARIES[group - 1];
                    words.extend(own.iter().chain(own.iter()));
                }
                if let Some(next) = VOCABULARIES.get(group) {
                    words.push(next[i % next.len()]);
                }
                words.push(FILLER[(group + i) % FILLER.len()]);
                let id = format!("g{group}-{i:02}");
                let title = format!("{NEEDLE} {group}.{i}");
                docs.push(Document::new(&id, Some(&title), words.join(" ")));
                relevant.push(id);
            }
        }
        for i in 0..DISTRACTORS {
            let mut words = vec![FILLER[i % FILLER.len()], FILLER[(i * 5 + 3) % FILLER.len()]];
            match i % 6 {
                0 => words.push("diet"),
                3 => words.push("soda"),
                _ => {}
            }
            let id = format!("x-{i:02}");
            docs.push(Document::new(&id, Some("unrelated note"), words.join(" ")));
        }
        let mut qrels = Qrels::new();
        for id in &relevant {
            qrels.insert("q1", id, 1);
        }
        Self {
            store: DocumentStore::from_documents(docs).expect("generated ids are unique"),
            query: Query::new("q1", TOPIC),
            qrels,
            vocabularies: VOCABULARIES
                .iter()
                .map(|v| v.iter().map(|w| w.to_string()).collect())
                .collect(),
            relevant,
        }
    }

    /// Grades relevant documents 5 and everything else 1, for both
    /// relevance scoring and window permutation.
    pub fn grade_rule() -> GradeRule {
        GradeRule::Keyed {
            entries: vec![GradeEntry {
                needle: NEEDLE.to_owned(),
                grade: 5,
                query: None,
            }],
            default: 1,
        }
    }

    /// Rewrites scripted to step through the vocabularies in order.
    pub fn scripted_rules(&self) -> MockRules {
        let script = self.vocabularies.iter().map(|v| v.join(" ")).collect();
        MockRules {
            relevance: Some(Self::grade_rule()),
            rerank: Some(Self::grade_rule()),
            rewrite: Some(RewriteRule::Scripted {
                scripts: BTreeMap::from([(TOPIC.to_owned(), script)]),
                raw: false,
            }),
            fail_on: Vec::new(),
        }
    }

    /// Rewrites that can only discover the next vocabulary from feedback
    /// documents.
    pub fn feedback_rules(&self) -> MockRules {
        MockRules {
            rewrite: Some(RewriteRule::FeedbackVocabulary {
                vocabulary: self.vocabularies.concat(),
                max_terms: 8,
            }),
            ..self.scripted_rules()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_index::{IndexParams, InvertedIndex};

    #[test]
    fn topic_reaches_only_the_first_group() {
        let c = LexicalGapCorpus::build();
        assert_eq!(c.store.len(), 5 * GROUP_SIZE + DISTRACTORS);
        let idx = InvertedIndex::build(&c.store, IndexParams::default()).unwrap();
        let hits = idx.search(TOPIC, 100).unwrap();
        let relevant: Vec<_> = hits.ids().filter(|id| id.starts_with('g')).collect();
        assert_eq!(relevant.len(), GROUP_SIZE);
        assert!(relevant.iter().all(|id| id.starts_with("g0-")));
        assert!(hits.len() > GROUP_SIZE, "distractors should also match");

        let v1 = c.vocabularies[0].join(" ");
        let hits = idx.search(&v1, 100).unwrap();
        assert!(hits.ids().filter(|id| id.starts_with("g1-")).count() == GROUP_SIZE);
        assert!(hits.ids().all(|id| id.starts_with("g0-") || id.starts_with("g1-")));
    }
}
