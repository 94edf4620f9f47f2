use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::gateway::{DEFAULT_CHEAP_MODEL, DEFAULT_STRONG_MODEL};
use crate::relevance::{MAX_GRADE, MIN_GRADE};
use crate::reranker::{WindowSchedule, DEFAULT_STEP, DEFAULT_STRONG_DEPTH, DEFAULT_WINDOW};
use crate::rewriter::{DEFAULT_CHAR_BUDGET, DEFAULT_MAX_OUTPUT_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    /// Top retrieved documents by retriever score.
    Retriever,
    /// Documents that passed the relevance filter, best graded first.
    Relevance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceTarget {
    /// Judge every retrieval against the user's query.
    Original,
    /// Judge each retrieval against the rewrite that produced it.
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Output size and per-iteration retrieval depth.
    pub n: usize,
    /// Maximum number of queries issued, the original one included.
    pub max_rewrites: usize,
    /// Feedback documents shown to the rewriter per round.
    pub feedback_size: usize,
    /// Documents need a grade strictly above this to be kept.
    pub tau: u8,
    pub window: usize,
    pub step: usize,
    /// Head of the list re-ranked again by the strong model.
    pub strong_depth: usize,
    pub feedback_enabled: bool,
    pub feedback_source: FeedbackSource,
    pub relevance_target: RelevanceTarget,
    pub final_rerank: bool,
    pub cheap_model: String,
    pub strong_model: String,
    pub feedback_chars: usize,
    pub rewrite_max_tokens: u32,
    /// Concurrent relevance calls within one query.
    pub relevance_parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 100,
            max_rewrites: 5,
            feedback_size: 3,
            tau: 1,
            window: DEFAULT_WINDOW,
            step: DEFAULT_STEP,
            strong_depth: DEFAULT_STRONG_DEPTH,
            feedback_enabled: true,
            feedback_source: FeedbackSource::Retriever,
            relevance_target: RelevanceTarget::Original,
            final_rerank: true,
            cheap_model: DEFAULT_CHEAP_MODEL.to_owned(),
            strong_model: DEFAULT_STRONG_MODEL.to_owned(),
            feedback_chars: DEFAULT_CHAR_BUDGET,
            rewrite_max_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            relevance_parallelism: 8,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.max_rewrites == 0 {
            return bad("max_rewrites must be at least 1".into());
        }
        if !(MIN_GRADE..=MAX_GRADE).contains(&self.tau) {
            return bad(format!(
                "tau must be within {MIN_GRADE}..={MAX_GRADE}, got {}",
                self.tau
            ));
        }
        if WindowSchedule::new(0, self.window, self.step).is_err() {
            return bad(format!(
                "window schedule needs 1 <= step <= window, got window {} step {}",
                self.window, self.step
            ));
        }
        if self.strong_depth == 0 {
            return bad("strong_depth must be at least 1".into());
        }
        if self.cheap_model.is_empty() || self.strong_model.is_empty() {
            return bad("model names must not be empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.n, c.max_rewrites, c.feedback_size, c.tau), (100, 5, 3, 1));
        assert_eq!((c.window, c.step), (10, 5));
    }

    #[test]
    fn rejects_bad_values() {
        for c in [
            PipelineConfig {
                n: 0,
                ..Default::default()
            },
            PipelineConfig {
                tau: 0,
                ..Default::default()
            },
            PipelineConfig {
                tau: 6,
                ..Default::default()
            },
            PipelineConfig {
                step: 11,
                ..Default::default()
            },
            PipelineConfig {
                max_rewrites: 0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
