//! Query rewriting with retrieval feedback.
//!
//! A [`RewriteHistory`] accumulates one round per issued query together
//! with the documents shown as its top results; the rendered prompt only
//! ever grows, round by round.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::gateway::{CallRecord, ChatMessage, ChatRequest, Gateway, GatewayError, Role, Stage};
use crate::prompts::{self, RoundView};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 20;
pub const DEFAULT_CHAR_BUDGET: usize = 1000;
/// Untagged replies longer than this are not accepted as a rewrite.
pub const REPAIR_MAX_TOKENS: usize = 20;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("empty rewrite in reply {raw:?}")]
    Empty { raw: String },
    #[error("no rewrite in reply {raw:?}")]
    Unparseable { raw: String },
    #[error("history already holds the maximum of {max} rounds")]
    TooManyRounds { max: usize },
    #[error("history has no rounds to rewrite from")]
    NoRounds,
}

impl RewriteError {
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, RewriteError::Gateway(e) if e.is_exhaustion())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub query: String,
    pub feedback: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteHistory {
    topic: String,
    max_rounds: usize,
    rounds: Vec<Round>,
}

impl RewriteHistory {
    pub fn new(topic: impl Into<String>, max_rounds: usize) -> Self {
        Self {
            topic: topic.into(),
            max_rounds,
            rounds: Vec::new(),
        }
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// `feedback` is expected to be trimmed to the feedback size already.
    pub fn append_round(&mut self, query: impl Into<String>, feedback: Vec<String>) -> Result<(), RewriteError> {
        if self.rounds.len() >= self.max_rounds {
            return Err(RewriteError::TooManyRounds { max: self.max_rounds });
        }
        self.rounds.push(Round {
            query: query.into(),
            feedback,
        });
        Ok(())
    }

    fn views(&self) -> Vec<RoundView> {
        self.rounds
            .iter()
            .map(|r| RoundView {
                query: r.query.clone(),
                documents: r.feedback.clone(),
            })
            .collect()
    }
}

/// A feedback document as shown in the prompt: title and body on one line,
/// cut to `budget` characters.
pub fn feedback_text(doc: &Document, budget: usize) -> String {
    let line = prompts::single_line(&doc.full_text());
    prompts::truncate_chars(&line, budget).trim_end().to_owned()
}

/// Reads `<Rewrite>...</Rewrite>`. An untagged reply of at most
/// [`REPAIR_MAX_TOKENS`] words is accepted as is.
pub fn parse_rewrite(content: &str) -> Result<String, RewriteError> {
    static TAG: OnceLock<Regex> = OnceLock::new();
    static STRAY: OnceLock<Regex> = OnceLock::new();
    let tag = TAG.get_or_init(|| Regex::new(r"(?s)<Rewrite>(.*?)</Rewrite>").unwrap());
    let raw = || content.to_owned();
    if let Some(caps) = tag.captures(content) {
        let text = prompts::single_line(&caps[1]);
        return if text.is_empty() {
            Err(RewriteError::Empty { raw: raw() })
        } else {
            Ok(text)
        };
    }
    let stray = STRAY.get_or_init(|| Regex::new(r"</?Rewrite>").unwrap());
    let text = prompts::single_line(&stray.replace_all(content, " "));
    if text.is_empty() {
        Err(RewriteError::Empty { raw: raw() })
    } else if text.split_whitespace().count() <= REPAIR_MAX_TOKENS {
        Ok(text)
    } else {
        Err(RewriteError::Unparseable { raw: raw() })
    }
}

pub struct Rewriter<'a> {
    gateway: &'a Gateway,
    model: String,
    max_output_tokens: u32,
}

impl<'a> Rewriter<'a> {
    pub fn new(gateway: &'a Gateway, model: impl Into<String>) -> Self {
        Self {
            gateway,
            model: model.into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn with_max_output_tokens(mut self, limit: u32) -> Self {
        self.max_output_tokens = limit;
        self
    }

    pub fn render_prompt(&self, history: &RewriteHistory) -> Result<ChatRequest, RewriteError> {
        if history.is_empty() {
            return Err(RewriteError::NoRounds);
        }
        Ok(ChatRequest::new(
            self.model.clone(),
            vec![
                ChatMessage::new(Role::System, prompts::assistant_system()),
                ChatMessage::new(Role::User, prompts::rewrite_user(history.topic(), &history.views())),
            ],
        )
        .with_max_output_tokens(self.max_output_tokens))
    }

    pub fn generate(&self, history: &RewriteHistory) -> Result<(String, CallRecord), RewriteError> {
        let request = self.render_prompt(history)?;
        let response = self.gateway.complete(&request)?;
        let record = CallRecord::new(Stage::Rewrite, &self.model, &response);
        Ok((parse_rewrite(&response.content)?, record))
    }
}
