//! Listwise sliding-window re-ranking.
//!
//! A window of `w` passages is shown to a chat model, which answers with a
//! permutation such as `[2] > [1] > [3]`. Windows move from the tail of the
//! list toward the head in steps of `s`, so a strong document near the
//! bottom can climb all the way to the top in a single pass.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DocumentStore;
use crate::gateway::{CallRecord, ChatRequest, Gateway, GatewayError, Stage};
use crate::prompts;
use crate::scored::ScoredList;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_STEP: usize = 5;
pub const DEFAULT_STRONG_DEPTH: usize = 30;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("invalid window schedule: window {w}, step {s}")]
    InvalidSchedule { w: usize, s: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl RerankError {
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, RerankError::Gateway(e) if e.is_exhaustion())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSchedule {
    pub n: usize,
    pub w: usize,
    pub s: usize,
}

impl WindowSchedule {
    pub fn new(n: usize, w: usize, s: usize) -> Result<Self, RerankError> {
        if w == 0 || s == 0 || s > w {
            return Err(RerankError::InvalidSchedule { w, s });
        }
        Ok(Self { n, w, s })
    }

    /// `floor((n - w) / s) + 1` when the windows tile the list exactly, plus
    /// one short head window when they do not.
    pub fn window_count(&self) -> usize {
        match self.n {
            0 => 0,
            n if n <= self.w => 1,
            n => {
                let span = n - self.w;
                span / self.s + 1 + usize::from(span % self.s != 0)
            }
        }
    }

    /// Windows in processing order, tail first. A head window that would
    /// start before 0 is clipped to a short window.
    pub fn windows(&self) -> Vec<Range<usize>> {
        if self.n == 0 {
            return Vec::new();
        }
        if self.n <= self.w {
            return vec![0..self.n];
        }
        let mut out = Vec::with_capacity(self.window_count());
        let mut end = self.n;
        loop {
            let start = end.saturating_sub(self.w);
            out.push(start..end);
            if start == 0 {
                break;
            }
            end -= self.s;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    /// 1-based positions within the window, best first.
    pub order: Vec<usize>,
}

impl Permutation {
    pub fn identity(len: usize) -> Self {
        Self {
            order: (1..=len).collect(),
        }
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| items[i - 1].clone()).collect()
    }
}

/// Parses a ranking reply for a window of `len` passages. Out-of-range and
/// repeated indices are dropped and unmentioned ones appended in their
/// original order. The second value describes any repair made.
pub fn parse_permutation(content: &str, len: usize) -> (Permutation, Option<String>) {
    static BRACKETED: OnceLock<Regex> = OnceLock::new();
    let re = BRACKETED.get_or_init(|| Regex::new(r"\[(\d+)\]").unwrap());
    let raw: Vec<usize> = re
        .captures_iter(content)
        .map(|c| c[1].parse().unwrap_or(usize::MAX))
        .collect();
    let mut seen = vec![false; len + 1];
    let mut order = Vec::with_capacity(len);
    for &i in &raw {
        if (1..=len).contains(&i) && !seen[i] {
            seen[i] = true;
            order.push(i);
        }
    }
    if order.is_empty() {
        let warning = format!("unparseable ranking {content:?}; keeping window order");
        return (Permutation::identity(len), Some(warning));
    }
    let clean = order.len() == raw.len() && order.len() == len;
    order.extend((1..=len).filter(|&i| !seen[i]));
    let warning = (!clean).then(|| format!("repaired ranking {content:?} to {order:?}"));
    (Permutation { order }, warning)
}

pub fn rerank_request(model: &str, query: &str, passages: &[String]) -> ChatRequest {
    ChatRequest::new(model, prompts::rerank_messages(query, passages))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub order: Vec<String>,
    pub calls: Vec<CallRecord>,
    pub warnings: Vec<String>,
}

impl RerankOutcome {
    pub fn to_scored_list(&self) -> ScoredList {
        ScoredList::from_ranked_ids(self.order.iter().cloned())
    }
}

pub struct Reranker<'a> {
    gateway: &'a Gateway,
    store: &'a DocumentStore,
    window: usize,
    step: usize,
}

impl<'a> Reranker<'a> {
    pub fn new(
        gateway: &'a Gateway,
        store: &'a DocumentStore,
        window: usize,
        step: usize,
    ) -> Result<Self, RerankError> {
        WindowSchedule::new(0, window, step)?;
        Ok(Self {
            gateway,
            store,
            window,
            step,
        })
    }

    /// Ranks one window. Backend exhaustion is an error; any other failure
    /// keeps the window order and is reported as a warning.
    pub fn window_permute(
        &self,
        query: &str,
        passages: &[String],
        model: &str,
        stage: Stage,
    ) -> Result<(Permutation, Option<CallRecord>, Option<String>), RerankError> {
        let request = rerank_request(model, query, passages);
        match self.gateway.complete(&request) {
            Ok(response) => {
                let record = CallRecord::new(stage, model, &response);
                let (perm, warning) = parse_permutation(&response.content, passages.len());
                Ok((perm, Some(record), warning))
            }
            Err(e) if e.is_exhaustion() => Err(e.into()),
            Err(e) => Ok((
                Permutation::identity(passages.len()),
                None,
                Some(format!("re-rank call failed: {e}; keeping window order")),
            )),
        }
    }

    fn passage(&self, doc_id: &str) -> String {
        self.store.get(doc_id).map(|d| d.full_text()).unwrap_or_default()
    }

    /// One back-to-front pass over `ids`.
    pub fn sliding_rerank(
        &self,
        query: &str,
        ids: &[String],
        model: &str,
        stage: Stage,
    ) -> Result<RerankOutcome, RerankError> {
        let schedule = WindowSchedule::new(ids.len(), self.window, self.step)?;
        let mut outcome = RerankOutcome {
            order: ids.to_vec(),
            ..RerankOutcome::default()
        };
        for range in schedule.windows() {
            let window = &outcome.order[range.clone()];
            let passages: Vec<String> = window.iter().map(|id| self.passage(id)).collect();
            let (perm, call, warning) = self.window_permute(query, &passages, model, stage)?;
            let permuted = perm.apply(window);
            outcome.order.splice(range, permuted);
            outcome.calls.extend(call);
            outcome.warnings.extend(warning);
        }
        Ok(outcome)
    }

    /// A cheap-model pass over the whole list, then a strong-model pass over
    /// its top `strong_depth` entries.
    pub fn two_phase_rerank(
        &self,
        query: &str,
        ids: &[String],
        cheap_model: &str,
        strong_model: &str,
        strong_depth: usize,
    ) -> Result<RerankOutcome, RerankError> {
        let mut outcome = self.sliding_rerank(query, ids, cheap_model, Stage::RerankCheap)?;
        let depth = strong_depth.min(outcome.order.len());
        let head = self.sliding_rerank(query, &outcome.order[..depth], strong_model, Stage::RerankStrong)?;
        outcome.order.splice(..depth, head.order);
        outcome.calls.extend(head.calls);
        outcome.warnings.extend(head.warnings);
        Ok(outcome)
    }
}
