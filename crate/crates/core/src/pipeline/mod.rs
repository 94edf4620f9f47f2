//! The rewrite-retrieve-rerank loop.
//!
//! Each iteration retrieves for the current query, keeps what the relevance
//! model grades above the threshold, and merges it into an accumulated list
//! ordered by relevance to the original query. Until that list is full or
//! the query budget is spent, the rewriter is shown the latest results and
//! asked for the next query. The accumulated list is finally cut to size and
//! re-ranked in two phases.

mod config;
mod trace;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

pub use config::{FeedbackSource, PipelineConfig, RelevanceTarget};
pub use trace::{read_traces, usage_from_calls, write_traces, IterationTrace, RunTrace, Termination};

use crate::corpus::{DocumentStore, Query};
use crate::gateway::Gateway;
use crate::prompts;
use crate::relevance::{relevance_order, FilteredList, JudgedDoc, RelevanceError, RelevanceModel};
use crate::reranker::{RerankError, Reranker};
use crate::rewriter::{feedback_text, RewriteError, RewriteHistory, Rewriter};
use crate::scored::ScoredList;
use crate::sparse_index::{IndexError, Retriever};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("search failed: {0}")]
    Search(#[from] IndexError),
    #[error("relevance scoring failed: {0}")]
    Relevance(#[from] RelevanceError),
    #[error("rewrite failed: {0}")]
    Rewrite(#[from] RewriteError),
    #[error("re-ranking failed: {0}")]
    Rerank(#[from] RerankError),
}

impl PipelineError {
    pub fn is_exhaustion(&self) -> bool {
        match self {
            PipelineError::Relevance(e) => e.is_exhaustion(),
            PipelineError::Rewrite(e) => e.is_exhaustion(),
            PipelineError::Rerank(e) => e.is_exhaustion(),
            PipelineError::Config(_) | PipelineError::Search(_) => false,
        }
    }
}

/// Shared, read-only collaborators of a run.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub retriever: &'a dyn Retriever,
    pub store: &'a DocumentStore,
    pub gateway: &'a Gateway,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedOutput {
    pub query_id: String,
    pub ranked: ScoredList,
}

#[derive(Debug)]
pub struct QueryFailure {
    pub error: PipelineError,
    pub trace: RunTrace,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeReport {
    pub added: Vec<String>,
    pub duplicates: Vec<String>,
}

/// Adds the kept documents not yet in `accumulated`, which stays sorted by
/// relevance. Documents already present keep their first judgment.
pub fn merge(accumulated: &mut Vec<JudgedDoc>, kept: &[JudgedDoc]) -> MergeReport {
    let mut present: HashSet<String> = accumulated.iter().map(|d| d.doc_id.clone()).collect();
    let mut report = MergeReport::default();
    for doc in kept {
        if present.insert(doc.doc_id.clone()) {
            report.added.push(doc.doc_id.clone());
            accumulated.push(doc.clone());
        } else {
            report.duplicates.push(doc.doc_id.clone());
        }
    }
    accumulated.sort_by(relevance_order);
    report
}

fn normalize(query: &str) -> String {
    prompts::single_line(query).to_lowercase()
}

struct Stage1 {
    retrieved: ScoredList,
    filtered: FilteredList,
}

pub fn run_query(
    query: &Query,
    config: &PipelineConfig,
    components: Components<'_>,
) -> Result<(RankedOutput, RunTrace), QueryFailure> {
    let mut trace = RunTrace::new(&query.id, &query.text);
    match run_inner(query, config, components, &mut trace) {
        Ok(ranked) => {
            trace.finish_usage();
            Ok((
                RankedOutput {
                    query_id: query.id.clone(),
                    ranked,
                },
                trace,
            ))
        }
        Err(error) => {
            trace.termination = Termination::Aborted;
            trace.error = Some(error.to_string());
            trace.finish_usage();
            Err(QueryFailure { error, trace })
        }
    }
}

fn run_inner(
    query: &Query,
    config: &PipelineConfig,
    c: Components<'_>,
    trace: &mut RunTrace,
) -> Result<ScoredList, PipelineError> {
    config.validate()?;
    let relevance = RelevanceModel::new(c.gateway, c.store, config.cheap_model.clone())
        .with_parallelism(config.relevance_parallelism);
    let rewriter =
        Rewriter::new(c.gateway, config.strong_model.clone()).with_max_output_tokens(config.rewrite_max_tokens);

    let mut history = RewriteHistory::new(query.text.clone(), config.max_rewrites);
    let mut accumulated: Vec<JudgedDoc> = Vec::new();
    let mut seen: HashMap<String, (usize, Stage1)> = HashMap::new();
    let mut current = query.text.clone();
    trace.termination = Termination::MaxRewrites;

    for t in 1..=config.max_rewrites {
        let key = normalize(&current);
        let mut it = IterationTrace {
            index: t,
            query: current.clone(),
            repeat_of: None,
            retrieved: ScoredList::new(),
            filtered: FilteredList::default(),
            duplicates: Vec::new(),
            accumulated: 0,
            feedback: Vec::new(),
            rewrite: None,
            calls: Vec::new(),
        };

        if let Some((first, stage1)) = seen.get(&key) {
            it.repeat_of = Some(*first);
            it.retrieved = stage1.retrieved.clone();
            it.filtered = stage1.filtered.clone();
        } else {
            let retrieved = c.retriever.search(&current, config.n)?;
            let target = match config.relevance_target {
                RelevanceTarget::Original => query.text.as_str(),
                RelevanceTarget::Rewrite => current.as_str(),
            };
            let (filtered, calls) = relevance.filter(target, &retrieved, config.tau)?;
            for d in filtered.dropped.iter().filter(|d| d.error.is_some()) {
                trace.warnings.push(format!(
                    "iteration {t}: dropped {}: {}",
                    d.doc_id,
                    d.error.as_deref().unwrap_or_default()
                ));
            }
            it.calls = calls;
            it.retrieved = retrieved.clone();
            it.filtered = filtered.clone();
            seen.insert(key, (t, Stage1 { retrieved, filtered }));
        }

        let report = merge(&mut accumulated, &it.filtered.kept);
        it.duplicates = report.duplicates;
        it.accumulated = accumulated.len();

        if accumulated.len() >= config.n {
            trace.termination = Termination::Filled;
            trace.iterations.push(it);
            break;
        }
        if t == config.max_rewrites {
            trace.iterations.push(it);
            break;
        }

        let feedback_ids: Vec<String> = if !config.feedback_enabled {
            Vec::new()
        } else {
            match config.feedback_source {
                FeedbackSource::Retriever => it
                    .retrieved
                    .ids()
                    .take(config.feedback_size)
                    .map(str::to_owned)
                    .collect(),
                FeedbackSource::Relevance => {
                    let mut kept = it.filtered.kept.clone();
                    kept.sort_by(relevance_order);
                    kept.into_iter().take(config.feedback_size).map(|d| d.doc_id).collect()
                }
            }
        };
        let feedback: Vec<String> = feedback_ids
            .iter()
            .filter_map(|id| c.store.get(id))
            .map(|d| feedback_text(d, config.feedback_chars))
            .collect();
        it.feedback = feedback_ids;
        history.append_round(current.clone(), feedback)?;

        match rewriter.generate(&history) {
            Ok((rewrite, call)) => {
                it.calls.push(call);
                it.rewrite = Some(rewrite.clone());
                current = rewrite;
                trace.iterations.push(it);
            }
            Err(e) if e.is_exhaustion() => {
                trace.iterations.push(it);
                return Err(e.into());
            }
            Err(e) => {
                trace.warnings.push(format!("iteration {t}: {e}"));
                trace.termination = Termination::RewriteFailed;
                trace.iterations.push(it);
                break;
            }
        }
    }

    let ranked = relevance.rank_by_relevance(&query.text, &accumulated)?;
    trace.final_calls.extend(ranked.calls.iter().cloned());
    for (id, err) in &ranked.failed {
        trace.warnings.push(format!("final ordering: dropped {id}: {err}"));
    }
    let mut pre: Vec<String> = ranked.docs.into_iter().map(|d| d.doc_id).collect();
    pre.truncate(config.n);
    trace.pre_rerank = pre.clone();

    if !config.final_rerank || pre.is_empty() {
        return Ok(ScoredList::from_ranked_ids(pre));
    }
    let reranker = Reranker::new(c.gateway, c.store, config.window, config.step)?;
    let outcome = reranker.two_phase_rerank(
        &query.text,
        &pre,
        &config.cheap_model,
        &config.strong_model,
        config.strong_depth,
    )?;
    trace.final_calls.extend(outcome.calls.iter().cloned());
    trace.warnings.extend(outcome.warnings.iter().cloned());
    trace.post_rerank = Some(outcome.order.clone());
    Ok(outcome.to_scored_list())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryError {
    pub query_id: String,
    pub message: String,
    pub exhaustion: bool,
}

#[derive(Debug, Default)]
pub struct BatchResult {
    pub results: BTreeMap<String, ScoredList>,
    /// One trace per query, in input order, failed queries included.
    pub traces: Vec<RunTrace>,
    pub errors: Vec<QueryError>,
}

impl BatchResult {
    /// True when there were queries and every one of them failed because
    /// the backend stayed unavailable.
    pub fn all_exhausted(&self) -> bool {
        !self.errors.is_empty() && self.results.is_empty() && self.errors.iter().all(|e| e.exhaustion)
    }
}

/// Runs queries independently on up to `parallelism` threads. A failing
/// query is recorded and the rest continue.
pub fn run_batch(
    queries: &[Query],
    config: &PipelineConfig,
    components: Components<'_>,
    parallelism: usize,
) -> BatchResult {
    let slots: Vec<Mutex<Option<Result<(RankedOutput, RunTrace), QueryFailure>>>> =
        queries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, queries.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(query) = queries.get(i) else { break };
                log::info!("query {} ({}/{})", query.id, i + 1, queries.len());
                let outcome = run_query(query, config, components);
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut batch = BatchResult::default();
    for slot in slots {
        match slot.into_inner().unwrap().expect("every query was run") {
            Ok((output, trace)) => {
                batch.results.insert(output.query_id, output.ranked);
                batch.traces.push(trace);
            }
            Err(failure) => {
                log::warn!("query {} failed: {}", failure.trace.query_id, failure.error);
                batch.errors.push(QueryError {
                    query_id: failure.trace.query_id.clone(),
                    message: failure.error.to_string(),
                    exhaustion: failure.error.is_exhaustion(),
                });
                batch.traces.push(failure.trace);
            }
        }
    }
    batch
}
