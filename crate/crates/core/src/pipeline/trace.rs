//! Per-query audit records, serialised one JSON object per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::{CallRecord, ModelUsage};
use crate::relevance::FilteredList;
use crate::scored::ScoredList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Enough relevant documents were collected.
    Filled,
    /// The query budget ran out.
    MaxRewrites,
    /// The rewriter produced nothing usable.
    RewriteFailed,
    /// A backend or index failure ended the query.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// 1-based.
    pub index: usize,
    pub query: String,
    /// Set when `query` repeats the query of an earlier iteration, whose
    /// retrieval and judgments were reused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat_of: Option<usize>,
    pub retrieved: ScoredList,
    pub filtered: FilteredList,
    /// Kept documents that were already in the accumulated list.
    pub duplicates: Vec<String>,
    /// Size of the accumulated list after merging.
    pub accumulated: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feedback: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<String>,
    pub calls: Vec<CallRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub query_id: String,
    pub query: String,
    pub iterations: Vec<IterationTrace>,
    pub termination: Termination,
    /// Accumulated documents in relevance order, truncated to the output size.
    pub pre_rerank: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_rerank: Option<Vec<String>>,
    /// Calls made after the loop: final relevance ordering and re-ranking.
    pub final_calls: Vec<CallRecord>,
    pub warnings: Vec<String>,
    /// Per-model totals over every call in this trace.
    pub usage: BTreeMap<String, ModelUsage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunTrace {
    pub fn new(query_id: &str, query: &str) -> Self {
        Self {
            query_id: query_id.to_owned(),
            query: query.to_owned(),
            iterations: Vec::new(),
            termination: Termination::MaxRewrites,
            pre_rerank: Vec::new(),
            post_rerank: None,
            final_calls: Vec::new(),
            warnings: Vec::new(),
            usage: BTreeMap::new(),
            error: None,
        }
    }

    pub fn calls(&self) -> impl Iterator<Item = &CallRecord> {
        self.iterations
            .iter()
            .flat_map(|it| it.calls.iter())
            .chain(self.final_calls.iter())
    }

    pub fn rewrites(&self) -> impl Iterator<Item = &str> {
        self.iterations.iter().filter_map(|it| it.rewrite.as_deref())
    }

    pub(crate) fn finish_usage(&mut self) {
        self.usage = usage_from_calls(self.calls());
    }
}

/// Totals as if every call had reached the backend.
pub fn usage_from_calls<'a>(calls: impl IntoIterator<Item = &'a CallRecord>) -> BTreeMap<String, ModelUsage> {
    let mut usage: BTreeMap<String, ModelUsage> = BTreeMap::new();
    for c in calls {
        let u = usage.entry(c.model.clone()).or_default();
        u.calls += 1;
        u.input_tokens += c.input_tokens;
        u.output_tokens += c.output_tokens;
    }
    usage
}

pub fn write_traces<'a>(path: impl AsRef<Path>, traces: impl IntoIterator<Item = &'a RunTrace>) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_traces(path: impl AsRef<Path>) -> std::io::Result<Vec<RunTrace>> {
    let reader = BufReader::new(File::open(path)?);
    let mut traces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        traces.push(trace);
    }
    Ok(traces)
}
