//! nDCG@k and Recall@k over TREC runs and graded qrels.
//!
//! nDCG uses linear gain and a `log2(rank + 1)` discount, as trec_eval and
//! the BEIR evaluator do. Capped recall divides by `min(|relevant|, k)`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{group_run, read_run, CorpusError, Qrels};
use crate::scored::ScoredList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown metric `{0}` (expected ndcg@K or recall@K with K >= 1)")]
    UnknownMetric(String),
    #[error(transparent)]
    Run(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Ndcg(usize),
    Recall(usize),
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || EvalError::UnknownMetric(s.to_owned());
        let (name, k) = s.trim().split_once('@').ok_or_else(unknown)?;
        let k: usize = k.parse().map_err(|_| unknown())?;
        if k == 0 {
            return Err(unknown());
        }
        match name.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg(k)),
            "recall" => Ok(Metric::Recall(k)),
            _ => Err(unknown()),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
        }
    }
}

pub fn parse_metrics(spec: &str) -> Result<Vec<Metric>, EvalError> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

fn distinct<'a>(ranked: &'a [&'a str]) -> impl Iterator<Item = &'a str> + 'a {
    let mut seen = HashSet::new();
    ranked.iter().copied().filter(move |id| seen.insert(*id))
}

/// Returns 0 when nothing is relevant or `k` is 0.
pub fn ndcg_at_k(ranked: &[&str], judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let discount = |i: usize| ((i + 2) as f64).log2();
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / discount(i))
        .sum();
    if idcg == 0.0 {
        return 0.0;
    }
    let dcg: f64 = distinct(ranked)
        .take(k)
        .enumerate()
        .map(|(i, id)| f64::from(judgments.get(id).copied().unwrap_or(0)) / discount(i))
        .sum();
    dcg / idcg
}

/// Returns 0 when nothing is relevant or `k` is 0.
pub fn recall_at_k(ranked: &[&str], judgments: &BTreeMap<String, u32>, k: usize, capped: bool) -> f64 {
    let relevant = judgments.values().filter(|&&g| g > 0).count();
    let denom = if capped { relevant.min(k) } else { relevant };
    if denom == 0 {
        return 0.0;
    }
    let hits = distinct(ranked)
        .take(k)
        .filter(|id| judgments.get(*id).is_some_and(|&g| g > 0))
        .count();
    hits as f64 / denom as f64
}

pub fn compute(metric: Metric, ranked: &[&str], judgments: &BTreeMap<String, u32>, capped: bool) -> f64 {
    match metric {
        Metric::Ndcg(k) => ndcg_at_k(ranked, judgments, k),
        Metric::Recall(k) => recall_at_k(ranked, judgments, k, capped),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub values: BTreeMap<String, f64>,
    /// No document is judged relevant; every value is 0.
    pub no_relevant: bool,
    /// The run has no results for this judged query; every value is 0.
    pub missing_from_run: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<String>,
    pub capped: bool,
    pub query_count: usize,
    pub mean: BTreeMap<String, f64>,
    pub queries: Vec<QueryMetrics>,
    pub warnings: Vec<String>,
}

/// Scores every judged query. Judged queries absent from the run score 0;
/// run queries without judgments are skipped with a warning.
pub fn evaluate(run: &BTreeMap<String, ScoredList>, qrels: &Qrels, metrics: &[Metric], capped: bool) -> MetricReport {
    let names: Vec<String> = metrics.iter().map(Metric::to_string).collect();
    let mut report = MetricReport {
        metrics: names.clone(),
        capped,
        query_count: 0,
        mean: BTreeMap::new(),
        queries: Vec::new(),
        warnings: Vec::new(),
    };
    if qrels.is_empty() {
        report.warnings.push("qrels are empty; nothing to evaluate".into());
        return report;
    }
    for qid in run.keys() {
        if qrels.for_query(qid).is_none() {
            report.warnings.push(format!("query {qid} has no judgments; skipped"));
        }
    }
    let empty = ScoredList::new();
    for qid in qrels.query_ids() {
        let judgments = qrels.for_query(qid).expect("listed query");
        let list = run.get(qid);
        let ranked: Vec<&str> = list.unwrap_or(&empty).ids().collect();
        let no_relevant = judgments.values().all(|&g| g == 0);
        if no_relevant {
            report
                .warnings
                .push(format!("query {qid} has no relevant documents; scored 0"));
        }
        let values = metrics
            .iter()
            .zip(&names)
            .map(|(&m, name)| (name.clone(), compute(m, &ranked, judgments, capped)))
            .collect();
        report.queries.push(QueryMetrics {
            query_id: qid.to_owned(),
            values,
            no_relevant,
            missing_from_run: list.is_none(),
        });
    }
    report.query_count = report.queries.len();
    for name in &names {
        let sum: f64 = report.queries.iter().map(|q| q.values[name]).sum();
        report.mean.insert(name.clone(), sum / report.query_count as f64);
    }
    report
}

pub fn evaluate_run(
    run_path: impl AsRef<Path>,
    qrels: &Qrels,
    metrics: &[Metric],
    capped: bool,
) -> Result<MetricReport, EvalError> {
    let lines = read_run(run_path)?;
    Ok(evaluate(&group_run(&lines), qrels, metrics, capped))
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let headers: Vec<String> = self
            .metrics
            .iter()
            .map(|m| {
                if self.capped && m.starts_with("recall") {
                    format!("{m}(capped)")
                } else {
                    m.clone()
                }
            })
            .collect();
        write!(f, "{:<16}", "query")?;
        for h in &headers {
            write!(f, " {h:>18}")?;
        }
        writeln!(f)?;
        for q in &self.queries {
            let mark = if q.missing_from_run || q.no_relevant { "*" } else { "" };
            write!(f, "{:<16}", format!("{}{mark}", q.query_id))?;
            for m in &self.metrics {
                write!(f, " {:>18.4}", q.values[m])?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<16}", format!("mean (n={})", self.query_count))?;
        for m in &self.metrics {
            write!(f, " {:>18.4}", self.mean.get(m).copied().unwrap_or(0.0))?;
        }
        Ok(())
    }
}
