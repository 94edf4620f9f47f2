//! `looprank` command-line driver.
//!
//! Exit status is 0 on success, 1 on usage or I/O errors and 2 when every
//! query of a run failed because the language-model backend stayed
//! unavailable.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use looprank_core::corpus::{load_corpus, load_qrels, load_queries, write_run};
use looprank_core::evaluation::{evaluate, evaluate_run, parse_metrics, Metric};
use looprank_core::gateway::{
    CallCache, ChatBackend, CostReport, Gateway, MockBackend, MockRules, OpenAiBackend, Pricing, DEFAULT_API_BASE,
    ENV_API_BASE, ENV_API_KEY, ENV_API_KEY_FALLBACK,
};
use looprank_core::pipeline::{
    read_traces, run_batch, usage_from_calls, write_traces, BatchResult, Components, FeedbackSource, RelevanceTarget,
};
use looprank_core::sparse_index::{build_index, IndexParams, InvertedIndex};

use crate::config::{BackendKind, CliConfig};

#[derive(Parser)]
#[command(name = "looprank", version, about = "Iterative rewrite, retrieve and re-rank search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a BEIR-style corpus.jsonl.
    Index(IndexArgs),
    /// Run the pipeline over a query set.
    Run(RunArgs),
    /// Score a TREC run file against qrels.
    Eval(EvalArgs),
    /// Summarise token usage and cost from a traces file.
    Cost(CostArgs),
    /// Print the per-iteration history recorded in a traces file.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    #[arg(long)]
    no_stem: bool,
    #[arg(long)]
    no_stopwords: bool,
    /// Overwrite an existing index file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave retrieved documents out of the rewrite prompt.
    #[arg(long)]
    no_feedback: bool,
    #[arg(long, value_parser = parse_feedback_source)]
    feedback_source: Option<FeedbackSource>,
    #[arg(long, value_parser = parse_relevance_target)]
    relevance_target: Option<RelevanceTarget>,
    #[arg(long)]
    max_rewrites: Option<usize>,
    /// Output the relevance ordering without the final re-rank.
    #[arg(long)]
    no_rerank: bool,
    /// Queries run concurrently; overrides `[backend] parallelism`.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value = "ndcg@10,recall@100")]
    metrics: String,
    /// Divide recall by min(|relevant|, k).
    #[arg(long)]
    capped: bool,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Read `[pricing]` from this config instead of the built-in rates.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Only this query.
    #[arg(long)]
    query: Option<String>,
}

fn parse_feedback_source(s: &str) -> Result<FeedbackSource, String> {
    match s {
        "retriever" => Ok(FeedbackSource::Retriever),
        "relevance" => Ok(FeedbackSource::Relevance),
        _ => Err(format!("expected `retriever` or `relevance`, got `{s}`")),
    }
}

fn parse_relevance_target(s: &str) -> Result<RelevanceTarget, String> {
    match s {
        "original" => Ok(RelevanceTarget::Original),
        "rewrite" => Ok(RelevanceTarget::Rewrite),
        _ => Err(format!("expected `original` or `rewrite`, got `{s}`")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Index(args) => cmd_index(args).map(|()| ExitCode::SUCCESS),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args).map(|()| ExitCode::SUCCESS),
        Command::Cost(args) => cmd_cost(args).map(|()| ExitCode::SUCCESS),
        Command::Replay(args) => cmd_replay(args).map(|()| ExitCode::SUCCESS),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    if args.index.exists() && !args.force {
        bail!("{} already exists; pass --force to overwrite", args.index.display());
    }
    let params = IndexParams {
        k1: args.k1,
        b: args.b,
        stemming: !args.no_stem,
        stopwords: !args.no_stopwords,
    };
    let store = load_corpus(&args.corpus)?;
    let index = build_index(&store, params)?;
    index.save(&args.index)?;
    println!(
        "indexed {} documents, {} terms, avgdl {:.2} -> {}",
        index.doc_count(),
        index.terms().count(),
        index.avg_doc_length(),
        args.index.display()
    );
    Ok(())
}

fn make_backend(config: &CliConfig) -> Result<Arc<dyn ChatBackend>> {
    match config.backend.kind {
        BackendKind::Mock => {
            let path = config.backend.mock_rules.as_ref().expect("validated");
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let rules = MockRules::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            Ok(Arc::new(MockBackend::new(rules)))
        }
        BackendKind::Http => {
            let timeout = Duration::from_secs(config.backend.timeout_secs);
            let base = config
                .backend
                .api_base
                .clone()
                .or_else(|| std::env::var(ENV_API_BASE).ok())
                .unwrap_or_else(|| DEFAULT_API_BASE.to_owned());
            let key = std::env::var(ENV_API_KEY)
                .or_else(|_| std::env::var(ENV_API_KEY_FALLBACK))
                .ok();
            let backend = OpenAiBackend::new(base, key, timeout);
            if !backend.has_key() {
                log::warn!("no API key in the environment; requests are sent unauthenticated");
            }
            Ok(Arc::new(backend))
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut config = CliConfig::load(&args.config)?;
    if let Some(out) = args.out {
        config.output.dir = out;
    }
    let p = &mut config.pipeline;
    if args.no_feedback {
        p.feedback_enabled = false;
    }
    if let Some(source) = args.feedback_source {
        p.feedback_source = source;
    }
    if let Some(target) = args.relevance_target {
        p.relevance_target = target;
    }
    if let Some(m) = args.max_rewrites {
        p.max_rewrites = m;
    }
    if args.no_rerank {
        p.final_rerank = false;
    }
    if let Some(n) = args.parallelism {
        config.backend.parallelism = n;
    }
    config.validate()?;

    let store = load_corpus(&config.dataset.corpus)?;
    let queries = load_queries(&config.dataset.queries)?;
    let index = match &config.index.path {
        Some(path) => {
            let index = InvertedIndex::load(path)?;
            if index.doc_count() != store.len() {
                bail!(
                    "{} holds {} documents but the corpus has {}; rebuild it",
                    path.display(),
                    index.doc_count(),
                    store.len()
                );
            }
            index
        }
        None => build_index(&store, config.index.params())?,
    };
    let cache = match &config.backend.cache {
        Some(path) => CallCache::open(path)?,
        None => CallCache::in_memory(),
    };
    let gateway = Gateway::new(make_backend(&config)?, cache, config.retry_policy());
    let components = Components {
        retriever: &index,
        store: &store,
        gateway: &gateway,
    };

    log::info!("running {} queries", queries.len());
    let batch = run_batch(&queries, &config.pipeline, components, config.backend.parallelism);

    let out = &config.output.dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_run(&batch.results, &config.output.tag, out.join("run.trec"))?;
    write_traces(out.join("traces.jsonl"), &batch.traces)
        .with_context(|| format!("writing {}", out.join("traces.jsonl").display()))?;
    let pricing = config.pricing();
    let report = gateway.ledger().report(&pricing);
    write_json(&out.join("ledger.json"), &report)?;
    write_json(&out.join("errors.json"), &errors_json(&batch))?;

    if let Some(qrels_path) = &config.dataset.qrels {
        let qrels = load_qrels(qrels_path)?;
        let metrics: Vec<Metric> = config
            .dataset
            .metrics
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_, _>>()?;
        let report = evaluate(&batch.results, &qrels, &metrics, config.dataset.capped_recall);
        write_json(&out.join("metrics.json"), &report)?;
        println!("{report}");
    }
    println!("{report}");
    for e in &batch.errors {
        eprintln!("query {} failed: {}", e.query_id, e.message);
    }
    println!(
        "{} of {} queries completed; outputs in {}",
        batch.results.len(),
        queries.len(),
        out.display()
    );
    if batch.all_exhausted() {
        eprintln!("every query failed: language-model backend unavailable");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn errors_json(batch: &BatchResult) -> serde_json::Value {
    batch
        .errors
        .iter()
        .map(|e| {
            serde_json::json!({
                "query_id": e.query_id,
                "message": e.message,
                "backend_exhausted": e.exhaustion,
            })
        })
        .collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let metrics = parse_metrics(&args.metrics)?;
    if metrics.is_empty() {
        bail!("no metrics given");
    }
    let qrels = load_qrels(&args.qrels)?;
    for w in qrels.warnings() {
        log::warn!("{w}");
    }
    let report = evaluate_run(&args.run, &qrels, &metrics, args.capped)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    Ok(())
}

fn cmd_cost(args: CostArgs) -> Result<()> {
    let traces = read_traces(&args.trace).with_context(|| format!("reading {}", args.trace.display()))?;
    let pricing = match &args.config {
        Some(path) => CliConfig::load(path)?.pricing(),
        None => Pricing::default(),
    };
    let usage = usage_from_calls(traces.iter().flat_map(|t| t.calls()));
    let report = CostReport::from_usage(&usage, &pricing);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
        if !traces.is_empty() {
            println!(
                "{} queries, {:.4} USD per query (before cache savings)",
                traces.len(),
                report.total_usd / traces.len() as f64
            );
        }
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let traces = read_traces(&args.trace).with_context(|| format!("reading {}", args.trace.display()))?;
    let mut shown = 0;
    for t in traces
        .iter()
        .filter(|t| args.query.as_ref().is_none_or(|q| *q == t.query_id))
    {
        shown += 1;
        println!("query {}: {}", t.query_id, t.query);
        for it in &t.iterations {
            let repeat = it.repeat_of.map(|r| format!(" (repeat of {r})")).unwrap_or_default();
            println!("  [{}] {}{repeat}", it.index, it.query);
            println!(
                "      retrieved {}, kept {}, dropped {}, duplicates {}, accumulated {}",
                it.retrieved.len(),
                it.filtered.kept.len(),
                it.filtered.dropped.len(),
                it.duplicates.len(),
                it.accumulated
            );
            if !it.feedback.is_empty() {
                println!("      feedback {}", it.feedback.join(" "));
            }
            if let Some(r) = &it.rewrite {
                println!("      rewrite -> {r}");
            }
        }
        println!("  termination: {:?}", t.termination);
        let head = |ids: &[String]| ids.iter().take(10).cloned().collect::<Vec<_>>().join(" ");
        println!("  relevance order: {}", head(&t.pre_rerank));
        if let Some(post) = &t.post_rerank {
            println!("  re-ranked:       {}", head(post));
        }
        let calls: BTreeMap<&str, u64> = t.usage.iter().map(|(m, u)| (m.as_str(), u.calls)).collect();
        println!("  calls: {calls:?}");
        for w in &t.warnings {
            println!("  warning: {w}");
        }
        if let Some(e) = &t.error {
            println!("  error: {e}");
        }
    }
    if shown == 0 {
        bail!("no matching traces in {}", args.trace.display());
    }
    Ok(())
}
