use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use looprank_core::corpus::{Document, DocumentStore, Query};
use looprank_core::evaluation::recall_at_k;
use looprank_core::gateway::{
    CallCache, Gateway, GradeEntry, GradeRule, MockBackend, MockRules, RetryPolicy, RewriteRule,
};
use looprank_core::pipeline::{run_batch, run_query, Components, PipelineConfig, Termination};
use looprank_core::sparse_index::{IndexParams, InvertedIndex};
use looprank_core::synthetic::LexicalGapCorpus;
use proptest::prelude::*;

fn gateway(backend: &Arc<MockBackend>) -> Gateway {
    Gateway::new(backend.clone(), CallCache::in_memory(), RetryPolicy::immediate(2))
}

fn uniform(grade: u8) -> GradeRule {
    GradeRule::Keyed {
        entries: Vec::new(),
        default: grade,
    }
}

fn alpha_store(n: usize) -> DocumentStore {
    DocumentStore::from_documents(
        (0..n).map(|i| Document::new(format!("a{i:02}"), None, format!("alpha beta item{i}"))),
    )
    .unwrap()
}

#[test]
fn every_doc_relevant_fills_in_one_iteration() {
    let store = alpha_store(20);
    let index = InvertedIndex::build(&store, IndexParams::default()).unwrap();
    let backend = Arc::new(MockBackend::new(MockRules {
        relevance: Some(uniform(5)),
        rerank: Some(uniform(5)),
        rewrite: Some(RewriteRule::Substitution { words: BTreeMap::new() }),
        fail_on: Vec::new(),
    }));
    let gw = gateway(&backend);
    let config = PipelineConfig {
        n: 10,
        ..Default::default()
    };
    let c = Components {
        retriever: &index,
        store: &store,
        gateway: &gw,
    };
    let (out, trace) = run_query(&Query::new("q", "alpha"), &config, c).unwrap();
    assert_eq!(trace.iterations.len(), 1);
    assert_eq!(trace.rewrites().count(), 0);
    assert_eq!(trace.termination, Termination::Filled);
    assert_eq!(out.ranked.len(), 10);
    assert_eq!(backend.counters().rewrite, 0);
}

#[test]
fn nothing_relevant_exhausts_the_rewrite_budget() {
    let store = alpha_store(20);
    let index = InvertedIndex::build(&store, IndexParams::default()).unwrap();
    let backend = Arc::new(MockBackend::new(MockRules {
        relevance: Some(uniform(1)),
        rerank: Some(uniform(1)),
        rewrite: Some(RewriteRule::Scripted {
            scripts: BTreeMap::from([(
                "alpha".to_owned(),
                vec!["beta".into(), "item1".into(), "item2".into(), "item3".into()],
            )]),
            raw: false,
        }),
        fail_on: Vec::new(),
    }));
    let gw = gateway(&backend);
    let config = PipelineConfig {
        n: 10,
        max_rewrites: 5,
        ..Default::default()
    };
    let c = Components {
        retriever: &index,
        store: &store,
        gateway: &gw,
    };
    let (out, trace) = run_query(&Query::new("q", "alpha"), &config, c).unwrap();
    assert_eq!(trace.iterations.len(), 5);
    assert_eq!(trace.termination, Termination::MaxRewrites);
    let queries: Vec<&str> = trace.iterations.iter().map(|it| it.query.as_str()).collect();
    assert_eq!(queries, ["alpha", "beta", "item1", "item2", "item3"]);
    assert_eq!(trace.rewrites().count(), 4);
    assert!(out.ranked.is_empty());
    assert!(trace.post_rerank.is_none());
}

fn lexical_gap_recall(rules: MockRules, config: &PipelineConfig) -> (f64, usize) {
    let corpus = LexicalGapCorpus::build();
    let index = InvertedIndex::build(&corpus.store, IndexParams::default()).unwrap();
    let backend = Arc::new(MockBackend::new(rules));
    let gw = gateway(&backend);
    let c = Components {
        retriever: &index,
        store: &corpus.store,
        gateway: &gw,
    };
    let (out, trace) = run_query(&corpus.query, config, c).unwrap();
    let ranked: Vec<&str> = out.ranked.ids().collect();
    let judgments = corpus.qrels.for_query(&corpus.query.id).unwrap();
    (recall_at_k(&ranked, judgments, 100, false), trace.iterations.len())
}

#[test]
fn recall_grows_with_the_rewrite_budget() {
    let rules = LexicalGapCorpus::build().scripted_rules();
    let recalls: Vec<f64> = [1, 3, 5]
        .iter()
        .map(|&m| {
            let config = PipelineConfig {
                max_rewrites: m,
                ..Default::default()
            };
            lexical_gap_recall(rules.clone(), &config).0
        })
        .collect();
    assert_eq!(recalls, [0.2, 0.6, 1.0]);
}

#[test]
fn recall_is_monotone_in_the_rewrite_budget() {
    let rules = LexicalGapCorpus::build().feedback_rules();
    let mut prev = 0.0;
    for m in 1..=6 {
        let config = PipelineConfig {
            max_rewrites: m,
            ..Default::default()
        };
        let (r, _) = lexical_gap_recall(rules.clone(), &config);
        assert!(r >= prev, "recall fell from {prev} to {r} at budget {m}");
        prev = r;
    }
}

#[test]
fn feedback_drives_vocabulary_discovery() {
    let rules = LexicalGapCorpus::build().feedback_rules();
    let on = PipelineConfig::default();
    let off = PipelineConfig {
        feedback_enabled: false,
        ..Default::default()
    };
    let (with_feedback, _) = lexical_gap_recall(rules.clone(), &on);
    let (without, iterations) = lexical_gap_recall(rules, &off);
    assert_eq!(with_feedback, 1.0);
    assert_eq!(without, 0.2);
    assert_eq!(iterations, 5);
}

#[test]
fn repeated_rewrite_reuses_earlier_results() {
    let rules = LexicalGapCorpus::build().feedback_rules();
    let corpus = LexicalGapCorpus::build();
    let index = InvertedIndex::build(&corpus.store, IndexParams::default()).unwrap();
    let backend = Arc::new(MockBackend::new(rules));
    let gw = gateway(&backend);
    let c = Components {
        retriever: &index,
        store: &corpus.store,
        gateway: &gw,
    };
    let config = PipelineConfig {
        feedback_enabled: false,
        max_rewrites: 3,
        ..Default::default()
    };
    let (_, trace) = run_query(&corpus.query, &config, c).unwrap();
    assert_eq!(trace.iterations[0].repeat_of, None);
    assert_eq!(trace.iterations[1].repeat_of, Some(1));
    assert!(trace.iterations[1]
        .calls
        .iter()
        .all(|c| c.stage == looprank_core::gateway::Stage::Rewrite));
}

#[test]
fn relevance_calls_never_exceed_unique_pairs() {
    let corpus = LexicalGapCorpus::build();
    let index = InvertedIndex::build(&corpus.store, IndexParams::default()).unwrap();
    let backend = Arc::new(MockBackend::new(corpus.feedback_rules()));
    let gw = gateway(&backend);
    let c = Components {
        retriever: &index,
        store: &corpus.store,
        gateway: &gw,
    };
    let (_, trace) = run_query(&corpus.query, &PipelineConfig::default(), c).unwrap();
    let unique: BTreeSet<&str> = trace.iterations.iter().flat_map(|it| it.retrieved.ids()).collect();
    let retrieved_total: usize = trace.iterations.iter().map(|it| it.retrieved.len()).sum();
    assert!(retrieved_total > unique.len(), "iterations should overlap");
    // identical distractor texts share a prompt, so the cache can go below
    // one call per pair
    assert!(backend.counters().relevance as usize <= unique.len());
    let judged: usize = trace
        .calls()
        .filter(|c| c.stage == looprank_core::gateway::Stage::Relevance)
        .count();
    assert_eq!(judged, unique.len());
}

fn three_query_setup(poison: bool) -> (DocumentStore, Vec<Query>, MockRules) {
    let store = DocumentStore::from_documents([
        Document::new("d1", None, "solar panels convert sunlight"),
        Document::new("d2", None, "wind turbines generate power"),
        Document::new("d3", None, "solar and wind power grids"),
        Document::new("d4", None, "poison ivy rash treatment"),
        Document::new("d5", None, "garden plants and sunlight"),
    ])
    .unwrap();
    let queries = vec![
        Query::new("q1", "solar power"),
        Query::new("q2", "poison ivy"),
        Query::new("q3", "wind turbines"),
    ];
    let rules = MockRules {
        rewrite: Some(RewriteRule::Substitution {
            words: BTreeMap::from([("power".to_owned(), "energy".to_owned())]),
        }),
        fail_on: if poison { vec!["poison".into()] } else { Vec::new() },
        ..MockRules::overlap()
    };
    (store, queries, rules)
}

#[test]
fn failing_query_is_skipped_and_recorded() {
    let (store, queries, rules) = three_query_setup(true);
    let index = InvertedIndex::build(&store, IndexParams::default()).unwrap();
    let backend = Arc::new(MockBackend::new(rules));
    let gw = gateway(&backend);
    let c = Components {
        retriever: &index,
        store: &store,
        gateway: &gw,
    };
    let batch = run_batch(
        &queries,
        &PipelineConfig {
            n: 5,
            ..Default::default()
        },
        c,
        3,
    );
    assert_eq!(batch.results.keys().collect::<Vec<_>>(), ["q1", "q3"]);
    assert_eq!(batch.errors.len(), 1);
    assert_eq!(batch.errors[0].query_id, "q2");
    assert!(batch.errors[0].exhaustion);
    assert!(!batch.all_exhausted());
    assert_eq!(batch.traces.len(), 3);
    assert_eq!(batch.traces[1].termination, Termination::Aborted);

    let empty = run_batch(&[], &PipelineConfig::default(), c, 3);
    assert!(empty.results.is_empty() && empty.errors.is_empty());
}

#[test]
fn batches_are_deterministic() {
    let (store, mut queries, rules) = three_query_setup(false);
    queries.push(Query::new("q4", "solar power"));
    let index = InvertedIndex::build(&store, IndexParams::default()).unwrap();
    let config = PipelineConfig {
        n: 5,
        ..Default::default()
    };
    let run = |parallelism| {
        let backend = Arc::new(MockBackend::new(rules.clone()));
        let gw = gateway(&backend);
        let c = Components {
            retriever: &index,
            store: &store,
            gateway: &gw,
        };
        let batch = run_batch(&queries, &config, c, parallelism);
        let traces: Vec<String> = batch
            .traces
            .iter()
            .map(|t| serde_json::to_string(t).unwrap().replace("\"q4\"", "\"q1\""))
            .collect();
        (batch.results, traces)
    };
    let (a, ta) = run(1);
    let (b, tb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(a["q1"], a["q4"]);
    assert_eq!(ta[0], ta[3]);
}

#[test]
fn no_rerank_returns_relevance_order() {
    let (store, queries, rules) = three_query_setup(false);
    let index = InvertedIndex::build(&store, IndexParams::default()).unwrap();
    let backend = Arc::new(MockBackend::new(rules));
    let gw = gateway(&backend);
    let c = Components {
        retriever: &index,
        store: &store,
        gateway: &gw,
    };
    let config = PipelineConfig {
        n: 5,
        final_rerank: false,
        ..Default::default()
    };
    let (out, trace) = run_query(&queries[0], &config, c).unwrap();
    let ids: Vec<&str> = out.ranked.ids().collect();
    assert_eq!(ids, trace.pre_rerank);
    assert!(trace.post_rerank.is_none());
    assert!(trace
        .calls()
        .all(|c| c.stage != looprank_core::gateway::Stage::RerankCheap));
}

const WORDS: [&str; 8] = ["red", "green", "blue", "cyan", "pink", "gold", "grey", "teal"];

fn random_corpus() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0..WORDS.len(), 1..6), 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn loop_invariants_hold(
        docs in random_corpus(),
        query in prop::collection::vec(0..WORDS.len(), 1..4),
        n in 1usize..12,
        max_rewrites in 1usize..5,
        tau in 1u8..5,
    ) {
        let store = DocumentStore::from_documents(docs.iter().enumerate().map(|(i, ws)| {
            let text: Vec<&str> = ws.iter().map(|&w| WORDS[w]).collect();
            Document::new(format!("d{i}"), None, text.join(" "))
        }))
        .unwrap();
        let index = InvertedIndex::build(&store, IndexParams::default()).unwrap();
        let shift: BTreeMap<String, String> = (0..WORDS.len())
            .map(|i| (WORDS[i].to_owned(), WORDS[(i + 1) % WORDS.len()].to_owned()))
            .collect();
        let rules = MockRules {
            rewrite: Some(RewriteRule::Substitution { words: shift }),
            ..MockRules::overlap()
        };
        let backend = Arc::new(MockBackend::new(rules.clone()));
        let gw = gateway(&backend);
        let c = Components { retriever: &index, store: &store, gateway: &gw };
        let config = PipelineConfig { n, max_rewrites, tau, ..Default::default() };
        let text: Vec<&str> = query.iter().map(|&w| WORDS[w]).collect();
        let q = Query::new("q", text.join(" "));
        let (out, trace) = run_query(&q, &config, c).unwrap();

        prop_assert!(trace.iterations.len() <= max_rewrites);
        prop_assert!(out.ranked.len() <= n);
        let sizes: Vec<usize> = trace.iterations.iter().map(|it| it.accumulated).collect();
        prop_assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        let ids: BTreeSet<&str> = out.ranked.ids().collect();
        prop_assert_eq!(ids.len(), out.ranked.len());
        let grader = rules.relevance.unwrap();
        for id in &ids {
            let doc = store.get(id).unwrap();
            prop_assert!(grader.grade(&q.text, &doc.full_text()) > tau);
        }
        for it in &trace.iterations {
            prop_assert!(it.filtered.kept.iter().all(|d| d.grade > tau));
        }
    }
}

#[test]
fn keyed_needles_can_be_query_specific() {
    let rule = GradeRule::Keyed {
        entries: vec![GradeEntry {
            needle: "x".into(),
            grade: 4,
            query: Some("alpha".into()),
        }],
        default: 1,
    };
    assert_eq!(rule.grade("Alpha query", "x doc"), 4);
    assert_eq!(rule.grade("beta", "x doc"), 1);
}
