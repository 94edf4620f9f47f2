mod common;

use std::sync::Arc;

use looprank_core::corpus::{Document, DocumentStore};
use looprank_core::gateway::{Gateway, GradeEntry, GradeRule, MockBackend, MockRules};
use looprank_core::relevance::{JudgedDoc, RelevanceModel};
use looprank_core::ScoredList;
use proptest::prelude::*;

/// Each document carries a hidden grade token `gradeN`.
fn setup(grades: &[u8]) -> (DocumentStore, ScoredList, Gateway) {
    let store = DocumentStore::from_documents(
        grades
            .iter()
            .enumerate()
            .map(|(i, g)| Document::new(format!("d{i:02}"), None, format!("text grade{g}"))),
    )
    .unwrap();
    let entries = (1..=5u8)
        .map(|g| GradeEntry {
            needle: format!("grade{g}"),
            grade: g,
            query: None,
        })
        .collect();
    let rules = MockRules {
        relevance: Some(GradeRule::Keyed { entries, default: 1 }),
        ..MockRules::default()
    };
    let retrieved = ScoredList::from_ranked_ids((0..grades.len()).map(|i| format!("d{i:02}")));
    (store, retrieved, Gateway::ephemeral(Arc::new(MockBackend::new(rules))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn filter_partitions_the_retrieved_list(grades in prop::collection::vec(1u8..=5, 0..40), tau in 1u8..=5) {
        let (store, retrieved, gw) = setup(&grades);
        let model = RelevanceModel::new(&gw, &store, "cheap").with_parallelism(4);
        let (filtered, calls) = model.filter("q", &retrieved, tau).unwrap();
        prop_assert_eq!(calls.len(), grades.len());
        prop_assert_eq!(filtered.kept.len() + filtered.dropped.len(), grades.len());
        let expected: Vec<String> = grades
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > tau)
            .map(|(i, _)| format!("d{i:02}"))
            .collect();
        let kept: Vec<String> = filtered.kept.iter().map(|d| d.doc_id.clone()).collect();
        prop_assert_eq!(kept, expected);
        prop_assert!(filtered.dropped.iter().all(|d| d.grade.is_some_and(|g| g <= tau)));

        // a second pass is served from the memo
        let (again, calls) = model.filter("q", &retrieved, tau).unwrap();
        prop_assert_eq!(again, filtered);
        prop_assert!(calls.is_empty());
    }

    #[test]
    fn ranking_matches_the_oracle_sort(grades in prop::collection::vec(1u8..=5, 0..40)) {
        let (store, retrieved, gw) = setup(&grades);
        let model = RelevanceModel::new(&gw, &store, "cheap");
        let docs: Vec<JudgedDoc> = retrieved
            .iter()
            .map(|e| JudgedDoc { doc_id: e.doc_id.clone(), retrieval_score: e.score, grade: 0 })
            .collect();
        let ranked = model.rank_by_relevance("q", &docs).unwrap();
        let got: Vec<String> = ranked.docs.iter().map(|d| d.doc_id.clone()).collect();
        // ties on grade fall back to retrieval order, which equals id order here
        let items: Vec<(String, u8)> = retrieved.ids().map(str::to_owned).zip(grades.iter().copied()).collect();
        prop_assert_eq!(got, common::oracle_sort(&items));
    }
}
