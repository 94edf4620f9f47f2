use std::path::PathBuf;
use std::sync::Arc;

use looprank_core::corpus::Document;
use looprank_core::gateway::{BackendError, BackendReply, ChatRequest, Gateway, Role};
use looprank_core::prompts::{classify, PromptKind};
use looprank_core::relevance::relevance_request;
use looprank_core::reranker::rerank_request;
use looprank_core::rewriter::{feedback_text, RewriteHistory, Rewriter};

const TOPIC: &str = "does diet soda cause weight gain";

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn unused_gateway() -> Gateway {
    Gateway::ephemeral(Arc::new(|_: &ChatRequest| -> Result<BackendReply, BackendError> {
        panic!("rendering must not call the backend")
    }))
}

fn feedback(texts: &[(&str, &str)]) -> Vec<String> {
    texts
        .iter()
        .map(|(title, body)| feedback_text(&Document::new("x", Some(title), *body), 1000))
        .collect()
}

fn first_round() -> Vec<String> {
    feedback(&[
        ("Diet soda", "sales rose in 2010."),
        ("Sugar-free drinks", "and body weight: a cohort study."),
        ("Soda taxes", "and consumption."),
    ])
}

#[test]
fn relevance_prompt_matches_golden() {
    let doc = Document::new(
        "d1",
        Some("Artificial sweeteners."),
        "Studies link aspartame intake to appetite changes.",
    );
    let req = relevance_request("gpt-3.5-turbo", TOPIC, &doc.full_text());
    assert_eq!(req.transcript(), golden("relevance.txt"));
    assert_eq!(req.messages.len(), 2);
    assert_eq!(req.temperature, 0.0);
}

#[test]
fn rewrite_prompt_matches_golden_after_one_round() {
    let gw = unused_gateway();
    let mut history = RewriteHistory::new(TOPIC, 5);
    history.append_round(TOPIC, first_round()).unwrap();
    let req = Rewriter::new(&gw, "gpt-4").render_prompt(&history).unwrap();
    assert_eq!(req.transcript(), golden("rewrite_one_round.txt"));
    assert_eq!(req.max_output_tokens, Some(20));
}

#[test]
fn rewrite_prompt_matches_golden_after_two_rounds() {
    let gw = unused_gateway();
    let mut history = RewriteHistory::new(TOPIC, 5);
    history.append_round(TOPIC, first_round()).unwrap();
    history
        .append_round(
            "artificial sweeteners and weight gain",
            feedback(&[("Aspartame", "and appetite\nregulation.")]),
        )
        .unwrap();
    let req = Rewriter::new(&gw, "gpt-4").render_prompt(&history).unwrap();
    assert_eq!(req.transcript(), golden("rewrite_two_rounds.txt"));

    let one = {
        let mut h = RewriteHistory::new(TOPIC, 5);
        h.append_round(TOPIC, first_round()).unwrap();
        Rewriter::new(&gw, "gpt-4").render_prompt(&h).unwrap()
    };
    assert!(req.messages[1].content.starts_with(&one.messages[1].content));
}

#[test]
fn rewrite_prompt_with_no_feedback() {
    let gw = unused_gateway();
    let mut history = RewriteHistory::new(TOPIC, 5);
    history.append_round(TOPIC, Vec::new()).unwrap();
    let req = Rewriter::new(&gw, "gpt-4").render_prompt(&history).unwrap();
    assert_eq!(req.transcript(), golden("rewrite_empty_round.txt"));
}

#[test]
fn rerank_prompt_matches_golden() {
    let passages = vec![
        "Diet soda sales rose in 2010.".to_owned(),
        "Aspartame and appetite regulation.".to_owned(),
        "Soda taxes and consumption.".to_owned(),
    ];
    let req = rerank_request("gpt-4", TOPIC, &passages);
    assert_eq!(req.transcript(), golden("rerank_three.txt"));
    let roles: Vec<Role> = req.messages.iter().map(|m| m.role).collect();
    assert_eq!(roles.len(), 3 + 2 * passages.len() + 1);
    assert_eq!(&roles[..3], &[Role::System, Role::User, Role::Assistant]);
    assert_eq!(
        classify(&req),
        Some(PromptKind::Rerank {
            query: TOPIC.to_owned(),
            passages
        })
    );
}
