//! Prompt templates for the relevance, rewrite and re-rank calls.
//!
//! Templates live under `assets/prompts/` as versioned text files with
//! `{slot}` placeholders. Rendering is a single left-to-right pass, so slot
//! values that themselves contain braces are never re-expanded. The same
//! templates are matched in reverse by [`classify`], which the mock backend
//! uses to recognise what it is being asked.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::gateway::{ChatMessage, ChatRequest, Role};

pub const TEMPLATE_VERSION: u32 = 1;

const ASSISTANT_SYSTEM: &str = include_str!("../assets/prompts/assistant_system_v1.txt");
const RELEVANCE: &str = include_str!("../assets/prompts/relevance_v1.txt");
const REWRITE: &str = include_str!("../assets/prompts/rewrite_v1.txt");
const REWRITE_ROUND: &str = include_str!("../assets/prompts/rewrite_round_v1.txt");
const REWRITE_ITEM: &str = include_str!("../assets/prompts/rewrite_item_v1.txt");
const RERANK: &str = include_str!("../assets/prompts/rerank_v1.txt");

struct RerankTemplates {
    system: String,
    intro: String,
    handshake: String,
    passage: String,
    received: String,
    instruction: String,
}

fn rerank_templates() -> &'static RerankTemplates {
    static CELL: OnceLock<RerankTemplates> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut sections: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut current = None;
        for line in RERANK.lines() {
            if let Some(name) = line.strip_prefix("@@ ") {
                current = Some(name.trim());
                sections.entry(name.trim()).or_default();
            } else if let Some(name) = current {
                sections.get_mut(name).unwrap().push(line);
            }
        }
        let take = |name: &str| {
            sections
                .get(name)
                .unwrap_or_else(|| panic!("rerank template lacks section `{name}`"))
                .join("\n")
        };
        RerankTemplates {
            system: take("system"),
            intro: take("intro"),
            handshake: take("handshake"),
            passage: take("passage"),
            received: take("received"),
            instruction: take("instruction"),
        }
    })
}

/// Substitutes `{name}` slots. Unknown slots are left verbatim.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match slots.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        out.push(Piece::Literal(&rest[..open]));
        out.push(Piece::Slot(&rest[open + 1..open + close]));
        rest = &rest[open + close + 1..];
    }
    out.push(Piece::Literal(rest));
    out
}

/// Inverse of [`fill`]: recovers slot values, each taken up to the first
/// occurrence of the literal that follows it.
pub fn match_template<'t>(template: &str, text: &'t str) -> Option<HashMap<String, &'t str>> {
    let pieces = pieces(template);
    let mut values = HashMap::new();
    let mut rest = text;
    let mut i = 0;
    while i < pieces.len() {
        match pieces[i] {
            Piece::Literal(lit) => {
                rest = rest.strip_prefix(lit)?;
                i += 1;
            }
            Piece::Slot(name) => {
                let next = match pieces.get(i + 1) {
                    Some(Piece::Literal(lit)) => *lit,
                    _ => "",
                };
                let end = if next.is_empty() { rest.len() } else { rest.find(next)? };
                values.insert(name.to_owned(), &rest[..end]);
                rest = &rest[end..];
                i += 1;
            }
        }
    }
    rest.is_empty().then_some(values)
}

/// Collapses runs of whitespace into single spaces and trims.
pub fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keeps at most `budget` characters.
pub fn truncate_chars(text: &str, budget: usize) -> &str {
    match text.char_indices().nth(budget) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

pub fn assistant_system() -> &'static str {
    ASSISTANT_SYSTEM
}

pub fn relevance_user(query: &str, document: &str) -> String {
    fill(RELEVANCE, &[("query", &single_line(query)), ("document", document)])
}

/// A rendered rewrite round: the query that was issued and its feedback
/// documents, already truncated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundView {
    pub query: String,
    pub documents: Vec<String>,
}

pub fn rewrite_user(topic: &str, rounds: &[RoundView]) -> String {
    let mut out = fill(REWRITE, &[("topic", &single_line(topic))]);
    for (i, round) in rounds.iter().enumerate() {
        out.push_str("\n\n");
        out.push_str(&fill(
            REWRITE_ROUND,
            &[("index", &(i + 1).to_string()), ("query", &single_line(&round.query))],
        ));
        for (j, doc) in round.documents.iter().enumerate() {
            out.push_str("\n\n");
            out.push_str(&fill(
                REWRITE_ITEM,
                &[("rank", &(j + 1).to_string()), ("document", &single_line(doc))],
            ));
        }
    }
    out
}

pub fn rerank_messages(query: &str, passages: &[String]) -> Vec<ChatMessage> {
    let t = rerank_templates();
    let count = passages.len().to_string();
    let mut messages = vec![
        ChatMessage::new(Role::System, t.system.clone()),
        ChatMessage::new(
            Role::User,
            fill(&t.intro, &[("count", &count), ("query", &single_line(query))]),
        ),
        ChatMessage::new(Role::Assistant, t.handshake.clone()),
    ];
    for (i, passage) in passages.iter().enumerate() {
        let index = (i + 1).to_string();
        messages.push(ChatMessage::new(
            Role::User,
            fill(&t.passage, &[("index", &index), ("passage", &single_line(passage))]),
        ));
        messages.push(ChatMessage::new(
            Role::Assistant,
            fill(&t.received, &[("index", &index)]),
        ));
    }
    messages.push(ChatMessage::new(Role::User, fill(&t.instruction, &[("count", &count)])));
    messages
}

/// What a request is asking for, recovered from its rendered text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptKind {
    Relevance { query: String, document: String },
    Rewrite { topic: String, rounds: Vec<RoundView> },
    Rerank { query: String, passages: Vec<String> },
}

pub fn classify(request: &ChatRequest) -> Option<PromptKind> {
    let messages = &request.messages;
    let system = messages.first().filter(|m| m.role == Role::System)?;
    if system.content == rerank_templates().system {
        return classify_rerank(messages);
    }
    if system.content != ASSISTANT_SYSTEM || messages.len() != 2 || messages[1].role != Role::User {
        return None;
    }
    let user = messages[1].content.as_str();
    if let Some(v) = match_template(RELEVANCE, user) {
        return Some(PromptKind::Relevance {
            query: v["query"].to_owned(),
            document: v["document"].to_owned(),
        });
    }
    classify_rewrite(user)
}

fn classify_rewrite(user: &str) -> Option<PromptKind> {
    let (head, _) = REWRITE.split_once("{topic}")?;
    let body = user.strip_prefix(head)?;
    let round_head = REWRITE_ROUND.split_once("{index}")?.0;
    let marker = format!("\n\n{round_head}");
    let mut chunks = body.split(marker.as_str());
    let topic = chunks.next()?.to_owned();
    let mut rounds = Vec::new();
    for (i, chunk) in chunks.enumerate() {
        let mut parts = chunk.split("\n\n");
        let header = format!("{round_head}{}", parts.next()?);
        let header = format!("{header}\n\n{}", parts.next()?);
        let v = match_template(REWRITE_ROUND, &header)?;
        if v["index"] != (i + 1).to_string() {
            return None;
        }
        let mut documents = Vec::new();
        for (j, item) in parts.enumerate() {
            let d = match_template(REWRITE_ITEM, item)?;
            if d["rank"] != (j + 1).to_string() {
                return None;
            }
            documents.push(d["document"].to_owned());
        }
        rounds.push(RoundView {
            query: v["query"].to_owned(),
            documents,
        });
    }
    Some(PromptKind::Rewrite { topic, rounds })
}

fn classify_rerank(messages: &[ChatMessage]) -> Option<PromptKind> {
    let t = rerank_templates();
    if messages.len() < 4 || (messages.len() - 4) % 2 != 0 {
        return None;
    }
    let intro = match_template(&t.intro, &messages[1].content)?;
    let count: usize = intro["count"].parse().ok()?;
    let query = intro["query"].to_owned();
    let mut passages = Vec::new();
    for (i, pair) in messages[3..messages.len() - 1].chunks(2).enumerate() {
        let p = match_template(&t.passage, &pair[0].content)?;
        if pair[0].role != Role::User || p["index"] != (i + 1).to_string() {
            return None;
        }
        passages.push(p["passage"].to_owned());
    }
    (passages.len() == count).then_some(PromptKind::Rerank { query, passages })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {x} b {y}", &[("x", "{y}"), ("y", "2")]), "a {y} b 2");
        assert_eq!(fill("{unknown} {x", &[("x", "1")]), "{unknown} {x");
    }

    #[test]
    fn match_inverts_fill() {
        let t = "QUERY: {query}\n\nDOCUMENT: {document}";
        let text = fill(t, &[("query", "diet soda"), ("document", "a\n\nb")]);
        let v = match_template(t, &text).unwrap();
        assert_eq!(v["query"], "diet soda");
        assert_eq!(v["document"], "a\n\nb");
        assert!(match_template(t, "nope").is_none());
    }

    #[test]
    fn truncation_counts_chars() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("hi", 10), "hi");
    }

    #[test]
    fn classify_round_trips() {
        let req = ChatRequest::new(
            "m",
            vec![
                ChatMessage::new(Role::System, assistant_system()),
                ChatMessage::new(Role::User, relevance_user("q  text", "T body")),
            ],
        );
        assert_eq!(
            classify(&req),
            Some(PromptKind::Relevance {
                query: "q text".into(),
                document: "T body".into()
            })
        );

        let rounds = vec![
            RoundView {
                query: "first".into(),
                documents: vec!["doc a".into(), "doc b".into()],
            },
            RoundView {
                query: "second".into(),
                documents: vec![],
            },
        ];
        let req = ChatRequest::new(
            "m",
            vec![
                ChatMessage::new(Role::System, assistant_system()),
                ChatMessage::new(Role::User, rewrite_user("topic", &rounds)),
            ],
        );
        assert_eq!(
            classify(&req),
            Some(PromptKind::Rewrite {
                topic: "topic".into(),
                rounds
            })
        );

        let passages = vec!["p one".to_owned(), "p two".to_owned()];
        let req = ChatRequest::new("m", rerank_messages("q", &passages));
        assert_eq!(
            classify(&req),
            Some(PromptKind::Rerank {
                query: "q".into(),
                passages
            })
        );
    }
}
