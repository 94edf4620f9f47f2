//! BEIR-format dataset loading and TREC run-file IO.
//!
//! Corpus and queries are JSONL with `_id`, optional `title` and `text`
//! fields; qrels are a TSV with a `query-id corpus-id score` header. Run
//! files use the six-column TREC layout `qid Q0 docid rank score tag`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scored::{ScoredDoc, ScoredList};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate id `{id}`")]
    DuplicateId { id: String },
    #[error("run for query `{query_id}` is not sorted by descending score")]
    UnsortedRun { query_id: String },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self::Malformed {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: Option<&str>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.map(str::to_owned),
            text: text.into(),
        }
    }

    /// `title + " " + text`, or just the text when there is no title.
    pub fn full_text(&self) -> String {
        match self.title.as_deref() {
            Some(title) if !title.is_empty() => format!("{title} {}", self.text),
            _ => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Documents by id, remembering insertion order.
#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self, CorpusError> {
        let mut store = Self::new();
        for doc in docs {
            store.insert(doc)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, doc: Document) -> Result<(), CorpusError> {
        if self.by_id.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateId { id: doc.id });
        }
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents in insertion order.
    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::malformed(path, line_no, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<DocumentStore, CorpusError> {
    let path = path.as_ref();
    let docs: Vec<Document> = parse_jsonl(path)?;
    for (i, doc) in docs.iter().enumerate() {
        if doc.id.is_empty() {
            return Err(CorpusError::malformed(path, i + 1, "empty `_id`"));
        }
    }
    DocumentStore::from_documents(docs)
}

pub fn write_corpus(store: &DocumentStore, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in store.iter() {
        let line = serde_json::to_string(doc).expect("document serializes");
        writeln!(out, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, CorpusError> {
    let path = path.as_ref();
    let queries: Vec<Query> = parse_jsonl(path)?;
    let mut seen = HashMap::new();
    for (i, q) in queries.iter().enumerate() {
        if q.text.trim().is_empty() {
            return Err(CorpusError::malformed(
                path,
                i + 1,
                format!("query `{}` has empty text", q.id),
            ));
        }
        if seen.insert(q.id.as_str(), i).is_some() {
            return Err(CorpusError::DuplicateId { id: q.id.clone() });
        }
    }
    Ok(queries)
}

/// Graded relevance judgments. A missing (query, doc) pair is grade 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
    warnings: Vec<String>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous grade when the pair was already judged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.judgments
            .entry(query_id.to_owned())
            .or_default()
            .insert(doc_id.to_owned(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels, CorpusError> {
    let path = path.as_ref();
    let mut qrels = Qrels::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if line_no == 1 && fields[0] == "query-id" {
            continue;
        }
        if fields.len() != 3 {
            return Err(CorpusError::malformed(
                path,
                line_no,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        let raw: i64 = fields[2]
            .parse()
            .map_err(|_| CorpusError::malformed(path, line_no, format!("score `{}` is not an integer", fields[2])))?;
        let grade = if raw < 0 {
            qrels.warnings.push(format!(
                "line {line_no}: negative grade {raw} for ({}, {}) treated as 0",
                fields[0], fields[1]
            ));
            0
        } else {
            u32::try_from(raw).map_err(|_| CorpusError::malformed(path, line_no, "score out of range"))?
        };
        if let Some(prev) = qrels.insert(fields[0], fields[1], grade) {
            qrels.warnings.push(format!(
                "line {line_no}: duplicate judgment ({}, {}) overwrites grade {prev} with {grade}",
                fields[0], fields[1]
            ));
        }
    }
    Ok(qrels)
}

/// Writes a TREC run file. Queries are emitted in key order, ranks start at 1.
pub fn write_run(results: &BTreeMap<String, ScoredList>, tag: &str, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    for (qid, list) in results {
        if !list.is_sorted() {
            return Err(CorpusError::UnsortedRun { query_id: qid.clone() });
        }
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (qid, list) in results {
        for (i, entry) in list.iter().enumerate() {
            writeln!(out, "{qid} Q0 {} {} {:.6} {tag}", entry.doc_id, i + 1, entry.score)
                .map_err(|e| CorpusError::io(path, e))?;
        }
    }
    out.flush().map_err(|e| CorpusError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLine {
    pub query_id: String,
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
    pub tag: String,
}

/// Parses a TREC run file, preserving line order.
pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RunLine>, CorpusError> {
    let path = path.as_ref();
    let mut lines = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(CorpusError::malformed(
                path,
                line_no,
                format!("expected 6 columns, found {}", fields.len()),
            ));
        }
        let rank = fields[3]
            .parse()
            .map_err(|_| CorpusError::malformed(path, line_no, format!("bad rank `{}`", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| CorpusError::malformed(path, line_no, format!("bad score `{}`", fields[4])))?;
        if !score.is_finite() {
            return Err(CorpusError::malformed(path, line_no, "score is not finite"));
        }
        lines.push(RunLine {
            query_id: fields[0].to_owned(),
            doc_id: fields[2].to_owned(),
            rank,
            score,
            tag: fields[5].to_owned(),
        });
    }
    Ok(lines)
}

/// Groups run lines per query, ordered by descending score then ascending
/// rank, dropping repeated doc ids.
pub fn group_run(lines: &[RunLine]) -> BTreeMap<String, ScoredList> {
    let mut grouped: BTreeMap<String, Vec<&RunLine>> = BTreeMap::new();
    for line in lines {
        grouped.entry(line.query_id.clone()).or_default().push(line);
    }
    grouped
        .into_iter()
        .map(|(qid, mut rows)| {
            rows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.rank.cmp(&b.rank)));
            let mut seen = std::collections::HashSet::new();
            let list = rows
                .into_iter()
                .filter(|r| seen.insert(r.doc_id.as_str()))
                .map(|r| ScoredDoc::new(r.doc_id.clone(), r.score))
                .collect();
            (qid, list)
        })
        .collect()
}
