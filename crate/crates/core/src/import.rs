//! Converters from public dataset dumps to [`Sample`] JSONL.
//!
//! Inputs may be a JSON array or JSON lines. Supported layouts:
//! - HotpotQA and 2WikiMultiHopQA: `context` is `[[title, [sentence, ...]], ...]`
//!   and `supporting_facts` is `[[title, sentence_index], ...]`.
//! - QASC: `question.stem`, `question.choices[{label, text}]`, `answerKey`,
//!   `fact1`, `fact2`.
//! - WikiHop: `query`, `answer`, `candidates`, `supports`.

use std::str::FromStr;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::model::{validate_sample, Document, Sample};

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("input is neither a JSON array nor JSON lines: {0}")]
    Syntax(String),
    #[error("unknown format `{0}` (expected hotpotqa, 2wiki, qasc or wikihop)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportFormat {
    HotpotQa,
    TwoWiki,
    Qasc,
    WikiHop,
}

impl FromStr for ImportFormat {
    type Err = ImportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hotpotqa" | "hotpot" => Ok(ImportFormat::HotpotQa),
            "2wiki" | "2wikimultihopqa" | "twowiki" => Ok(ImportFormat::TwoWiki),
            "qasc" => Ok(ImportFormat::Qasc),
            "wikihop" => Ok(ImportFormat::WikiHop),
            _ => Err(ImportError::UnknownFormat(s.to_owned())),
        }
    }
}

impl ImportFormat {
    pub fn dataset_id(self) -> &'static str {
        match self {
            ImportFormat::HotpotQa => "hotpotqa",
            ImportFormat::TwoWiki => "2wikimultihopqa",
            ImportFormat::Qasc => "qasc",
            ImportFormat::WikiHop => "wikihop",
        }
    }
}

fn records(text: &str) -> Result<Vec<Value>, ImportError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| ImportError::Syntax(e.to_string()));
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ImportError::Syntax(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Deserialize)]
struct HotpotRecord {
    #[serde(alias = "_id")]
    id: String,
    question: String,
    answer: String,
    context: Vec<(String, Vec<String>)>,
    #[serde(default)]
    supporting_facts: Vec<(String, Value)>,
    #[serde(rename = "type", default)]
    kind: Option<String>,
    #[serde(default)]
    level: Option<String>,
}

#[derive(Deserialize)]
struct QascChoice {
    label: String,
    text: String,
}

#[derive(Deserialize)]
struct QascQuestion {
    stem: String,
    choices: Vec<QascChoice>,
}

#[derive(Deserialize)]
struct QascRecord {
    id: String,
    question: QascQuestion,
    #[serde(rename = "answerKey")]
    answer_key: String,
    fact1: String,
    fact2: String,
}

#[derive(Deserialize)]
struct WikiHopRecord {
    id: String,
    query: String,
    answer: String,
    candidates: Vec<String>,
    supports: Vec<String>,
}

fn hotpot(r: HotpotRecord, dataset: &str) -> Sample {
    let docs: Vec<Document> = r
        .context
        .iter()
        .enumerate()
        .map(|(i, (title, sentences))| {
            Document::new(format!("d{i}"), title.clone(), sentences.concat().trim())
        })
        .collect();
    let supporting: Vec<String> = docs
        .iter()
        .filter(|d| r.supporting_facts.iter().any(|(t, _)| *t == d.title))
        .map(|d| d.doc_id.clone())
        .collect();
    let mut s = Sample::new(r.id, r.question, r.answer)
        .with_contexts(docs)
        .with_supporting(supporting);
    s.source_dataset = dataset.into();
    if let Some(k) = r.kind {
        s.extra.insert("type".into(), Value::String(k));
    }
    if let Some(l) = r.level {
        s.extra.insert("level".into(), Value::String(l));
    }
    s
}

fn qasc(r: QascRecord) -> Result<Sample, String> {
    let answer = r
        .question
        .choices
        .iter()
        .find(|c| c.label == r.answer_key)
        .ok_or_else(|| format!("answerKey `{}` is not a choice label", r.answer_key))?
        .text
        .clone();
    let choices = r.question.choices.into_iter().map(|c| c.text).collect();
    let mut s = Sample::new(r.id, r.question.stem, answer)
        .with_contexts(vec![
            Document::new("fact1", "", r.fact1),
            Document::new("fact2", "", r.fact2),
        ])
        .with_supporting(vec!["fact1".into(), "fact2".into()])
        .with_choices(choices);
    s.source_dataset = "qasc".into();
    Ok(s)
}

fn wikihop(r: WikiHopRecord) -> Sample {
    let docs: Vec<Document> = r
        .supports
        .into_iter()
        .enumerate()
        .map(|(i, body)| Document::new(format!("s{i}"), "", body))
        .collect();
    let ids = docs.iter().map(|d| d.doc_id.clone()).collect();
    let question = r.query.replacen('_', " ", usize::MAX);
    let mut s = Sample::new(r.id, question, r.answer)
        .with_contexts(docs)
        .with_supporting(ids)
        .with_choices(r.candidates);
    s.source_dataset = "wikihop".into();
    s
}

/// Converts a dump. Records that fail sample validation are errors.
pub fn import(text: &str, format: ImportFormat) -> Result<Vec<Sample>, ImportError> {
    records(text)?
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            let err = |message: String| ImportError::Record { index, message };
            let sample = match format {
                ImportFormat::HotpotQa | ImportFormat::TwoWiki => hotpot(
                    serde_json::from_value(v).map_err(|e| err(e.to_string()))?,
                    format.dataset_id(),
                ),
                ImportFormat::Qasc => {
                    qasc(serde_json::from_value(v).map_err(|e| err(e.to_string()))?).map_err(err)?
                }
                ImportFormat::WikiHop => {
                    wikihop(serde_json::from_value(v).map_err(|e| err(e.to_string()))?)
                }
            };
            let violations = validate_sample(&sample);
            if let Some(v) = violations.first() {
                return Err(err(format!("{}: {}", v.field, v.rule)));
            }
            Ok(sample)
        })
        .collect()
}

/// Reads a [`Sample`] JSONL file (the benchmark input format).
pub fn read_samples(text: &str) -> Result<Vec<Sample>, ImportError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ImportError::Record {
                index: i,
                message: e.to_string(),
            })
        })
        .collect()
}
