//! Cross-benchmark comparison tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::BenchmarkMetrics;

pub const POOLED_CORPUS_NOTE: &str =
    "retriever corpus pools every context document of the evaluated benchmark; doc ids are `{sample_id}::{doc_id}`";

/// Metrics of one benchmark variant (e.g. `orig`, `generated`) under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEvaluation {
    pub variant: String,
    pub metrics: BenchmarkMetrics,
    /// Retriever name to accuracy.
    #[serde(default)]
    pub retriever_accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset_id: String,
    pub model_id: String,
    pub variant: String,
    pub n_questions: usize,
    pub acc_no_ctx: f64,
    pub acc_gold: f64,
    pub leakage_error: f64,
    pub answerability_accuracy: f64,
    /// Differences against the baseline variant of the same dataset and model.
    pub delta_leakage_error: Option<f64>,
    pub delta_answerability: Option<f64>,
    pub retriever_accuracy: BTreeMap<String, f64>,
    /// Max minus min retriever accuracy.
    pub retriever_spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub baseline_variant: String,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub header: ReportHeader,
    pub rows: Vec<ComparisonRow>,
}

fn spread(acc: &BTreeMap<String, f64>) -> Option<f64> {
    let max = acc.values().copied().reduce(f64::max)?;
    let min = acc.values().copied().reduce(f64::min)?;
    Some(max - min)
}

/// One row per evaluation, sorted by dataset, model and variant, with deltas
/// against `baseline_variant` where that variant was evaluated.
pub fn compare_benchmarks(
    evaluations: &[VariantEvaluation],
    baseline_variant: &str,
    notes: Vec<String>,
) -> ComparisonReport {
    let baseline: BTreeMap<(&str, &str), &BenchmarkMetrics> = evaluations
        .iter()
        .filter(|e| e.variant == baseline_variant)
        .map(|e| {
            (
                (e.metrics.dataset_id.as_str(), e.metrics.model_id.as_str()),
                &e.metrics,
            )
        })
        .collect();
    let mut rows: Vec<ComparisonRow> = evaluations
        .iter()
        .map(|e| {
            let m = &e.metrics;
            let base = baseline.get(&(m.dataset_id.as_str(), m.model_id.as_str()));
            ComparisonRow {
                dataset_id: m.dataset_id.clone(),
                model_id: m.model_id.clone(),
                variant: e.variant.clone(),
                n_questions: m.n_questions,
                acc_no_ctx: m.acc_no_ctx,
                acc_gold: m.acc_gold,
                leakage_error: m.leakage_error,
                answerability_accuracy: m.answerability_accuracy,
                delta_leakage_error: base.map(|b| m.leakage_error - b.leakage_error),
                delta_answerability: base
                    .map(|b| m.answerability_accuracy - b.answerability_accuracy),
                retriever_accuracy: e.retriever_accuracy.clone(),
                retriever_spread: spread(&e.retriever_accuracy),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.dataset_id, &a.model_id, &a.variant).cmp(&(&b.dataset_id, &b.model_id, &b.variant))
    });
    ComparisonReport {
        header: ReportHeader {
            baseline_variant: baseline_variant.to_owned(),
            notes,
        },
        rows,
    }
}

impl ComparisonReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// CSV with one `acc_<retriever>` column per retriever seen in any row.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let retrievers: BTreeSet<&str> = self
            .rows
            .iter()
            .flat_map(|r| r.retriever_accuracy.keys().map(String::as_str))
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "dataset_id",
            "model_id",
            "variant",
            "n_questions",
            "acc_no_ctx",
            "acc_gold",
            "leakage_error",
            "answerability_accuracy",
            "delta_leakage_error",
            "delta_answerability",
            "retriever_spread",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(retrievers.iter().map(|r| format!("acc_{r}")));
        w.write_record(&header)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.dataset_id.clone(),
                r.model_id.clone(),
                r.variant.clone(),
                r.n_questions.to_string(),
                r.acc_no_ctx.to_string(),
                r.acc_gold.to_string(),
                r.leakage_error.to_string(),
                r.answerability_accuracy.to_string(),
                opt(r.delta_leakage_error),
                opt(r.delta_answerability),
                opt(r.retriever_spread),
            ];
            rec.extend(
                retrievers
                    .iter()
                    .map(|name| opt(r.retriever_accuracy.get(*name).copied())),
            );
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> std::io::Result<()> {
        std::fs::write(json_path, self.to_json()?)?;
        std::fs::write(csv_path, self.to_csv().map_err(std::io::Error::other)?)
    }
}
