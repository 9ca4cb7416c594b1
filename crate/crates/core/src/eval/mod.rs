//! QA conditions, scoring and the two benchmark-validity metrics.

mod report;
mod retrieve;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{
    render_documents, BenchmarkMetrics, ConditionTag, Document, EvalRecord, Sample,
};
use crate::pool::parallel_map;
use crate::prompts::{PromptError, PromptLibrary, NO_CONTEXT_PROBE, QA_ANSWER};
use crate::verify::{
    classify_quality, render_choices, AbstentionDetector, AnswerMatcher, ContainmentMatcher,
};

pub use report::{
    compare_benchmarks, ComparisonReport, ComparisonRow, ReportHeader, VariantEvaluation,
    POOLED_CORPUS_NOTE,
};
pub use retrieve::{
    document_text, rank_by_cosine, semantic_retrieve, write_corpus, HttpRetriever, RetrievedSet,
    Retriever, RetrieverSpec, SemanticIndex, StdioRetriever,
};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("invalid retrieved set: {0}")]
    InvalidRetrievedSet(String),
    #[error("retrieval corpus is empty")]
    EmptyCorpus,
    #[error("top_k {top_k} exceeds corpus size {corpus}")]
    TopKTooLarge { top_k: usize, corpus: usize },
    #[error("sample `{0}` has no resolvable gold documents: {1}")]
    MissingGold(String, String),
    #[error("retriever returned unknown document `{0}`")]
    UnknownDocument(String),
    #[error("retriever adapter: {0}")]
    Adapter(String),
    #[error("nothing to score: {0}")]
    EmptyEvaluation(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One evaluation condition. `top_k` is set only for retriever conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ConditionWire")]
pub struct Condition {
    tag: ConditionTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    top_k: Option<usize>,
}

#[derive(Deserialize)]
struct ConditionWire {
    tag: ConditionTag,
    #[serde(default)]
    top_k: Option<usize>,
}

impl TryFrom<ConditionWire> for Condition {
    type Error = EvalError;

    fn try_from(w: ConditionWire) -> Result<Self, Self::Error> {
        match w.tag {
            ConditionTag::Retriever(name) => {
                Condition::retriever(name, w.top_k.unwrap_or(DEFAULT_TOP_K))
            }
            tag if w.top_k.is_some() => Err(EvalError::InvalidCondition(format!(
                "top_k given for {tag}"
            ))),
            tag => Ok(Condition { tag, top_k: None }),
        }
    }
}

impl Condition {
    pub fn no_context() -> Self {
        Self {
            tag: ConditionTag::NoContext,
            top_k: None,
        }
    }

    pub fn gold() -> Self {
        Self {
            tag: ConditionTag::Gold,
            top_k: None,
        }
    }

    pub fn retriever(name: impl Into<String>, top_k: usize) -> Result<Self, EvalError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(EvalError::InvalidCondition(
                "retriever name is empty".into(),
            ));
        }
        if top_k == 0 {
            return Err(EvalError::InvalidCondition("top_k must be positive".into()));
        }
        Ok(Self {
            tag: ConditionTag::Retriever(name),
            top_k: Some(top_k),
        })
    }

    pub fn tag(&self) -> &ConditionTag {
        &self.tag
    }

    pub fn top_k(&self) -> Option<usize> {
        self.top_k
    }
}

/// Knobs for [`run_condition`].
pub struct RunOptions<'a> {
    pub workers: usize,
    pub matcher: &'a dyn AnswerMatcher,
    /// Classify no-context responses (one extra entailment call for
    /// confident wrong answers).
    pub classify_quality: bool,
    pub detector: AbstentionDetector,
    pub temperature: f64,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self {
            workers: 4,
            matcher: &ContainmentMatcher,
            classify_quality: false,
            detector: AbstentionDetector::default(),
            temperature: 0.0,
        }
    }
}

fn context_for<'s>(
    sample: &'s Sample,
    condition: &Condition,
    retriever: Option<&dyn Retriever>,
    corpus: &'s HashMap<&str, &Document>,
) -> Result<Vec<&'s Document>, EvalError> {
    match condition.tag() {
        ConditionTag::NoContext => Ok(Vec::new()),
        ConditionTag::Gold => sample
            .gold_documents()
            .map_err(|e| EvalError::MissingGold(sample.id.clone(), e)),
        ConditionTag::Retriever(_) => {
            let retriever = retriever.ok_or_else(|| {
                EvalError::InvalidCondition("retriever condition without a retriever".into())
            })?;
            let set =
                retriever.retrieve(&sample.question, condition.top_k().unwrap_or(DEFAULT_TOP_K))?;
            set.doc_ids()
                .iter()
                .map(|id| {
                    corpus
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| EvalError::UnknownDocument(id.clone()))
                })
                .collect()
        }
    }
}

/// Prompt for one sample under one condition. The no-context condition uses
/// the probe template, the others the document-QA template.
pub fn condition_prompt(
    prompts: &PromptLibrary,
    sample: &Sample,
    docs: &[&Document],
) -> Result<ChatRequest, PromptError> {
    let choices = render_choices(sample.choices());
    let rendered = if docs.is_empty() {
        prompts.render(
            NO_CONTEXT_PROBE,
            &[("question", &sample.question), ("choices", &choices)],
        )?
    } else {
        let context = render_documents(docs.iter().copied());
        prompts.render(
            QA_ANSWER,
            &[
                ("context", &context),
                ("question", &sample.question),
                ("choices", &choices),
            ],
        )?
    };
    Ok(ChatRequest::from_prompt(rendered))
}

/// Answers every sample under `condition` and scores the responses.
///
/// `corpus` is the pool retriever ids resolve against. Gold conditions
/// require every sample's supporting ids to resolve; retriever conditions
/// require a retriever and a non-empty corpus. Gateway failures become
/// errored records rather than errors.
pub fn run_condition(
    samples: &[Sample],
    condition: &Condition,
    retriever: Option<&dyn Retriever>,
    corpus: &[Document],
    gateway: &Gateway,
    prompts: &PromptLibrary,
    options: &RunOptions<'_>,
) -> Result<Vec<EvalRecord>, EvalError> {
    match condition.tag() {
        ConditionTag::Gold => {
            for s in samples {
                s.gold_documents()
                    .map_err(|e| EvalError::MissingGold(s.id.clone(), e))?;
            }
        }
        ConditionTag::Retriever(_) if corpus.is_empty() => return Err(EvalError::EmptyCorpus),
        ConditionTag::Retriever(_) if retriever.is_none() => {
            return Err(EvalError::InvalidCondition(
                "retriever condition without a retriever".into(),
            ))
        }
        _ => {}
    }
    let index: HashMap<&str, &Document> = corpus.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let results = parallel_map(
        samples,
        options.workers,
        |_, sample| -> Result<EvalRecord, EvalError> {
            let errored = |e: String| EvalRecord {
                sample_id: sample.id.clone(),
                condition: condition.tag().clone(),
                model_response: String::new(),
                correct: false,
                quality_class: None,
                error: Some(e),
            };
            let docs = match context_for(sample, condition, retriever, &index) {
                Ok(d) => d,
                Err(e @ (EvalError::Gateway(_) | EvalError::Adapter(_))) => {
                    return Ok(errored(e.to_string()))
                }
                Err(e) => return Err(e),
            };
            let request =
                condition_prompt(prompts, sample, &docs)?.with_temperature(options.temperature);
            let response = match gateway.complete(&request) {
                Ok(r) => r,
                Err(e) => return Ok(errored(e.to_string())),
            };
            let correct = options
                .matcher
                .matches(&response, &sample.answer, sample.choices());
            let quality_class =
                if options.classify_quality && *condition.tag() == ConditionTag::NoContext {
                    match classify_quality(
                        &sample.question,
                        &sample.answer,
                        sample.choices(),
                        &sample.contexts,
                        &response,
                        options.matcher,
                        &options.detector,
                        gateway,
                        prompts,
                    ) {
                        Ok(q) => Some(q.class),
                        Err(e) => {
                            log::warn!(
                                "sample `{}`: quality class unresolved, needs manual review: {e}",
                                sample.id
                            );
                            None
                        }
                    }
                } else {
                    None
                };
            Ok(EvalRecord {
                sample_id: sample.id.clone(),
                condition: condition.tag().clone(),
                model_response: response,
                correct,
                quality_class,
                error: None,
            })
        },
    );
    results.into_iter().collect()
}

/// Accuracy over non-errored records, with the scored and errored counts.
pub fn accuracy(records: &[EvalRecord]) -> Option<(f64, usize, usize)> {
    let scored: Vec<&EvalRecord> = records.iter().filter(|r| !r.is_errored()).collect();
    let errored = records.len() - scored.len();
    if scored.is_empty() {
        return None;
    }
    let correct = scored.iter().filter(|r| r.correct).count();
    Some((correct as f64 / scored.len() as f64, scored.len(), errored))
}

/// Leakage error and answerability accuracy from the no-context and gold runs
/// over the same samples.
pub fn compute_metrics(
    dataset_id: &str,
    model_id: &str,
    no_ctx: &[EvalRecord],
    gold: &[EvalRecord],
) -> Result<BenchmarkMetrics, EvalError> {
    if no_ctx.is_empty() || gold.is_empty() {
        return Err(EvalError::EmptyEvaluation(
            "a condition has no records".into(),
        ));
    }
    let ids = |rs: &[EvalRecord]| {
        rs.iter()
            .map(|r| r.sample_id.clone())
            .collect::<BTreeSet<_>>()
    };
    let (a, b) = (ids(no_ctx), ids(gold));
    if a.is_disjoint(&b) {
        return Err(EvalError::EmptyEvaluation(
            "the two conditions share no samples".into(),
        ));
    }
    if a != b {
        return Err(EvalError::EmptyEvaluation(format!(
            "conditions cover different samples ({} vs {} ids, {} shared)",
            a.len(),
            b.len(),
            a.intersection(&b).count()
        )));
    }
    let (acc_no_ctx, _, err_no_ctx) = accuracy(no_ctx)
        .ok_or_else(|| EvalError::EmptyEvaluation("every no-context record errored".into()))?;
    let (acc_gold, _, err_gold) = accuracy(gold)
        .ok_or_else(|| EvalError::EmptyEvaluation("every gold record errored".into()))?;
    if err_no_ctx + err_gold > 0 {
        log::warn!(
            "{dataset_id}/{model_id}: excluded {err_no_ctx} no-context and {err_gold} gold records whose model call failed"
        );
    }
    Ok(BenchmarkMetrics::from_accuracies(
        dataset_id,
        model_id,
        acc_no_ctx,
        acc_gold,
        a.len(),
    ))
}

/// Every context document of `samples` in one corpus, ids rewritten to
/// `{sample_id}::{doc_id}`.
pub fn pooled_corpus(samples: &[Sample]) -> Vec<Document> {
    samples
        .iter()
        .flat_map(|s| {
            s.contexts.iter().map(move |d| {
                Document::new(
                    format!("{}::{}", s.id, d.doc_id),
                    d.title.clone(),
                    d.body.clone(),
                )
            })
        })
        .collect()
}

/// Records of every condition run by [`evaluate_variant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecords {
    pub evaluation: VariantEvaluation,
    pub records: Vec<EvalRecord>,
}

/// Runs no-context, gold and each retriever condition over `samples` with
/// one answering model (named by the gateway) and aggregates the metrics.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_variant(
    samples: &[Sample],
    dataset_id: &str,
    variant: &str,
    model: &Gateway,
    retrievers: &[&dyn Retriever],
    corpus: &[Document],
    top_k: usize,
    prompts: &PromptLibrary,
    options: &RunOptions<'_>,
) -> Result<VariantRecords, EvalError> {
    let no_ctx = run_condition(
        samples,
        &Condition::no_context(),
        None,
        corpus,
        model,
        prompts,
        options,
    )?;
    let gold = run_condition(
        samples,
        &Condition::gold(),
        None,
        corpus,
        model,
        prompts,
        options,
    )?;
    let metrics = compute_metrics(dataset_id, model.name(), &no_ctx, &gold)?;
    let mut records = no_ctx;
    records.extend(gold);
    let mut retriever_accuracy = std::collections::BTreeMap::new();
    for r in retrievers {
        let condition = Condition::retriever(r.name(), top_k)?;
        let rs = run_condition(
            samples,
            &condition,
            Some(*r),
            corpus,
            model,
            prompts,
            options,
        )?;
        if let Some((acc, _, _)) = accuracy(&rs) {
            retriever_accuracy.insert(r.name().to_owned(), acc);
        }
        records.extend(rs);
    }
    Ok(VariantRecords {
        evaluation: VariantEvaluation {
            variant: variant.to_owned(),
            metrics,
            retriever_accuracy,
        },
        records,
    })
}
