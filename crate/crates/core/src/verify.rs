//! Answer matching, the no-context leakage filter and quality classification
//! of no-context responses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{render_documents, Document, QualityClassKind};
use crate::prompts::{
    PromptError, PromptLibrary, ABSTENTION_PATTERNS, ENTAILMENT, NO_CONTEXT_PROBE,
};
use crate::text::{answer_tokens, contains_tokens, normalize_answer};

pub const DEFAULT_PROBES: usize = 3;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("verification call failed after {completed} probes: {source}")]
    Gateway {
        completed: usize,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("entailment judge reply is neither yes nor no: {0:?}")]
    UnparseableJudgement(String),
    #[error("n_probes must be at least 1")]
    NoProbes,
}

/// Decides whether a response gives the reference answer.
pub trait AnswerMatcher: Send + Sync {
    fn name(&self) -> &str;
    fn matches(&self, response: &str, answer: &str, choices: &[String]) -> bool;
}

/// Normalized token containment plus unambiguous choice selection.
#[derive(Debug, Default, Clone, Copy)]
pub struct ContainmentMatcher;

impl AnswerMatcher for ContainmentMatcher {
    fn name(&self) -> &str {
        "containment"
    }

    fn matches(&self, response: &str, answer: &str, choices: &[String]) -> bool {
        answer_contains(response, answer, choices)
    }
}

/// True when the normalized answer occurs as a whole-token run in the
/// normalized response, or, for multiple choice, when the response picks the
/// correct option by letter or 1-based number and picks nothing else.
pub fn answer_contains(response: &str, answer: &str, choices: &[String]) -> bool {
    let needle = answer_tokens(answer);
    if needle.is_empty() {
        return false;
    }
    if contains_tokens(&answer_tokens(response), &needle) {
        return true;
    }
    if choices.is_empty() {
        return false;
    }
    let target = normalize_answer(answer);
    let Some(correct) = choices.iter().position(|c| normalize_answer(c) == target) else {
        return false;
    };
    selected_choice(response, choices.len()) == Some(correct)
}

fn raw_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn choice_index(token: &str, n: usize) -> Option<usize> {
    let idx = match token.as_bytes() {
        [c @ b'a'..=b'z'] => usize::from(c - b'a'),
        _ => token.parse::<usize>().ok()?.checked_sub(1)?,
    };
    (idx < n).then_some(idx)
}

/// Choice picked by a bare `B` / `(2)` reply or an `answer is B`,
/// `option B`, `choice B` phrase. Conflicting picks select nothing.
pub fn selected_choice(response: &str, n_choices: usize) -> Option<usize> {
    let toks = raw_tokens(response);
    if toks.len() == 1 {
        return choice_index(&toks[0], n_choices);
    }
    let mut picks = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        let next = match t.as_str() {
            "answer" if toks.get(i + 1).is_some_and(|x| x == "is") => toks.get(i + 2),
            "option" | "choice" => toks.get(i + 1),
            _ => None,
        };
        if let Some(idx) = next.and_then(|x| choice_index(x, n_choices)) {
            picks.push(idx);
        }
    }
    picks.dedup();
    match picks.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

/// `Choices:` block for prompts; empty when there are no choices.
pub fn render_choices(choices: &[String]) -> String {
    if choices.is_empty() {
        return String::new();
    }
    let mut out = String::from("Choices:");
    for (i, c) in choices.iter().enumerate() {
        let letter = char::from(b'A' + (i % 26) as u8);
        out.push_str(&format!("\n{letter}. {c}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub response: String,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageVerdict {
    pub leaked: bool,
    pub probes: Vec<Probe>,
    pub n_probes: usize,
}

/// Issues no-context probes for the leakage filter.
pub struct LeakageProbe<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptLibrary,
    matcher: &'a dyn AnswerMatcher,
    temperature: f64,
    seed_base: u64,
}

impl<'a> LeakageProbe<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptLibrary) -> Self {
        Self {
            gateway,
            prompts,
            matcher: &ContainmentMatcher,
            temperature: 0.7,
            seed_base: 0,
        }
    }

    pub fn with_matcher(mut self, matcher: &'a dyn AnswerMatcher) -> Self {
        self.matcher = matcher;
        self
    }

    /// Probe `i` is sent with seed `seed_base + i`.
    pub fn with_sampling(mut self, temperature: f64, seed_base: u64) -> Self {
        self.temperature = temperature;
        self.seed_base = seed_base;
        self
    }

    /// Asks the question alone up to `n_probes` times and stops at the first
    /// response that contains the answer.
    pub fn check(
        &self,
        question: &str,
        answer: &str,
        choices: &[String],
        n_probes: usize,
    ) -> Result<LeakageVerdict, VerifyError> {
        if n_probes == 0 {
            return Err(VerifyError::NoProbes);
        }
        let prompt = self.prompts.render(
            NO_CONTEXT_PROBE,
            &[
                ("question", question),
                ("choices", &render_choices(choices)),
            ],
        )?;
        let mut probes = Vec::new();
        for i in 0..n_probes {
            let req = ChatRequest::from_prompt(prompt.clone())
                .with_temperature(self.temperature)
                .with_seed(self.seed_base.wrapping_add(i as u64));
            let response = self
                .gateway
                .complete(&req)
                .map_err(|source| VerifyError::Gateway {
                    completed: probes.len(),
                    source,
                })?;
            let matched = self.matcher.matches(&response, answer, choices);
            probes.push(Probe { response, matched });
            if matched {
                break;
            }
        }
        Ok(LeakageVerdict {
            leaked: probes.iter().any(|p| p.matched),
            n_probes: probes.len(),
            probes,
        })
    }
}

/// Versioned list of abstention phrases, matched as token runs after answer
/// normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstentionDetector {
    pub version: u32,
    patterns: Vec<Vec<String>>,
}

impl Default for AbstentionDetector {
    fn default() -> Self {
        Self::parse(ABSTENTION_PATTERNS)
    }
}

impl AbstentionDetector {
    /// One pattern per line; `#` starts a comment; `# version: N` sets the version.
    pub fn parse(source: &str) -> Self {
        let mut version = 0;
        let mut patterns = Vec::new();
        for line in source.lines().map(str::trim) {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = v.trim().parse().unwrap_or(0);
                }
                continue;
            }
            let toks = answer_tokens(line);
            if !toks.is_empty() {
                patterns.push(toks);
            }
        }
        Self { version, patterns }
    }

    /// Returns the matched pattern, or `None` for a confident response.
    /// Empty responses count as abstentions.
    pub fn matched(&self, response: &str) -> Option<String> {
        let toks = answer_tokens(response);
        if toks.is_empty() {
            return Some(String::new());
        }
        self.patterns
            .iter()
            .find(|p| contains_tokens(&toks, p))
            .map(|p| p.join(" "))
    }

    pub fn is_abstention(&self, response: &str) -> bool {
        self.matched(response).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityClass {
    pub class: QualityClassKind,
    pub evidence: String,
}

/// Classifies a no-context response: `leak` if it contains the answer, else
/// `non_leaking` if it abstains, else one entailment call decides between
/// `factual_inconsistency` (context does not entail it) and `non_leaking`.
#[allow(clippy::too_many_arguments)]
pub fn classify_quality(
    question: &str,
    answer: &str,
    choices: &[String],
    context: &[Document],
    response: &str,
    matcher: &dyn AnswerMatcher,
    detector: &AbstentionDetector,
    gateway: &Gateway,
    prompts: &PromptLibrary,
) -> Result<QualityClass, VerifyError> {
    if matcher.matches(response, answer, choices) {
        return Ok(QualityClass {
            class: QualityClassKind::Leak,
            evidence: "response contains the answer".into(),
        });
    }
    if let Some(pattern) = detector.matched(response) {
        let evidence = if pattern.is_empty() {
            "empty response".to_owned()
        } else {
            format!("abstention: `{pattern}`")
        };
        return Ok(QualityClass {
            class: QualityClassKind::NonLeaking,
            evidence,
        });
    }
    let prompt = prompts.render(
        ENTAILMENT,
        &[
            ("context", &render_documents(context)),
            ("question", question),
            ("response", response.trim()),
        ],
    )?;
    let verdict = gateway
        .complete(&ChatRequest::from_prompt(prompt).with_temperature(0.0))
        .map_err(|source| VerifyError::Gateway {
            completed: 0,
            source,
        })?;
    match answer_tokens(&verdict).first().map(String::as_str) {
        Some("no") => Ok(QualityClass {
            class: QualityClassKind::FactualInconsistency,
            evidence: "confident answer not entailed by the context".into(),
        }),
        Some("yes") => Ok(QualityClass {
            class: QualityClassKind::NonLeaking,
            evidence: "confident answer entailed by the context but not the reference answer"
                .into(),
        }),
        _ => Err(VerifyError::UnparseableJudgement(verdict)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockRule, MockScript};
    use std::sync::Arc;

    fn gateway(rules: Vec<MockRule>) -> (Arc<MockBackend>, Gateway) {
        let mock = Arc::new(MockBackend::new("m", MockScript::new(rules)));
        (mock.clone(), Gateway::new("m", mock))
    }

    #[test]
    fn containment_examples() {
        assert!(answer_contains("Mexican.", "Mexican", &[]));
        assert!(answer_contains(
            "italian–scottish heritage",
            "Italian--Scottish",
            &[]
        ));
        assert!(!answer_contains("Unknown.", "Galician--Welsh", &[]));
        assert!(!answer_contains("Mexicans", "Mexican", &[]));
        assert!(answer_contains("It is the Mexican one", "a Mexican", &[]));
    }

    #[test]
    fn choice_selection() {
        let choices: Vec<String> = ["heat", "light", "sound"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(answer_contains("B", "light", &choices));
        assert!(answer_contains("(2)", "light", &choices));
        assert!(answer_contains("The answer is B.", "light", &choices));
        assert!(!answer_contains("A", "light", &choices));
        assert!(!answer_contains("option A or option B", "light", &choices));
        assert!(!answer_contains("D", "light", &choices));
        assert!(!answer_contains("B", "light", &[]));
    }

    #[test]
    fn probes_stop_early() {
        let (mock, gw) = gateway(vec![MockRule::sequence([
            "Unknown.",
            "Galician--Welsh",
            "Unknown.",
        ])]);
        let lib = PromptLibrary::builtin();
        let v = LeakageProbe::new(&gw, &lib)
            .check("Nationality?", "Galician--Welsh", &[], 3)
            .unwrap();
        assert!(v.leaked);
        assert_eq!(v.n_probes, 2);
        assert_eq!(mock.requests().len(), 2);
        let seeds: Vec<_> = mock.requests().iter().map(|r| r.seed).collect();
        assert_eq!(seeds, [Some(0), Some(1)]);
    }

    #[test]
    fn clean_probes_use_all_three() {
        let (_, gw) = gateway(vec![MockRule::reply("Unknown.")]);
        let lib = PromptLibrary::builtin();
        let v = LeakageProbe::new(&gw, &lib)
            .check("Q?", "Galician--Welsh", &[], DEFAULT_PROBES)
            .unwrap();
        assert!(!v.leaked);
        assert_eq!(v.n_probes, 3);
        assert_eq!(v.probes.len(), 3);
    }

    #[test]
    fn gateway_failure_is_unverified() {
        let (_, gw) = gateway(vec![MockRule::sequence(["Unknown."]).exhausting()]);
        let lib = PromptLibrary::builtin();
        let err = LeakageProbe::new(&gw, &lib)
            .check("Q?", "A", &[], 3)
            .unwrap_err();
        assert!(matches!(err, VerifyError::Gateway { completed: 1, .. }));
    }

    #[test]
    fn abstentions() {
        let d = AbstentionDetector::default();
        assert_eq!(d.version, 1);
        for r in [
            "Unknown.",
            "Unclear.",
            "I don't know",
            "Not enough information to say.",
            "",
        ] {
            assert!(d.is_abstention(r), "{r}");
        }
        assert!(!d.is_abstention("Vic Briggs."));
        assert!(!d.is_abstention("Known for jazz."));
    }

    #[test]
    fn quality_precedence() {
        let lib = PromptLibrary::builtin();
        let d = AbstentionDetector::default();
        let ctx = vec![Document::new(
            "d1",
            "",
            "The guitarist of the band is Alex Chen.",
        )];
        let (mock, gw) = gateway(vec![MockRule::reply("no").for_template("entailment")]);
        let q = "Who is the guitarist?";
        let c = |r: &str| {
            classify_quality(
                q,
                "Alex Chen",
                &[],
                &ctx,
                r,
                &ContainmentMatcher,
                &d,
                &gw,
                &lib,
            )
            .unwrap()
            .class
        };
        assert_eq!(c("Vic Briggs."), QualityClassKind::FactualInconsistency);
        assert_eq!(c("Unclear."), QualityClassKind::NonLeaking);
        assert_eq!(c("It was Alex Chen."), QualityClassKind::Leak);
        assert_eq!(mock.requests().len(), 1);
    }
}
