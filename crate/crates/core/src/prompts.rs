//! Versioned prompt templates.
//!
//! Each template is a TOML file with `id`, `version`, `system` and `user`
//! keys. Placeholders are written `{{name}}`. The built-in set is compiled in
//! from `templates/`; a directory of `.toml` files can override any of them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

pub const QUESTION_GRAPH: &str = "question_graph";
pub const TRIPLETS: &str = "triplets";
pub const REPLACEMENT: &str = "replacement";
pub const REGENERATION: &str = "regeneration";
pub const NO_CONTEXT_PROBE: &str = "no_context_probe";
pub const ENTAILMENT: &str = "entailment";
pub const QA_ANSWER: &str = "qa_answer";

const BUILTIN: [&str; 7] = [
    include_str!("../templates/question_graph.toml"),
    include_str!("../templates/triplets.toml"),
    include_str!("../templates/replacement.toml"),
    include_str!("../templates/regeneration.toml"),
    include_str!("../templates/no_context_probe.toml"),
    include_str!("../templates/entailment.toml"),
    include_str!("../templates/qa_answer.toml"),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{0}` is not loaded")]
    UnknownTemplate(String),
    #[error("template `{template}` needs variable `{name}`")]
    MissingVariable { template: String, name: String },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("cannot parse template {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("reading templates: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub version: u32,
    pub system: String,
    pub user: String,
}

/// A template filled in and ready to send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    /// `id@vN`, carried on requests for logging and mock routing.
    pub tag: String,
}

impl PromptTemplate {
    pub fn parse(source: &str, origin: &str) -> Result<Self, PromptError> {
        toml::from_str(source).map_err(|e| PromptError::Parse {
            origin: origin.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn tag(&self) -> String {
        format!("{}@v{}", self.id, self.version)
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<RenderedPrompt, PromptError> {
        Ok(RenderedPrompt {
            system: fill(&self.id, self.system.trim(), vars)?,
            user: fill(&self.id, self.user.trim(), vars)?
                .trim_end()
                .to_owned(),
            tag: self.tag(),
        })
    }
}

/// Single-pass substitution; substituted values are never rescanned.
fn fill(template: &str, text: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| PromptError::Unterminated {
            template: template.to_owned(),
        })?;
        let name = after[..close].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingVariable {
                template: template.to_owned(),
                name: name.to_owned(),
            })?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|src| {
                let t = PromptTemplate::parse(src, "builtin").expect("built-in templates parse");
                (t.id.clone(), t)
            })
            .collect();
        Self { templates }
    }

    /// Built-in templates overridden by every `*.toml` file in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut lib = Self::builtin();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            let src = std::fs::read_to_string(&path)?;
            let t = PromptTemplate::parse(&src, &path.display().to_string())?;
            lib.templates.insert(t.id.clone(), t);
        }
        Ok(lib)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_owned()))
    }

    pub fn render(&self, id: &str, vars: &[(&str, &str)]) -> Result<RenderedPrompt, PromptError> {
        self.get(id)?.render(vars)
    }

    /// Template id to version, recorded in run manifests.
    pub fn versions(&self) -> BTreeMap<String, u32> {
        self.templates
            .iter()
            .map(|(k, t)| (k.clone(), t.version))
            .collect()
    }
}

/// Built-in abstention phrase list (`templates/abstention_patterns.txt`).
pub const ABSTENTION_PATTERNS: &str = include_str!("../templates/abstention_patterns.txt");
