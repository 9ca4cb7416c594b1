//! TOML run configuration: generation settings, backend profiles, role
//! bindings and retrievers.
//!
//! ```toml
//! templates_dir = "prompts"          # optional overrides
//!
//! [generation]
//! max_attempts = 5
//!
//! [profiles.main]
//! kind = "openai"
//! model = "gpt-4o-mini"
//! embedding_model = "text-embedding-3-small"
//!
//! [roles]
//! generator = "main"
//! verifier_probe = "main"
//! embedder = "main"
//! evaluator = ["main"]
//!
//! [retrievers.semantic]
//! kind = "semantic"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{RetrieverSpec, DEFAULT_TOP_K};
use crate::gateway::{
    gateway_for, open_backend, Backend, BackendProfile, CassetteMode, Gateway, GatewayError,
};
use crate::orchestrate::{Gateways, GenerationConfig};
use crate::prompts::{PromptError, PromptLibrary};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub generator: Option<String>,
    pub verifier_probe: Option<String>,
    pub embedder: Option<String>,
    #[serde(default)]
    pub evaluator: Vec<String>,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeConfig {
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub profiles: BTreeMap<String, BackendProfile>,
    #[serde(default)]
    pub roles: Roles,
    #[serde(default)]
    pub retrievers: BTreeMap<String, RetrieverSpec>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            templates_dir: None,
            profiles: BTreeMap::new(),
            roles: Roles::default(),
            retrievers: BTreeMap::new(),
            top_k: DEFAULT_TOP_K,
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ForgeConfig {
    /// Parses TOML. A profile's `name` defaults to its table key.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut value: toml::Table = toml::from_str(text)?;
        if let Some(toml::Value::Table(profiles)) = value.get_mut("profiles") {
            for (key, profile) in profiles.iter_mut() {
                if let toml::Value::Table(t) = profile {
                    t.entry("name")
                        .or_insert_with(|| toml::Value::String(key.clone()));
                }
            }
        }
        let config: ForgeConfig = value.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(dir) = &mut self.templates_dir {
            absolutize(base, dir);
        }
        for p in self.profiles.values_mut() {
            if let Some(script) = &mut p.script {
                absolutize(base, script);
            }
            if let Some(c) = &mut p.cassette {
                absolutize(base, &mut c.path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be >= 1".into()));
        }
        for (key, p) in &self.profiles {
            if &p.name != key {
                return Err(ConfigError::Invalid(format!(
                    "profile `{key}` declares name `{}`",
                    p.name
                )));
            }
        }
        let r = &self.roles;
        for name in [&r.generator, &r.verifier_probe, &r.embedder]
            .into_iter()
            .flatten()
            .chain(&r.evaluator)
        {
            if !self.profiles.contains_key(name) {
                return Err(ConfigError::Invalid(format!(
                    "role refers to unknown profile `{name}`"
                )));
            }
        }
        Ok(())
    }

    pub fn prompts(&self) -> Result<PromptLibrary, ConfigError> {
        Ok(match &self.templates_dir {
            Some(dir) => PromptLibrary::with_overrides(dir)?,
            None => PromptLibrary::builtin(),
        })
    }

    pub fn profile(&self, name: &str) -> Result<&BackendProfile, ConfigError> {
        self.profiles
            .get(name)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown profile `{name}`")))
    }

    /// Points every profile at `dir/{profile}.jsonl` in `mode`.
    pub fn with_cassettes(mut self, dir: &Path, mode: CassetteMode) -> Self {
        for p in self.profiles.values_mut() {
            *p = p.record_replay(mode, dir.join(format!("{}.jsonl", p.name)));
        }
        self
    }
}

/// Opens each profile at most once so roles bound to one profile share a
/// backend (and its cassette) while keeping separate call counters.
#[derive(Default)]
pub struct Connections {
    backends: HashMap<String, Arc<dyn Backend>>,
}

impl Connections {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn gateway(
        &mut self,
        config: &ForgeConfig,
        role: &str,
        profile: &str,
    ) -> Result<Gateway, ConfigError> {
        let p = config.profile(profile)?;
        let backend = match self.backends.get(profile) {
            Some(b) => Arc::clone(b),
            None => {
                let b = open_backend(p)?;
                self.backends.insert(profile.to_owned(), Arc::clone(&b));
                b
            }
        };
        Ok(gateway_for(role, p, backend))
    }

    fn role(
        &mut self,
        config: &ForgeConfig,
        role: &str,
        profile: &Option<String>,
    ) -> Result<Gateway, ConfigError> {
        let name = profile
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid(format!("role `{role}` is not bound")))?;
        self.gateway(config, role, name)
    }

    pub fn generation(&mut self, config: &ForgeConfig) -> Result<Gateways, ConfigError> {
        Ok(Gateways {
            generator: self.role(config, "generator", &config.roles.generator)?,
            verifier: self.role(config, "verifier", &config.roles.verifier_probe)?,
        })
    }

    pub fn embedder(&mut self, config: &ForgeConfig) -> Result<Gateway, ConfigError> {
        self.role(config, "embedder", &config.roles.embedder)
    }
}
