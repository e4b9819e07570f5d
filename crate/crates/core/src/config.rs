//! Layered runtime configuration: built-in defaults, then a TOML file, then
//! `PATHCHAT_*` environment variables.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::{
    ContextBuilder, ExpertConfig, RetrievalSettings, TaskTemplates, DEFAULT_BUDGET_CHARS,
    DEFAULT_HISTORY_WINDOW,
};
use crate::dialogue::{ActionTemplates, DialoguePolicy, DEFAULT_AUTO_CONFIRM_THRESHOLD};
use crate::intent::{Lexicon, DEFAULT_OTHER_FLOOR};
use crate::kg::{KnowledgeGraph, LearningPath, DEFAULT_SIMILARITY_THRESHOLD};
use crate::llm::{HttpBackendConfig, DEFAULT_ATTACHMENT_CAP};

pub const ENV_PREFIX: &str = "PATHCHAT_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid setting {field}: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
    #[error("loading {what} from {path}: {message}")]
    Asset {
        what: &'static str,
        path: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentBackendKind {
    Baseline,
    Llm,
}

impl FromStr for IntentBackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "llm" => Ok(Self::Llm),
            other => Err(format!("expected baseline or llm, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmBackendKind {
    Mock,
    Http,
}

impl FromStr for LlmBackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("expected mock or http, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Mentor,
}

/// A participant known to the service. The id doubles as the bearer token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantConfig {
    pub id: String,
    pub role: Role,
    #[serde(default = "yes")]
    pub available: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub backend: LlmBackendKind,
    pub http: HttpBackendConfig,
    pub max_response_chars: usize,
    pub max_in_flight: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            backend: LlmBackendKind::Mock,
            http: HttpBackendConfig::default(),
            max_response_chars: 2000,
            max_in_flight: crate::llm::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// Relative paths are resolved against the directory of the file they were
/// read from. `None` asset paths select the bundled fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub address: String,
    pub graph: Option<PathBuf>,
    pub learning_path: Option<PathBuf>,
    pub expert: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub intent_backend: IntentBackendKind,
    pub llm: LlmSettings,
    pub auto_confirm_threshold: f64,
    pub other_floor: f64,
    pub similarity_threshold: f64,
    pub neighbor_k: usize,
    pub budget_chars: usize,
    pub history_window: usize,
    pub bot_mention: String,
    pub mentor_mention: String,
    pub mentor_request_ttl_secs: u64,
    pub attachment_cap_bytes: usize,
    pub allow_peer_groups: bool,
    pub participants: Vec<ParticipantConfig>,
    /// Bot texts per dialogue action; unset keys keep their defaults.
    pub action_texts: ActionTemplates,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            address: "127.0.0.1:8080".into(),
            graph: None,
            learning_path: None,
            expert: None,
            lexicon: None,
            templates_dir: None,
            static_dir: None,
            data_dir: PathBuf::from("pathchat-data"),
            intent_backend: IntentBackendKind::Baseline,
            llm: LlmSettings::default(),
            auto_confirm_threshold: DEFAULT_AUTO_CONFIRM_THRESHOLD,
            other_floor: DEFAULT_OTHER_FLOOR,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            neighbor_k: crate::context::DEFAULT_NEIGHBOR_K,
            budget_chars: DEFAULT_BUDGET_CHARS,
            history_window: DEFAULT_HISTORY_WINDOW,
            bot_mention: "@bot".into(),
            mentor_mention: "@mentor".into(),
            mentor_request_ttl_secs: 15 * 60,
            attachment_cap_bytes: DEFAULT_ATTACHMENT_CAP,
            allow_peer_groups: false,
            participants: Vec::new(),
            action_texts: ActionTemplates::default(),
        }
    }
}

fn parse_env<T: FromStr>(name: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Env {
        name: name.to_string(),
        message: e.to_string(),
    })
}

impl Config {
    /// Parses a TOML document; relative paths are joined onto `base_dir`.
    pub fn from_toml(document: &str, base_dir: &Path) -> Result<Self, String> {
        let mut config: Config = toml::from_str(document).map_err(|e| e.to_string())?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    /// Reads the file (if given), then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let file_err = |message: String| ConfigError::File {
                    path: path.display().to_string(),
                    message,
                };
                let document =
                    std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                Self::from_toml(&document, base).map_err(file_err)?
            }
            None => Self::default(),
        };
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.graph,
            &mut self.learning_path,
            &mut self.expert,
            &mut self.lexicon,
            &mut self.templates_dir,
            &mut self.static_dir,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        join(&mut self.data_dir);
    }

    /// Applies `PATHCHAT_*` overrides. Unknown names with the prefix are
    /// ignored, except the credential variable which is never read here.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match key {
                "ADDRESS" => self.address = value,
                "GRAPH" => self.graph = Some(value.into()),
                "LEARNING_PATH" => self.learning_path = Some(value.into()),
                "EXPERT" => self.expert = Some(value.into()),
                "LEXICON" => self.lexicon = Some(value.into()),
                "TEMPLATES_DIR" => self.templates_dir = Some(value.into()),
                "STATIC_DIR" => self.static_dir = Some(value.into()),
                "DATA_DIR" => self.data_dir = value.into(),
                "INTENT_BACKEND" => self.intent_backend = parse_env(&name, &value)?,
                "LLM_BACKEND" => self.llm.backend = parse_env(&name, &value)?,
                "LLM_ENDPOINT" => self.llm.http.endpoint = value,
                "LLM_MODEL" => self.llm.http.model = value,
                "LLM_TIMEOUT_SECS" => self.llm.http.timeout_secs = parse_env(&name, &value)?,
                "AUTO_CONFIRM_THRESHOLD" => self.auto_confirm_threshold = parse_env(&name, &value)?,
                "OTHER_FLOOR" => self.other_floor = parse_env(&name, &value)?,
                "SIMILARITY_THRESHOLD" => self.similarity_threshold = parse_env(&name, &value)?,
                "BUDGET_CHARS" => self.budget_chars = parse_env(&name, &value)?,
                "HISTORY_WINDOW" => self.history_window = parse_env(&name, &value)?,
                "BOT_MENTION" => self.bot_mention = value,
                "MENTOR_MENTION" => self.mentor_mention = value,
                "MENTOR_REQUEST_TTL_SECS" => {
                    self.mentor_request_ttl_secs = parse_env(&name, &value)?
                }
                "ATTACHMENT_CAP_BYTES" => self.attachment_cap_bytes = parse_env(&name, &value)?,
                "ALLOW_PEER_GROUPS" => self.allow_peer_groups = parse_env(&name, &value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    field,
                    message: format!("{v} is outside [0, 1]"),
                })
            }
        };
        unit("auto_confirm_threshold", self.auto_confirm_threshold)?;
        unit("other_floor", self.other_floor)?;
        unit("similarity_threshold", self.similarity_threshold)?;
        let positive = |field: &'static str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    field,
                    message: "must be positive".into(),
                })
            }
        };
        positive("budget_chars", self.budget_chars)?;
        positive("llm.max_response_chars", self.llm.max_response_chars)?;
        positive("llm.max_in_flight", self.llm.max_in_flight)?;
        for (field, token) in [
            ("bot_mention", &self.bot_mention),
            ("mentor_mention", &self.mentor_mention),
        ] {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(ConfigError::Invalid {
                    field,
                    message: format!("{token:?} must be one nonempty word"),
                });
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for p in &self.participants {
            if p.id.trim().is_empty() || !ids.insert(p.id.as_str()) {
                return Err(ConfigError::Invalid {
                    field: "participants",
                    message: format!("participant id {:?} is empty or duplicated", p.id),
                });
            }
        }
        Ok(())
    }

    pub fn load_graph(&self) -> Result<KnowledgeGraph, ConfigError> {
        match &self.graph {
            Some(p) => KnowledgeGraph::from_path(p).map_err(|e| asset("knowledge graph", p, e)),
            None => Ok(crate::kg::sample_graph()),
        }
    }

    pub fn load_learning_path(&self) -> Result<LearningPath, ConfigError> {
        match &self.learning_path {
            Some(p) => LearningPath::from_path(p).map_err(|e| asset("learning path", p, e)),
            None => Ok(crate::kg::sample_path()),
        }
    }

    pub fn load_expert(&self) -> Result<ExpertConfig, ConfigError> {
        match &self.expert {
            Some(p) => ExpertConfig::from_path(p).map_err(|e| asset("expert config", p, e)),
            None => Ok(ExpertConfig::bundled()),
        }
    }

    pub fn load_lexicon(&self) -> Result<Lexicon, ConfigError> {
        match &self.lexicon {
            Some(p) => Lexicon::from_path(p).map_err(|e| asset("lexicon", p, e)),
            None => Ok(Lexicon::bundled()),
        }
    }

    pub fn load_templates(&self) -> Result<TaskTemplates, ConfigError> {
        match &self.templates_dir {
            Some(p) => TaskTemplates::from_dir(p).map_err(|e| asset("task templates", p, e)),
            None => Ok(TaskTemplates::default()),
        }
    }

    pub fn context_builder(&self) -> Result<ContextBuilder, ConfigError> {
        Ok(ContextBuilder {
            expert: self.load_expert()?,
            templates: self.load_templates()?,
            retrieval: RetrievalSettings {
                similarity_threshold: self.similarity_threshold,
                neighbor_k: self.neighbor_k,
                ..RetrievalSettings::default()
            },
        })
    }

    pub fn dialogue_policy(&self) -> DialoguePolicy {
        DialoguePolicy {
            auto_confirm_threshold: self.auto_confirm_threshold,
            templates: self.action_texts.clone(),
        }
    }
}

fn asset(what: &'static str, path: &Path, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Asset {
        what,
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
