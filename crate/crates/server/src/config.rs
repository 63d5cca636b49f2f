use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kisbench_core::clock::Clock;
use kisbench_core::domain::{validate_plan_assets, EvaluationPlan};
use kisbench_core::evalserver::{Credential, Engine, EngineConfig, EngineError, DEFAULT_SESSION_TTL_MS};
use kisbench_core::fixtures;
use kisbench_core::retrieval::{Index, RetrievalError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_ENV: &str = "KISBENCH_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("retrieval corpus: {0}")]
    Retrieval(#[from] RetrievalError),
}

/// Server configuration, read from a TOML or JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub admin_token: String,
    pub completion_key: String,
    /// `{code}` is replaced by the participant's completion code.
    #[serde(default)]
    pub redirect_url: Option<String>,
    /// Evaluation plan JSON. Without it the built-in five-task study plan is used.
    #[serde(default)]
    pub plan: Option<PathBuf>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub media_dir: Option<PathBuf>,
    #[serde(default)]
    pub app_dir: Option<PathBuf>,
    #[serde(default)]
    pub backends: Vec<String>,
    #[serde(default)]
    pub credentials: Vec<Credential>,
    /// Generates `user001`.. accounts when `credentials` is empty.
    #[serde(default)]
    pub generate_credentials: usize,
    #[serde(default = "default_ttl")]
    pub session_ttl_ms: i64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub retrieval: Option<RetrievalConfig>,
    /// Interval of the background deadline sweep; 0 disables it.
    #[serde(default = "default_sweep")]
    pub sweep_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    /// JSON-Lines segment documents. Without it the fixture corpus is indexed.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_distractors")]
    pub fixture_distractors: usize,
    #[serde(default = "default_corpus_seed")]
    pub fixture_seed: u64,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_ttl() -> i64 {
    DEFAULT_SESSION_TTL_MS
}

fn default_sweep() -> u64 {
    1_000
}

fn default_distractors() -> usize {
    500
}

fn default_corpus_seed() -> u64 {
    7
}

impl ServerConfig {
    /// A config with the built-in plan and generated credentials, for tests and demos.
    pub fn demo(admin_token: &str, backends: Vec<String>) -> Self {
        Self {
            bind: default_bind(),
            admin_token: admin_token.to_string(),
            completion_key: "demo-completion-key".to_string(),
            redirect_url: None,
            plan: None,
            data_dir: None,
            media_dir: None,
            app_dir: None,
            backends,
            credentials: Vec::new(),
            generate_credentials: 250,
            session_ttl_ms: DEFAULT_SESSION_TTL_MS,
            seed: Some(1),
            retrieval: Some(RetrievalConfig {
                corpus: None,
                fixture_distractors: default_distractors(),
                fixture_seed: default_corpus_seed(),
            }),
            sweep_interval_ms: default_sweep(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        let mut cfg: Self = parsed.map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        cfg.check()?;
        Ok(cfg)
    }

    /// Resolves `explicit`, then `$KISBENCH_CONFIG`.
    pub fn locate(explicit: Option<&Path>) -> Option<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.plan);
        fix(&mut self.data_dir);
        fix(&mut self.media_dir);
        fix(&mut self.app_dir);
        if let Some(r) = self.retrieval.as_mut() {
            fix(&mut r.corpus);
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.admin_token.trim().len() < 8 {
            return Err(ConfigError::Invalid("admin_token must be at least 8 characters".into()));
        }
        if self.completion_key.is_empty() {
            return Err(ConfigError::Invalid("completion_key must not be empty".into()));
        }
        if self.session_ttl_ms <= 0 {
            return Err(ConfigError::Invalid("session_ttl_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn credential_pool(&self) -> Vec<Credential> {
        if self.credentials.is_empty() {
            fixtures::credentials(self.generate_credentials)
        } else {
            self.credentials.clone()
        }
    }

    pub fn load_plan(&self) -> Result<EvaluationPlan, ConfigError> {
        let plan = match &self.plan {
            None => fixtures::study_plan(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                EvaluationPlan::from_json(&text).map_err(|e| ConfigError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?
            }
        };
        if let Some(media) = &self.media_dir {
            if let Err(violations) = validate_plan_assets(&plan, media) {
                for v in violations {
                    log::warn!("{v}");
                }
            }
        }
        Ok(plan)
    }

    pub fn engine_config(&self) -> EngineConfig {
        let mut c = EngineConfig::new(self.credential_pool(), self.backends.clone(), self.completion_key.clone());
        c.session_ttl_ms = self.session_ttl_ms;
        c.redirect_url = self.redirect_url.clone();
        c.seed = self.seed;
        c.data_dir = self.data_dir.clone();
        c
    }

    pub fn build_engine(&self, clock: Arc<dyn Clock>) -> Result<Engine, ConfigError> {
        Ok(Engine::open(self.engine_config(), clock, Some(self.load_plan()?))?)
    }

    pub fn build_index(&self) -> Result<Option<Index>, ConfigError> {
        let Some(r) = &self.retrieval else {
            return Ok(None);
        };
        let index = match &r.corpus {
            Some(path) => {
                let file = File::open(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                Index::from_jsonl(BufReader::new(file))?
            }
            None => Index::build(fixtures::study_corpus(r.fixture_distractors, r.fixture_seed))?,
        };
        Ok(Some(index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.toml");
        std::fs::write(
            &path,
            r#"
admin_token = "sup3r-secret"
completion_key = "k"
data_dir = "data"
backends = ["http://127.0.0.1:9000/retrieval"]
credentials = [{ username = "a", secret = "x" }]

[retrieval]
fixture_distractors = 20
"#,
        )
        .unwrap();
        let cfg = ServerConfig::load(&path).unwrap();
        assert_eq!(cfg.bind, default_bind());
        assert_eq!(cfg.data_dir.as_deref(), Some(dir.path().join("data").as_path()));
        assert_eq!(cfg.credential_pool().len(), 1);
        assert_eq!(cfg.build_index().unwrap().unwrap().len(), fixtures::study_corpus(20, 7).len());
    }

    #[test]
    fn json_is_accepted_and_short_tokens_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"admin_token":"short","completion_key":"k"}"#).unwrap();
        assert!(matches!(ServerConfig::load(&path), Err(ConfigError::Invalid(_))));
        std::fs::write(&path, r#"{"admin_token":"long-enough","completion_key":"k","bogus":1}"#).unwrap();
        assert!(matches!(ServerConfig::load(&path), Err(ConfigError::Parse { .. })));
    }
}
