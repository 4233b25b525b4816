//! Service settings, read from the environment.
//!
//! | variable | meaning | default |
//! |---|---|---|
//! | `CONVLENS_DATA_ROOT` | directory holding one sub-directory per session | `convlens-data` |
//! | `CONVLENS_ADDR` | listen address | `127.0.0.1:8080` |
//! | `CONVLENS_BACKEND` | `live`, `replay` or `fallback` | `live` when an endpoint is set, else `fallback` |
//! | `CONVLENS_LLM_ENDPOINT` | base URL of an OpenAI-compatible API | |
//! | `CONVLENS_LLM_MODEL` | model id | `gpt-4o` |
//! | `CONVLENS_LLM_API_KEY` | bearer token (`OPENAI_API_KEY` also works) | |
//! | `CONVLENS_TRANSCRIPT` | replay transcript(s), `:`-separated | |
//! | `CONVLENS_RUNNER` | `none`, `echo`, or a runner command line | `none` |

use std::path::PathBuf;
use std::sync::Arc;

use convlens_core::artifacts::ExecutionLimits;
use convlens_core::llm::{HttpBackend, LlmBackend, LlmConfig, ReplayBackend, Transcript};

#[derive(Debug, Clone, PartialEq)]
pub enum BackendMode {
    Fallback,
    Live(LlmConfig),
    Replay(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunnerMode {
    None,
    Echo,
    Command(String),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    pub addr: String,
    pub backend: BackendMode,
    pub runner: RunnerMode,
    pub limits: ExecutionLimits,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown backend mode {0:?} (expected live, replay or fallback)")]
    UnknownBackend(String),
    #[error("replay mode needs CONVLENS_TRANSCRIPT")]
    NoTranscript,
    #[error("cannot read transcript {path}: {source}")]
    Transcript {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ServiceConfig {
    /// Fallback backend, no runner.
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_root: data_root.into(),
            addr: "127.0.0.1:8080".into(),
            backend: BackendMode::Fallback,
            runner: RunnerMode::None,
            limits: ExecutionLimits::default(),
        }
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let mut config = ServiceConfig::new(var("CONVLENS_DATA_ROOT").unwrap_or_else(|| "convlens-data".into()));
        if let Some(addr) = var("CONVLENS_ADDR") {
            config.addr = addr;
        }
        let endpoint = var("CONVLENS_LLM_ENDPOINT");
        let mode = var("CONVLENS_BACKEND").unwrap_or_else(|| if endpoint.is_some() { "live" } else { "fallback" }.into());
        config.backend = match mode.as_str() {
            "fallback" => BackendMode::Fallback,
            "live" => {
                let mut llm = LlmConfig::default();
                if let Some(e) = endpoint {
                    llm.endpoint = e;
                }
                if let Some(m) = var("CONVLENS_LLM_MODEL") {
                    llm.model = m;
                }
                llm.api_key = var("CONVLENS_LLM_API_KEY").or_else(|| var("OPENAI_API_KEY"));
                BackendMode::Live(llm)
            }
            "replay" => {
                let paths = var("CONVLENS_TRANSCRIPT").ok_or(ConfigError::NoTranscript)?;
                BackendMode::Replay(std::env::split_paths(&paths).collect())
            }
            other => return Err(ConfigError::UnknownBackend(other.to_string())),
        };
        config.runner = match var("CONVLENS_RUNNER").as_deref() {
            None | Some("none") => RunnerMode::None,
            Some("echo") => RunnerMode::Echo,
            Some(cmd) => RunnerMode::Command(cmd.to_string()),
        };
        Ok(config)
    }

    /// The configured backend; `None` in fallback mode. Replay transcripts
    /// are merged in the given order.
    pub fn make_backend(&self) -> Result<Option<Arc<dyn LlmBackend>>, ConfigError> {
        Ok(match &self.backend {
            BackendMode::Fallback => None,
            BackendMode::Live(llm) => Some(Arc::new(HttpBackend::new(llm.clone()))),
            BackendMode::Replay(paths) => {
                let mut merged = Transcript::new();
                for path in paths {
                    let t = Transcript::load(path).map_err(|source| ConfigError::Transcript {
                        path: path.clone(),
                        source,
                    })?;
                    merged.entries.extend(t.entries);
                }
                Some(Arc::new(ReplayBackend::new(merged)))
            }
        })
    }
}
