//! Mutation operators: produce a fresh warrior or a variant of a parent,
//! either from a chat model over HTTP or from an offline bias table.

mod llm;
mod mock;
mod prompt;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::redcode::{ParseOptions, Warrior};

pub use llm::{
    extract_program, BackendError, ChatBackend, ChatMessage, ChatRequest, HttpBackend, LlmEndpointConfig, LlmOperator,
    RecordingBackend, ReplayBackend, SessionRecord,
};
pub use mock::{profile, MockOperator, PROFILE_NAMES};
pub use prompt::{PromptContext, PromptMode, Templates};

#[derive(Debug, thiserror::Error)]
pub enum MutationError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("operator failed after {attempts} attempts: {last_error}")]
    OperatorFailure { attempts: u32, last_error: String },
    #[error("prompt template: {0}")]
    Template(String),
    #[error("unknown bias profile {0:?}")]
    UnknownProfile(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Source of candidate warriors for one node. Every warrior returned
/// parses and carries the operator identity as its origin.
pub trait MutationOperator: Send {
    /// Model name or bias-profile name, used as provenance.
    fn identity(&self) -> &str;

    fn generate(&mut self, ctx: &PromptContext, seed: u64) -> Result<Warrior, MutationError>;

    fn mutate(&mut self, ctx: &PromptContext, seed: u64) -> Result<Warrior, MutationError>;

    /// Time one call takes; the simulator advances node clocks by this.
    fn latency(&self) -> Duration {
        Duration::ZERO
    }
}

/// Operator selection as written in experiment and node files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Mock {
        profile: String,
        /// Simulated seconds per call.
        #[serde(default = "default_mock_latency")]
        latency_secs: f64,
        #[serde(default)]
        failure_rate: f64,
    },
    Llm {
        #[serde(flatten)]
        endpoint: LlmEndpointConfig,
        /// Append every exchange to this session file.
        #[serde(default)]
        record: Option<PathBuf>,
    },
    Replay {
        session: PathBuf,
        #[serde(flatten)]
        endpoint: LlmEndpointConfig,
    },
}

fn default_mock_latency() -> f64 {
    1.0
}

impl OperatorSpec {
    pub fn mock(profile: &str) -> Self {
        OperatorSpec::Mock {
            profile: profile.to_string(),
            latency_secs: default_mock_latency(),
            failure_rate: 0.0,
        }
    }

    /// Identity the built operator will report.
    pub fn identity(&self) -> String {
        match self {
            OperatorSpec::Mock { profile, .. } => format!("mock:{profile}"),
            OperatorSpec::Llm { endpoint, .. } | OperatorSpec::Replay { endpoint, .. } => {
                format!("llm:{}", endpoint.model)
            }
        }
    }

    pub fn build(&self, limits: ParseOptions, templates: &Templates) -> Result<Box<dyn MutationOperator>, MutationError> {
        match self {
            OperatorSpec::Mock {
                profile: name,
                latency_secs,
                failure_rate,
            } => {
                let bias = profile(name).ok_or_else(|| MutationError::UnknownProfile(name.clone()))?;
                if !(latency_secs.is_finite() && *latency_secs >= 0.0) {
                    return Err(MutationError::Precondition("latency_secs must be non-negative".into()));
                }
                Ok(Box::new(
                    MockOperator::new(bias, limits)
                        .with_latency(Duration::from_secs_f64(*latency_secs))
                        .with_failure_rate(*failure_rate),
                ))
            }
            OperatorSpec::Llm { endpoint, record } => {
                endpoint.validate()?;
                let http = HttpBackend::new(endpoint)?;
                let backend: Arc<dyn ChatBackend> = match record {
                    Some(path) => Arc::new(RecordingBackend::new(http, path)?),
                    None => Arc::new(http),
                };
                Ok(Box::new(LlmOperator::new(
                    self.identity(),
                    backend,
                    endpoint.clone(),
                    templates.clone(),
                    limits,
                )))
            }
            OperatorSpec::Replay { session, endpoint } => Ok(Box::new(LlmOperator::new(
                self.identity(),
                Arc::new(ReplayBackend::load(session)?),
                endpoint.clone(),
                templates.clone(),
                limits,
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_read_from_json() {
        let mock: OperatorSpec = serde_json::from_str(r#"{"kind": "mock", "profile": "scanner"}"#).unwrap();
        assert_eq!(mock, OperatorSpec::mock("scanner"));
        assert_eq!(mock.identity(), "mock:scanner");
        let llm: OperatorSpec = serde_json::from_str(
            r#"{"kind": "llm", "base_url": "http://localhost:9/v1", "model": "m", "temperature": 0.7}"#,
        )
        .unwrap();
        assert_eq!(llm.identity(), "llm:m");
        assert!(OperatorSpec::mock("nope")
            .build(ParseOptions::default(), &Templates::default())
            .is_err());
    }
}
