//! Answer-producing backends: a prospect-theory synthetic agent, transcript
//! replay, and a remote chat-completions endpoint.

mod http;
mod journal;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use journal::{Journal, JournalRecord, JournalingBackend, ReplayBackend};
pub use synthetic::{
    coherent_sequence, synthetic_decisions, synthetic_respond, Noise, SyntheticAgentSpec, SyntheticBackend,
    SyntheticDecisions,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("prompt not recognised: {0}")]
    Template(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("no journal entry for prompt digest {digest}")]
    Miss { digest: String },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-request metadata passed alongside the prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestContext {
    pub persona_id: String,
    /// 0 for the first try, incremented by pipeline retries.
    pub attempt: u32,
}

impl RequestContext {
    pub fn for_persona(id: &str) -> Self {
        Self {
            persona_id: id.to_string(),
            attempt: 0,
        }
    }
}

/// Backend name plus a digest of its configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub name: String,
    pub config_digest: String,
}

impl BackendIdentity {
    pub fn new(name: &str, config: &impl Serialize) -> Self {
        let json = serde_json::to_string(config).expect("backend config serialises");
        Self {
            name: name.to_string(),
            config_digest: sha256_hex(json.as_bytes()),
        }
    }
}

impl fmt::Display for BackendIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let short = &self.config_digest[..self.config_digest.len().min(16)];
        write!(f, "{}:{}", self.name, short)
    }
}

pub trait AgentBackend: Send + Sync {
    fn respond(&self, prompt: &str, ctx: &RequestContext) -> Result<String, AgentError>;

    fn identity(&self) -> BackendIdentity;

    /// Upper bound on concurrent `respond` calls the backend wants.
    fn max_concurrency(&self) -> usize {
        usize::MAX
    }
}

impl<B: AgentBackend + ?Sized> AgentBackend for Box<B> {
    fn respond(&self, prompt: &str, ctx: &RequestContext) -> Result<String, AgentError> {
        (**self).respond(prompt, ctx)
    }
    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }
    fn max_concurrency(&self) -> usize {
        (**self).max_concurrency()
    }
}

/// Backend driven by a closure; handy for fixtures.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str, &RequestContext) -> Result<String, AgentError> + Send + Sync,
{
    pub fn new(name: &str, f: F) -> Self {
        Self {
            name: name.to_string(),
            f,
        }
    }
}

impl<F> AgentBackend for FnBackend<F>
where
    F: Fn(&str, &RequestContext) -> Result<String, AgentError> + Send + Sync,
{
    fn respond(&self, prompt: &str, ctx: &RequestContext) -> Result<String, AgentError> {
        (self.f)(prompt, ctx)
    }
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new(&self.name, &self.name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Journal key for a prompt.
pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}
