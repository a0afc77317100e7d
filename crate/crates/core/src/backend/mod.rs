//! Text-generation backends.
//!
//! Every request carries two channels: the rendered prompt, which is all a
//! hosted model ever sees, and a structured payload echoing the same inputs,
//! which only the mock backend reads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod live;
mod mock;

pub use live::{LiveBackend, LiveConfig, API_KEY_ENV};
pub use mock::{mock_field_score, point_seed, MockBackend, MockConfig, PointPolicy, RefinePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Predict,
    VariableSelect,
    PointSelect,
    Refine,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Predict => "predict",
            AgentRole::VariableSelect => "variable_select",
            AgentRole::PointSelect => "point_select",
            AgentRole::Refine => "refine",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRef {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuEntry {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePayload {
    pub id: String,
    pub distance_km: f64,
    /// Previous-round score, `None` when that point was refused.
    pub score: Option<f64>,
    pub covariates: BTreeMap<String, f64>,
}

/// Structured echo of what the prompt contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Predict {
        point: PointRef,
        topic: String,
    },
    VariableSelect {
        point: PointRef,
        topic: String,
        candidates: Vec<String>,
        d_max: usize,
    },
    PointSelect {
        point: PointRef,
        topic: String,
        menu: Vec<MenuEntry>,
        p_far: usize,
    },
    Refine {
        point: PointRef,
        topic: String,
        current: Option<f64>,
        references: Vec<ReferencePayload>,
        target_covariates: BTreeMap<String, f64>,
    },
}

impl Payload {
    pub fn role(&self) -> AgentRole {
        match self {
            Payload::Predict { .. } => AgentRole::Predict,
            Payload::VariableSelect { .. } => AgentRole::VariableSelect,
            Payload::PointSelect { .. } => AgentRole::PointSelect,
            Payload::Refine { .. } => AgentRole::Refine,
        }
    }

    pub fn point(&self) -> &PointRef {
        match self {
            Payload::Predict { point, .. }
            | Payload::VariableSelect { point, .. }
            | Payload::PointSelect { point, .. }
            | Payload::Refine { point, .. } => point,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub request_id: String,
    pub role: AgentRole,
    pub prompt: String,
    pub payload: Payload,
}

impl BackendRequest {
    /// Panics if the prompt is empty or the payload belongs to another role.
    pub fn new(request_id: impl Into<String>, prompt: String, payload: Payload) -> Self {
        assert!(!prompt.trim().is_empty(), "backend prompt must not be empty");
        Self { request_id: request_id.into(), role: payload.role(), prompt, payload }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub attempts: u32,
    pub elapsed_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed reply from endpoint: {0}")]
    Malformed(String),
    #[error("endpoint rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::RetriesExhausted { .. } => "retries_exhausted",
            BackendError::Auth(_) => "auth",
            BackendError::Malformed(_) => "malformed",
            BackendError::Rejected { .. } => "rejected",
            BackendError::Config(_) => "config",
        }
    }

    /// Errors no amount of waiting will fix; a run should stop on these.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::Auth(_) | BackendError::Config(_))
    }
}

/// Anything that turns a prompt into text.
pub trait Backend: Send + Sync {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).invoke(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).invoke(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).invoke(request)
    }
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request_id: String,
    pub round: usize,
    pub role: AgentRole,
    pub point_id: String,
    pub prompt: String,
    pub payload: Payload,
    pub response: Option<String>,
    pub error: Option<String>,
    pub error_kind: Option<String>,
    pub attempts: u32,
    pub elapsed_ms: u64,
}

/// Wraps a backend and keeps a record of every call made through it.
pub struct Recorder<B> {
    inner: B,
    round: usize,
    records: Mutex<Vec<CallRecord>>,
}

impl<B: Backend> Recorder<B> {
    pub fn new(inner: B, round: usize) -> Self {
        Self { inner, round, records: Mutex::new(Vec::new()) }
    }

    pub fn into_records(self) -> Vec<CallRecord> {
        self.records.into_inner().expect("recorder poisoned")
    }
}

impl<B: Backend> Backend for Recorder<B> {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let start = Instant::now();
        let result = self.inner.invoke(request);
        let (response, error, error_kind, attempts, elapsed_ms) = match &result {
            Ok(r) => (Some(r.text.clone()), None, None, r.attempts, r.elapsed_ms),
            Err(e) => (None, Some(e.to_string()), Some(e.kind().to_string()), 0, start.elapsed().as_millis() as u64),
        };
        self.records.lock().expect("recorder poisoned").push(CallRecord {
            request_id: request.request_id.clone(),
            round: self.round,
            role: request.role,
            point_id: request.payload.point().id.clone(),
            prompt: request.prompt.clone(),
            payload: request.payload.clone(),
            response,
            error,
            error_kind,
            attempts,
            elapsed_ms,
        });
        result
    }
}

/// Replies with fixed text per role; handy for exercising parsers end to end.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<AgentRole, String>,
    failures: BTreeMap<AgentRole, BackendError>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(mut self, role: AgentRole, text: impl Into<String>) -> Self {
        self.replies.insert(role, text.into());
        self
    }

    pub fn fail(mut self, role: AgentRole, error: BackendError) -> Self {
        self.failures.insert(role, error);
        self
    }
}

impl Backend for ScriptedBackend {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        if let Some(e) = self.failures.get(&request.role) {
            return Err(e.clone());
        }
        let text = self.replies.get(&request.role).cloned().unwrap_or_default();
        Ok(BackendResponse { text, attempts: 1, elapsed_ms: 0 })
    }
}
