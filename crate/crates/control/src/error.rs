use hetflow_core::graph::GraphError;
use hetflow_core::ham::HamError;
use hetflow_core::matcher::{CommitError, PlanError};
use hetflow_core::pipeline::PipelineError;
use hetflow_core::runtime::RunError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

/// Machine-readable error codes. Every engine error maps to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Referenced pipeline, session or processor does not exist.
    NotFound,
    /// Request body or parameters could not be understood.
    BadRequest,
    /// The id is already in use.
    Conflict,
    /// A manifest was rejected by the registry.
    InvalidManifest,
    /// The pipeline does not form a valid graph.
    InvalidGraph,
    /// No assignment satisfies compatibility and capacity.
    PlanInfeasible,
    /// Deploying a planned assignment failed; nothing stays deployed.
    CommitFailed,
    /// Operation not allowed in the session's current state.
    InvalidState,
    /// A backend could not instantiate an implementation.
    BackendError,
    /// A source or sink binding could not be opened.
    ResourceError,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::NotFound => 404,
            ErrorCode::BadRequest => 400,
            ErrorCode::Conflict | ErrorCode::InvalidState | ErrorCode::PlanInfeasible | ErrorCode::CommitFailed => 409,
            ErrorCode::InvalidManifest | ErrorCode::InvalidGraph | ErrorCode::ResourceError => 422,
            ErrorCode::BackendError => 500,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::NotFound => "not_found",
            ErrorCode::BadRequest => "bad_request",
            ErrorCode::Conflict => "conflict",
            ErrorCode::InvalidManifest => "invalid_manifest",
            ErrorCode::InvalidGraph => "invalid_graph",
            ErrorCode::PlanInfeasible => "plan_infeasible",
            ErrorCode::CommitFailed => "commit_failed",
            ErrorCode::InvalidState => "invalid_state",
            ErrorCode::BackendError => "backend_error",
            ErrorCode::ResourceError => "resource_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Json>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Json) -> Self {
        self.details = Some(details);
        self
    }

    pub fn not_found(kind: &str, id: &str) -> Self {
        ApiError::new(ErrorCode::NotFound, format!("{kind} {id} not found")).with_details(json!({ "kind": kind, "id": id }))
    }

    /// The wire body: `{"v":1,"error":{...}}`.
    pub fn body(&self) -> Json {
        json!({ "v": 1, "error": self })
    }
}

impl From<HamError> for ApiError {
    fn from(e: HamError) -> Self {
        match &e {
            HamError::UnknownProcessor(id) => ApiError::not_found("processor", id),
            HamError::DuplicateHam(_) | HamError::DuplicateProcessorId(_) => ApiError::new(ErrorCode::Conflict, e.to_string()),
            HamError::Malformed(_)
            | HamError::InvalidId(_)
            | HamError::BadTag { .. }
            | HamError::UnknownBackendKind(_)
            | HamError::BadBackendParam { .. } => ApiError::new(ErrorCode::InvalidManifest, e.to_string()),
            HamError::UnknownResource(_) => ApiError::new(ErrorCode::ResourceError, e.to_string()),
            HamError::NotDeployable { .. } | HamError::StaleHandle(_) => ApiError::new(ErrorCode::CommitFailed, e.to_string()),
            HamError::Operator(_) | HamError::NotExecutable(_) => ApiError::new(ErrorCode::BackendError, e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Malformed(_) | PipelineError::Version(_) => ApiError::new(ErrorCode::BadRequest, e.to_string()),
            PipelineError::Graph(g) => g.into(),
        }
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        ApiError::new(ErrorCode::InvalidGraph, e.to_string())
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        let PlanError::InvalidGraph(violations) = &e;
        ApiError::new(ErrorCode::InvalidGraph, e.to_string()).with_details(json!({ "violations": violations }))
    }
}

impl From<CommitError> for ApiError {
    fn from(e: CommitError) -> Self {
        ApiError::new(ErrorCode::CommitFailed, e.to_string())
    }
}

impl From<RunError> for ApiError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::InvalidGraph(v) => PlanError::InvalidGraph(v).into(),
            RunError::PlanInfeasible(report) => {
                ApiError::new(ErrorCode::PlanInfeasible, "no feasible deployment plan").with_details(json!({ "report": report }))
            }
            RunError::CommitFailed(c) => c.into(),
            RunError::Backend(h) => ApiError::new(ErrorCode::BackendError, h.to_string()),
            RunError::Operator { .. } => ApiError::new(ErrorCode::BackendError, e.to_string()),
            RunError::Resource { .. } => ApiError::new(ErrorCode::ResourceError, e.to_string()),
            RunError::InvalidState { .. } => ApiError::new(ErrorCode::InvalidState, e.to_string()),
        }
    }
}
