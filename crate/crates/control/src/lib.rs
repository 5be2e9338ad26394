//! Control surface for the hetflow runtime: an in-process [`Platform`]
//! holding the registry, pipelines, sessions and event log, and an HTTP
//! router exposing it.

pub mod error;
pub mod http;
pub mod platform;

pub use error::{ApiError, ErrorCode};
pub use http::{router, DEFAULT_PORT, LISTEN_ENV};
pub use platform::{Event, EventKind, Platform, PipelineSummary, ProcessorSummary, SessionView};
