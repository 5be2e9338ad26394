//! Heterogeneous dataflow deployment.
//!
//! Algorithm shells declare typed ports and own several implementations,
//! each tagged for the kind of processor it runs on. Hardware abstraction
//! modules publish virtual processors with an accept tag and a capacity
//! ledger. The matcher places every shell on a processor whose tag is an
//! ancestor of (or equal to) the implementation's tag and which has room for
//! its demand; the runtime then streams tokens through bounded channels
//! between the deployed shells.
//!
//! Modules, bottom up:
//! - [`taxonomy`]: tags, the ancestor rule, the descriptor tree index
//! - [`graph`]: shells, implementations, the dataflow graph
//! - [`ham`]: manifests, the processor registry, execution backends
//! - [`matcher`]: single-shell matching, whole-graph planning, commit
//! - [`channel`] and [`runtime`]: data exchange and run sessions

pub mod channel;
pub mod graph;
pub mod ham;
pub mod matcher;
pub mod operator;
pub mod pipeline;
pub mod resource;
pub mod runtime;
pub mod sequential;
pub mod taxonomy;

pub use graph::{AlgorithmImplementation, AlgorithmShell, DataflowGraph, Payload, PortRef};
pub use ham::{BackendKind, DeployTarget, DeploymentHandle, HamManifest, Registry, VirtualProcessor};
pub use matcher::{commit_plan, match_one, plan_graph, DeploymentPlan, PlanMode};
pub use operator::Value;
pub use pipeline::PipelineDefinition;
pub use runtime::{start_run, RunConfig, RunSession, SessionState, SessionStats};
pub use taxonomy::{is_ancestor_or_equal, Tag, TagIndex};
