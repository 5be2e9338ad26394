//! In-process platform state shared by the HTTP service and the CLI.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use hetflow_core::graph::{Demand, Violation, Warning};
use hetflow_core::ham::{HamManifest, HamSummary};
use hetflow_core::matcher::{DeploymentPlan, PlanMode};
use hetflow_core::runtime::{Observer, RunConfig, RunSession, SessionState, SessionStats};
use hetflow_core::{plan_graph, DataflowGraph, PipelineDefinition, Registry};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::{ApiError, ErrorCode};

pub const EVENT_LOG_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    HamLoaded {
        ham_id: String,
        processors: Vec<String>,
    },
    PipelineLoaded {
        pipeline_id: String,
    },
    PlanComputed {
        pipeline_id: String,
        mode: PlanMode,
        complete: bool,
    },
    SessionState {
        session_id: String,
        pipeline_id: String,
        from: SessionState,
        to: SessionState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Milliseconds since the Unix epoch.
    pub ts_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Ring buffer of recent events plus a live feed.
pub struct EventLog {
    inner: Mutex<(u64, VecDeque<Event>)>,
    feed: broadcast::Sender<Event>,
}

impl EventLog {
    fn new() -> Self {
        EventLog {
            inner: Mutex::new((1, VecDeque::new())),
            feed: broadcast::channel(1024).0,
        }
    }

    /// Sequence numbers are assigned and the feed is written under one lock,
    /// so every reader sees the same order.
    pub fn push(&self, kind: EventKind) -> u64 {
        let mut g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let seq = g.0;
        g.0 += 1;
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let event = Event { seq, ts_ms, kind };
        if g.1.len() == EVENT_LOG_CAPACITY {
            g.1.pop_front();
        }
        g.1.push_back(event.clone());
        let _ = self.feed.send(event);
        seq
    }

    /// Buffered events with `seq > since`.
    pub fn since(&self, since: u64) -> Vec<Event> {
        let g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        g.1.iter().filter(|e| e.seq > since).cloned().collect()
    }

    /// The backlog after `since` and a receiver for everything later, taken
    /// atomically.
    pub fn subscribe(&self, since: u64) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let g = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let rx = self.feed.subscribe();
        let backlog = g.1.iter().filter(|e| e.seq > since).cloned().collect();
        (backlog, rx)
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).0 - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorSummary {
    pub id: String,
    pub ham_id: String,
    pub tag: String,
    pub capacity: Demand,
    pub occupancy: Demand,
    pub backend_kind: String,
    pub deployments: usize,
    pub reconfigurations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub id: String,
    pub shells: Vec<String>,
    pub implementations: usize,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub pipeline_id: String,
    #[serde(flatten)]
    pub stats: SessionStats,
}

struct StoredPipeline {
    definition: PipelineDefinition,
    graph: Arc<DataflowGraph>,
}

struct SessionRecord {
    pipeline_id: String,
    session: Arc<RunSession>,
}

/// Everything the control surface manages.
pub struct Platform {
    registry: Arc<Registry>,
    pipelines: Mutex<BTreeMap<String, StoredPipeline>>,
    sessions: Mutex<Vec<(String, SessionRecord)>>,
    next_session: AtomicU64,
    events: Arc<EventLog>,
    channel_capacity: usize,
}

impl Default for Platform {
    fn default() -> Self {
        Self::new()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Platform {
    pub fn new() -> Self {
        Platform {
            registry: Arc::new(Registry::new()),
            pipelines: Mutex::new(BTreeMap::new()),
            sessions: Mutex::new(Vec::new()),
            next_session: AtomicU64::new(1),
            events: Arc::new(EventLog::new()),
            channel_capacity: RunConfig::default().channel_capacity,
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn load_ham(&self, manifest: &HamManifest) -> Result<HamSummary, ApiError> {
        if manifest.v != 1 {
            return Err(ApiError::new(ErrorCode::BadRequest, format!("unsupported manifest version {}", manifest.v)));
        }
        let summary = self.registry.load_ham(manifest)?;
        self.events.push(EventKind::HamLoaded {
            ham_id: summary.ham_id.clone(),
            processors: summary.processors.clone(),
        });
        Ok(summary)
    }

    pub fn processors(&self) -> Vec<ProcessorSummary> {
        self.registry
            .snapshot()
            .into_iter()
            .map(|p| ProcessorSummary {
                id: p.id,
                ham_id: p.ham_id,
                tag: p.accept_tag.to_string(),
                capacity: p.capacity,
                occupancy: p.occupancy,
                backend_kind: p.backend_kind.as_str().to_string(),
                deployments: p.deployments.len(),
                reconfigurations: p.reconfigurations,
            })
            .collect()
    }

    fn summary(id: &str, graph: &DataflowGraph) -> PipelineSummary {
        PipelineSummary {
            id: id.to_string(),
            shells: graph.shells.keys().cloned().collect(),
            implementations: graph.implementations.len(),
            violations: graph.validate(),
            warnings: graph.warnings(),
        }
    }

    /// Stores a pipeline. Graphs with violations are kept so they can be
    /// inspected; planning them fails with `invalid_graph`.
    pub fn load_pipeline(&self, definition: PipelineDefinition) -> Result<PipelineSummary, ApiError> {
        let graph = definition.build_graph()?;
        let summary = Self::summary(&definition.id, &graph);
        {
            let mut p = lock(&self.pipelines);
            if p.contains_key(&definition.id) {
                return Err(ApiError::new(ErrorCode::Conflict, format!("pipeline {} is already loaded", definition.id)));
            }
            p.insert(
                definition.id.clone(),
                StoredPipeline {
                    definition,
                    graph: Arc::new(graph),
                },
            );
        }
        self.events.push(EventKind::PipelineLoaded {
            pipeline_id: summary.id.clone(),
        });
        Ok(summary)
    }

    pub fn pipelines(&self) -> Vec<PipelineSummary> {
        lock(&self.pipelines)
            .iter()
            .map(|(id, p)| Self::summary(id, &p.graph))
            .collect()
    }

    pub fn pipeline_definition(&self, id: &str) -> Result<PipelineDefinition, ApiError> {
        lock(&self.pipelines)
            .get(id)
            .map(|p| p.definition.clone())
            .ok_or_else(|| ApiError::not_found("pipeline", id))
    }

    fn graph(&self, id: &str) -> Result<Arc<DataflowGraph>, ApiError> {
        lock(&self.pipelines)
            .get(id)
            .map(|p| p.graph.clone())
            .ok_or_else(|| ApiError::not_found("pipeline", id))
    }

    /// Plans against current occupancy without deploying. An infeasible
    /// plan is a successful answer carrying its report.
    pub fn plan(&self, pipeline_id: &str, mode: PlanMode) -> Result<DeploymentPlan, ApiError> {
        let graph = self.graph(pipeline_id)?;
        let plan = plan_graph(&graph, &self.registry.snapshot(), mode)?;
        self.events.push(EventKind::PlanComputed {
            pipeline_id: pipeline_id.to_string(),
            mode,
            complete: plan.is_complete(),
        });
        Ok(plan)
    }

    /// Creates and starts a session. A session whose start fails is kept
    /// in the failed state and its id is reported in the error details.
    pub fn start(&self, pipeline_id: &str, mode: PlanMode) -> Result<SessionView, ApiError> {
        let graph = self.graph(pipeline_id)?;
        let session_id = format!("run-{}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let log = self.events.clone();
        let pid = pipeline_id.to_string();
        let observer: Observer = Arc::new(move |e| {
            log.push(EventKind::SessionState {
                session_id: e.session_id.clone(),
                pipeline_id: pid.clone(),
                from: e.from,
                to: e.to,
                detail: e.detail.clone(),
            });
        });
        let config = RunConfig {
            channel_capacity: self.channel_capacity,
            mode,
        };
        let mut session = RunSession::new(&session_id, graph, self.registry.clone(), config).with_observer(observer);
        let started = session.start();
        let session = Arc::new(session);
        lock(&self.sessions).push((
            session_id.clone(),
            SessionRecord {
                pipeline_id: pipeline_id.to_string(),
                session: session.clone(),
            },
        ));
        match started {
            Ok(()) => Ok(SessionView {
                pipeline_id: pipeline_id.to_string(),
                stats: session.stats(),
            }),
            Err(e) => {
                let mut err: ApiError = e.into();
                let mut details = err.details.take().unwrap_or_else(|| serde_json::json!({}));
                details["session_id"] = session_id.into();
                Err(err.with_details(details))
            }
        }
    }

    fn record(&self, session_id: &str) -> Result<(String, Arc<RunSession>), ApiError> {
        lock(&self.sessions)
            .iter()
            .find(|(id, _)| id == session_id)
            .map(|(_, r)| (r.pipeline_id.clone(), r.session.clone()))
            .ok_or_else(|| ApiError::not_found("session", session_id))
    }

    /// Blocks until the session has drained and released its deployments.
    pub fn stop(&self, session_id: &str) -> Result<SessionView, ApiError> {
        let (pipeline_id, session) = self.record(session_id)?;
        let stats = session.stop()?;
        Ok(SessionView { pipeline_id, stats })
    }

    pub fn session(&self, session_id: &str) -> Result<SessionView, ApiError> {
        let (pipeline_id, session) = self.record(session_id)?;
        Ok(SessionView {
            pipeline_id,
            stats: session.stats(),
        })
    }

    /// The underlying session, for callers that want to wait on it.
    pub fn session_handle(&self, session_id: &str) -> Result<Arc<RunSession>, ApiError> {
        self.record(session_id).map(|(_, s)| s)
    }

    pub fn sessions(&self) -> Vec<SessionView> {
        lock(&self.sessions)
            .iter()
            .map(|(_, r)| SessionView {
                pipeline_id: r.pipeline_id.clone(),
                stats: r.session.stats(),
            })
            .collect()
    }
}
