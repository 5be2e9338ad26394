//! Run sessions: plan, deploy, wire channels, execute, tear down.
//!
//! Every edge, source binding and sink binding gets its own bounded
//! [`Channel`]. Each shell runs on its own thread and fires strictly: one
//! token from every input, one token to every output. When any input reports
//! end-of-stream the shell drains the rest of its inputs, closes its outputs
//! and exits, so closure cascades downstream. A supervisor thread joins the
//! workers, undeploys every handle and moves the session to its final state.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, OnceLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, DEFAULT_CAPACITY};
use crate::graph::{DataflowGraph, Direction, Violation};
use crate::ham::{DeployTarget, DeploymentHandle, HamError, Registry, Runner};
use crate::matcher::{commit_plan, plan_graph, CommitError, DeploymentPlan, InfeasibilityReport, PlanError, PlanMode};
use crate::operator::{Operator, OperatorError, Value};
use crate::resource::{SinkWriter, SourceReader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Created,
    Running,
    Stopping,
    Stopped,
    Failed,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Stopped | SessionState::Failed)
    }

    /// created→running→stopping→stopped, and any non-terminal state→failed.
    pub fn can_become(self, to: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, to),
            (Created, Running) | (Running, Stopping) | (Stopping, Stopped)
        ) || (to == Failed && !self.is_terminal())
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionState::Created => "created",
            SessionState::Running => "running",
            SessionState::Stopping => "stopping",
            SessionState::Stopped => "stopped",
            SessionState::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// One state transition of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub from: SessionState,
    pub to: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub type Observer = Arc<dyn Fn(&SessionEvent) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub channel_capacity: usize,
    pub mode: PlanMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            channel_capacity: DEFAULT_CAPACITY,
            mode: PlanMode::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error("graph is not valid: {0:?}")]
    InvalidGraph(Vec<Violation>),
    #[error("{0}")]
    PlanInfeasible(InfeasibilityReport),
    #[error(transparent)]
    CommitFailed(CommitError),
    #[error(transparent)]
    Backend(#[from] HamError),
    #[error("shell {shell}: {source}")]
    Operator {
        shell: String,
        #[source]
        source: OperatorError,
    },
    #[error("binding {binding}: {message}")]
    Resource { binding: String, message: String },
    #[error("cannot {operation} a session in state {state}")]
    InvalidState {
        state: SessionState,
        operation: &'static str,
    },
}

/// Point-in-time view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub session_id: String,
    pub state: SessionState,
    /// Tokens accepted per channel, keyed `from->to`.
    pub tokens_per_edge: BTreeMap<String, u64>,
    /// Tokens taken out per channel.
    pub consumed_per_edge: BTreeMap<String, u64>,
    /// Firings per shell.
    pub processed_per_shell: BTreeMap<String, u64>,
    /// Tokens drained without firing after a sibling input ended.
    pub discarded_per_shell: BTreeMap<String, u64>,
    /// Contents of `collect:` sinks keyed by the bound output port.
    pub sinks: BTreeMap<String, Vec<Value>>,
    /// Sequence numbers received out of order; always 0 unless a channel
    /// misbehaves.
    pub sequence_errors: u64,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Status {
    state: SessionState,
    error: Option<String>,
    started: Option<Instant>,
    finished: Option<Instant>,
    done: bool,
}

struct Wiring {
    channels: Vec<(String, Arc<Channel<Value>>)>,
    processed: BTreeMap<String, AtomicU64>,
    discarded: BTreeMap<String, AtomicU64>,
}

struct Shared {
    id: String,
    status: Mutex<Status>,
    changed: Condvar,
    cancel: AtomicBool,
    observer: Option<Observer>,
    wiring: OnceLock<Wiring>,
    sinks: Mutex<BTreeMap<String, Vec<Value>>>,
    sequence_errors: AtomicU64,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Status> {
        self.status.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Applies a legal transition and emits its event under the status lock,
    /// so observers see transitions in the order they happened.
    fn transition_locked(&self, st: &mut Status, to: SessionState, detail: Option<String>) -> bool {
        if !st.state.can_become(to) {
            return false;
        }
        let from = st.state;
        st.state = to;
        if let Some(obs) = &self.observer {
            obs(&SessionEvent {
                session_id: self.id.clone(),
                from,
                to,
                detail,
            });
        }
        self.changed.notify_all();
        true
    }

    fn transition(&self, to: SessionState, detail: Option<String>) -> bool {
        let mut st = self.lock();
        self.transition_locked(&mut st, to, detail)
    }

    /// Records the first error, fails the session and closes every channel
    /// so blocked workers wake up and exit.
    fn fail(&self, message: String) {
        {
            let mut st = self.lock();
            if st.error.is_none() {
                st.error = Some(message.clone());
            }
            self.transition_locked(&mut st, SessionState::Failed, Some(message));
        }
        if let Some(w) = self.wiring.get() {
            for (_, ch) in &w.channels {
                ch.close();
            }
        }
    }

    fn count(map: &BTreeMap<String, AtomicU64>, key: &str, by: u64) {
        if let Some(c) = map.get(key) {
            c.fetch_add(by, Ordering::Relaxed);
        }
    }
}

/// A graph bound to a registry, from planning to teardown.
pub struct RunSession {
    shared: Arc<Shared>,
    graph: Arc<DataflowGraph>,
    registry: Arc<Registry>,
    config: RunConfig,
    plan: Option<DeploymentPlan>,
    handles: Vec<DeploymentHandle>,
    supervisor: Mutex<Option<JoinHandle<()>>>,
}

impl fmt::Debug for RunSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunSession")
            .field("id", &self.shared.id)
            .field("state", &self.state())
            .finish()
    }
}

/// Creates and starts a session in one step.
pub fn start_run(
    id: &str,
    graph: Arc<DataflowGraph>,
    registry: Arc<Registry>,
    config: RunConfig,
) -> Result<RunSession, RunError> {
    let mut session = RunSession::new(id, graph, registry, config);
    session.start()?;
    Ok(session)
}

struct ShellWork {
    id: String,
    runner: Box<dyn Runner>,
    inputs: Vec<Arc<Channel<Value>>>,
    /// per output port: the edge and/or sink channels it feeds, and the
    /// port's datatype
    outputs: Vec<(Vec<Arc<Channel<Value>>>, String)>,
}

struct SourceWork {
    key: String,
    reader: SourceReader,
    out: Arc<Channel<Value>>,
}

struct SinkWork {
    key: String,
    port: String,
    writer: SinkWriter,
    input: Arc<Channel<Value>>,
}

impl RunSession {
    pub fn new(id: &str, graph: Arc<DataflowGraph>, registry: Arc<Registry>, config: RunConfig) -> Self {
        RunSession {
            shared: Arc::new(Shared {
                id: id.to_string(),
                status: Mutex::new(Status {
                    state: SessionState::Created,
                    error: None,
                    started: None,
                    finished: None,
                    done: false,
                }),
                changed: Condvar::new(),
                cancel: AtomicBool::new(false),
                observer: None,
                wiring: OnceLock::new(),
                sinks: Mutex::new(BTreeMap::new()),
                sequence_errors: AtomicU64::new(0),
            }),
            graph,
            registry,
            config,
            plan: None,
            handles: Vec::new(),
            supervisor: Mutex::new(None),
        }
    }

    /// Installs a state-change observer. Only effective before `start`.
    pub fn with_observer(mut self, observer: Observer) -> Self {
        if let Some(shared) = Arc::get_mut(&mut self.shared) {
            shared.observer = Some(observer);
        }
        self
    }

    pub fn id(&self) -> &str {
        &self.shared.id
    }

    pub fn state(&self) -> SessionState {
        self.shared.lock().state
    }

    pub fn plan(&self) -> Option<&DeploymentPlan> {
        self.plan.as_ref()
    }

    pub fn handles(&self) -> &[DeploymentHandle] {
        &self.handles
    }

    pub fn graph(&self) -> &DataflowGraph {
        &self.graph
    }

    /// Plans, commits, instantiates runners, wires channels and launches the
    /// workers. On any error the session is failed and nothing stays
    /// deployed.
    pub fn start(&mut self) -> Result<(), RunError> {
        let state = self.state();
        if state != SessionState::Created {
            return Err(RunError::InvalidState {
                state,
                operation: "start",
            });
        }
        match self.prepare() {
            Ok(work) => {
                self.launch(work);
                Ok(())
            }
            Err(e) => {
                for h in self.handles.drain(..).rev() {
                    let _ = self.registry.undeploy(&h);
                }
                let mut st = self.shared.lock();
                st.error = Some(e.to_string());
                st.done = true;
                self.shared
                    .transition_locked(&mut st, SessionState::Failed, Some(e.to_string()));
                Err(e)
            }
        }
    }

    fn prepare(&mut self) -> Result<(Vec<SourceWork>, Vec<ShellWork>, Vec<SinkWork>), RunError> {
        let graph = Arc::clone(&self.graph);
        let plan = plan_graph(&graph, &self.registry.snapshot(), self.config.mode).map_err(|e| match e {
            PlanError::InvalidGraph(v) => RunError::InvalidGraph(v),
        })?;
        if let Some(report) = &plan.report {
            return Err(RunError::PlanInfeasible(report.clone()));
        }
        self.handles = commit_plan(&plan, &graph, &*self.registry).map_err(RunError::CommitFailed)?;
        self.plan = Some(plan);

        let cap = self.config.channel_capacity;
        let mut channels: Vec<(String, Arc<Channel<Value>>)> = Vec::new();
        let mut inputs: BTreeMap<(String, String), Arc<Channel<Value>>> = BTreeMap::new();
        let mut outputs: BTreeMap<(String, String), Vec<Arc<Channel<Value>>>> = BTreeMap::new();
        let key = |p: &crate::graph::PortRef| (p.shell.clone(), p.port.clone());

        for e in &graph.edges {
            let ch = Arc::new(Channel::new(cap));
            channels.push((e.to_string(), ch.clone()));
            inputs.insert(key(&e.to), ch.clone());
            outputs.entry(key(&e.from)).or_default().push(ch);
        }

        let mut sources = Vec::new();
        for s in &graph.sources {
            let name = format!("{}->{}", s.resource, s.to);
            let datatype = &graph.shells[&s.to.shell]
                .port(Direction::Input, &s.to.port)
                .expect("validated binding")
                .datatype;
            let reader = self
                .registry
                .resolve_resource(&s.resource)
                .map_err(RunError::from)
                .and_then(|spec| {
                    SourceReader::open(&spec, datatype).map_err(|e| RunError::Resource {
                        binding: name.clone(),
                        message: e.to_string(),
                    })
                })?;
            let ch = Arc::new(Channel::new(cap));
            channels.push((name.clone(), ch.clone()));
            inputs.insert(key(&s.to), ch.clone());
            sources.push(SourceWork {
                key: name,
                reader,
                out: ch,
            });
        }

        let mut sinks = Vec::new();
        for s in &graph.sinks {
            let name = format!("{}->{}", s.from, s.resource);
            let writer = self
                .registry
                .resolve_resource(&s.resource)
                .map_err(RunError::from)
                .and_then(|spec| {
                    SinkWriter::open(&spec).map_err(|e| RunError::Resource {
                        binding: name.clone(),
                        message: e.to_string(),
                    })
                })?;
            let ch = Arc::new(Channel::new(cap));
            channels.push((name.clone(), ch.clone()));
            outputs.entry(key(&s.from)).or_default().push(ch.clone());
            sinks.push(SinkWork {
                key: name,
                port: s.from.to_string(),
                writer,
                input: ch,
            });
        }

        let mut shells = Vec::new();
        let assignments = &self.plan.as_ref().expect("set above").assignments;
        for (shell_id, shell) in &graph.shells {
            let handle = self
                .handles
                .iter()
                .find(|h| h.implementation_id == assignments[shell_id].implementation_id)
                .expect("one handle per assignment");
            let runner = self.registry.instantiate_runner(handle)?;
            runner
                .operator()
                .check_arity(shell.inputs.len(), shell.outputs.len())
                .map_err(|source| RunError::Operator {
                    shell: shell_id.clone(),
                    source,
                })?;
            shells.push(ShellWork {
                id: shell_id.clone(),
                runner,
                inputs: shell
                    .inputs
                    .iter()
                    .map(|p| inputs[&(shell_id.clone(), p.name.clone())].clone())
                    .collect(),
                outputs: shell
                    .outputs
                    .iter()
                    .map(|p| {
                        let chans = outputs
                            .get(&(shell_id.clone(), p.name.clone()))
                            .cloned()
                            .unwrap_or_default();
                        (chans, p.datatype.clone())
                    })
                    .collect(),
            });
        }

        let wiring = Wiring {
            channels,
            processed: graph.shells.keys().map(|k| (k.clone(), AtomicU64::new(0))).collect(),
            discarded: graph.shells.keys().map(|k| (k.clone(), AtomicU64::new(0))).collect(),
        };
        {
            let mut sink_buffers = self.shared.sinks.lock().unwrap_or_else(|e| e.into_inner());
            for s in &sinks {
                if s.writer.collected().is_some() {
                    sink_buffers.insert(s.port.clone(), Vec::new());
                }
            }
        }
        if self.shared.wiring.set(wiring).is_err() {
            unreachable!("a session is started at most once");
        }
        Ok((sources, shells, sinks))
    }

    fn launch(&mut self, (sources, shells, sinks): (Vec<SourceWork>, Vec<ShellWork>, Vec<SinkWork>)) {
        {
            let mut st = self.shared.lock();
            st.started = Some(Instant::now());
            self.shared
                .transition_locked(&mut st, SessionState::Running, None);
        }
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        for w in sources {
            let shared = Arc::clone(&self.shared);
            workers.push(thread::spawn(move || run_source(&shared, w)));
        }
        for w in shells {
            let shared = Arc::clone(&self.shared);
            workers.push(thread::spawn(move || run_shell(&shared, w)));
        }
        for w in sinks {
            let shared = Arc::clone(&self.shared);
            workers.push(thread::spawn(move || run_sink(&shared, w)));
        }
        let shared = Arc::clone(&self.shared);
        let registry = Arc::clone(&self.registry);
        let handles = self.handles.clone();
        let supervisor = thread::spawn(move || {
            for w in workers {
                if w.join().is_err() {
                    shared.fail("worker panicked".into());
                }
            }
            for h in handles.iter().rev() {
                let _ = registry.undeploy(h);
            }
            let mut st = shared.lock();
            if st.state == SessionState::Running {
                shared.transition_locked(&mut st, SessionState::Stopping, None);
            }
            if st.state == SessionState::Stopping {
                shared.transition_locked(&mut st, SessionState::Stopped, None);
            }
            st.finished = Some(Instant::now());
            st.done = true;
            shared.changed.notify_all();
        });
        *self.supervisor.lock().unwrap_or_else(|e| e.into_inner()) = Some(supervisor);
    }

    /// Stops sources, lets in-flight tokens drain, undeploys everything and
    /// returns the final stats. A session that already finished returns its
    /// final stats unchanged.
    pub fn stop(&self) -> Result<SessionStats, RunError> {
        {
            let st = self.shared.lock();
            if st.state == SessionState::Created {
                return Err(RunError::InvalidState {
                    state: st.state,
                    operation: "stop",
                });
            }
        }
        self.shared.cancel.store(true, Ordering::SeqCst);
        self.shared.transition(SessionState::Stopping, Some("stop requested".into()));
        self.wait_done(None);
        self.join_supervisor();
        Ok(self.stats())
    }

    /// Waits for the session to finish on its own. Returns false on timeout.
    pub fn wait(&self, timeout: Duration) -> bool {
        let finished = self.wait_done(Some(timeout));
        if finished {
            self.join_supervisor();
        }
        finished
    }

    fn wait_done(&self, timeout: Option<Duration>) -> bool {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.shared.lock();
        while !st.done {
            match deadline {
                None => st = self.shared.changed.wait(st).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return false;
                    }
                    st = self
                        .shared
                        .changed
                        .wait_timeout(st, d - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
            }
        }
        true
    }

    fn join_supervisor(&self) {
        let handle = self.supervisor.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    pub fn is_done(&self) -> bool {
        self.shared.lock().done
    }

    pub fn stats(&self) -> SessionStats {
        let (state, error, duration) = {
            let st = self.shared.lock();
            let duration = match (st.started, st.finished) {
                (Some(s), Some(f)) => f - s,
                (Some(s), None) => s.elapsed(),
                _ => Duration::ZERO,
            };
            (st.state, st.error.clone(), duration)
        };
        let mut stats = SessionStats {
            session_id: self.shared.id.clone(),
            state,
            tokens_per_edge: BTreeMap::new(),
            consumed_per_edge: BTreeMap::new(),
            processed_per_shell: BTreeMap::new(),
            discarded_per_shell: BTreeMap::new(),
            sinks: self.shared.sinks.lock().unwrap_or_else(|e| e.into_inner()).clone(),
            sequence_errors: self.shared.sequence_errors.load(Ordering::Relaxed),
            duration_ms: duration.as_millis() as u64,
            error,
        };
        match self.shared.wiring.get() {
            Some(w) => {
                for (name, ch) in &w.channels {
                    let c = ch.counts();
                    stats.tokens_per_edge.insert(name.clone(), c.produced);
                    stats.consumed_per_edge.insert(name.clone(), c.consumed);
                }
                for (k, v) in &w.processed {
                    stats.processed_per_shell.insert(k.clone(), v.load(Ordering::Relaxed));
                }
                for (k, v) in &w.discarded {
                    stats.discarded_per_shell.insert(k.clone(), v.load(Ordering::Relaxed));
                }
            }
            None => {
                for k in self.graph.shells.keys() {
                    stats.processed_per_shell.insert(k.clone(), 0);
                    stats.discarded_per_shell.insert(k.clone(), 0);
                }
            }
        }
        stats
    }
}

fn run_source(shared: &Shared, mut w: SourceWork) {
    for item in &mut w.reader {
        if shared.cancel.load(Ordering::SeqCst) {
            break;
        }
        match item {
            Ok(v) => {
                if w.out.put(v).is_err() {
                    break;
                }
            }
            Err(e) => {
                shared.fail(format!("source {}: {e}", w.key));
                break;
            }
        }
    }
    w.out.close();
}

fn run_shell(shared: &Shared, mut w: ShellWork) {
    let wiring = shared.wiring.get().expect("wired before launch");
    let mut expected = vec![0u64; w.inputs.len()];
    'firing: loop {
        let mut values = Vec::with_capacity(w.inputs.len());
        for (i, ch) in w.inputs.iter().enumerate() {
            match ch.get() {
                Some(tok) => {
                    if tok.seq != expected[i] {
                        shared.sequence_errors.fetch_add(1, Ordering::Relaxed);
                    }
                    expected[i] = tok.seq + 1;
                    values.push(tok.payload);
                }
                None => {
                    // concurrently: a producer blocked on one full input
                    // may be the only feeder of another
                    let dropped = AtomicU64::new(values.len() as u64);
                    thread::scope(|s| {
                        for ch in &w.inputs {
                            let dropped = &dropped;
                            s.spawn(move || {
                                while ch.get().is_some() {
                                    dropped.fetch_add(1, Ordering::Relaxed);
                                }
                            });
                        }
                    });
                    Shared::count(&wiring.discarded, &w.id, dropped.into_inner());
                    break 'firing;
                }
            }
        }
        let produced = match w.runner.fire(&values, w.outputs.len()) {
            Ok(p) => p,
            Err(e) => {
                shared.fail(format!("shell {}: {e}", w.id));
                break;
            }
        };
        Shared::count(&wiring.processed, &w.id, 1);
        for (value, (chans, datatype)) in produced.into_iter().zip(&w.outputs) {
            if value.datatype() != datatype {
                shared.fail(format!(
                    "shell {} produced {} on a {datatype} port",
                    w.id,
                    value.datatype()
                ));
                break 'firing;
            }
            for ch in chans {
                if ch.put(value.clone()).is_err() {
                    break 'firing;
                }
            }
        }
    }
    for (chans, _) in &w.outputs {
        for ch in chans {
            ch.close();
        }
    }
}

fn run_sink(shared: &Shared, mut w: SinkWork) {
    let collect = w.writer.collected().is_some();
    let mut expected = 0;
    while let Some(tok) = w.input.get() {
        if tok.seq != expected {
            shared.sequence_errors.fetch_add(1, Ordering::Relaxed);
        }
        expected = tok.seq + 1;
        if collect {
            shared
                .sinks
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .entry(w.port.clone())
                .or_default()
                .push(tok.payload);
        } else if let Err(e) = w.writer.write(tok.payload) {
            shared.fail(format!("sink {}: {e}", w.key));
            break;
        }
    }
    if let Err(e) = w.writer.finish() {
        shared.fail(format!("sink {}: {e}", w.key));
    }
}

/// Resolves the operator a planned shell will run, without deploying.
pub fn planned_operator(
    graph: &DataflowGraph,
    plan: &DeploymentPlan,
    shell_id: &str,
) -> Option<Result<Operator, OperatorError>> {
    let a = plan.assignments.get(shell_id)?;
    let imp = graph.implementations.get(&a.implementation_id)?;
    Some(Operator::resolve(imp.payload.operator()))
}
