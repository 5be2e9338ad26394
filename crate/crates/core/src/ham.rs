//! Hardware abstraction modules and the virtual processors they publish.
//!
//! A [`HamManifest`] describes one module: a set of virtual processors, each
//! with an accept tag, an integer capacity ledger and a backend. Loading a
//! manifest registers its processors in a shared [`Registry`], which answers
//! compatibility/deployability queries and performs deploy/undeploy with the
//! capacity check and commit under one lock.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::graph::{is_token, AlgorithmImplementation, Demand, Payload};
use crate::operator::{EvalError, Operator, OperatorError, OperatorState, Value};
use crate::resource::ResourceSpec;
use crate::taxonomy::{is_ancestor_or_equal, Tag, TagError, TagIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HostExecutor,
    SimulatedFpga,
    SourceSink,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::HostExecutor => "host-executor",
            BackendKind::SimulatedFpga => "simulated-fpga",
            BackendKind::SourceSink => "source-sink",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = HamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "host-executor" => Ok(BackendKind::HostExecutor),
            "simulated-fpga" => Ok(BackendKind::SimulatedFpga),
            "source-sink" => Ok(BackendKind::SourceSink),
            other => Err(HamError::UnknownBackendKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessorManifest {
    pub id: String,
    pub accept_tag: String,
    #[serde(default)]
    pub capacity: Demand,
    pub backend_kind: String,
    #[serde(default)]
    pub backend_params: Map<String, Json>,
}

/// On-disk HAM manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamManifest {
    #[serde(default = "default_version")]
    pub v: u32,
    pub ham_id: String,
    pub name: String,
    pub processors: Vec<ProcessorManifest>,
}

fn default_version() -> u32 {
    1
}

impl HamManifest {
    pub fn from_json(text: &str) -> Result<Self, HamError> {
        serde_json::from_str(text).map_err(|e| HamError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HamError {
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("HAM {0} is already loaded")]
    DuplicateHam(String),
    #[error("processor id {0} is already registered")]
    DuplicateProcessorId(String),
    #[error("processor {processor}: bad tag: {source}")]
    BadTag {
        processor: String,
        #[source]
        source: TagError,
    },
    #[error("unknown backend kind {0:?}")]
    UnknownBackendKind(String),
    #[error("processor {processor}: bad backend parameter {param}")]
    BadBackendParam { processor: String, param: String },
    #[error("unknown processor {0}")]
    UnknownProcessor(String),
    #[error("implementation {implementation} is not deployable on {processor}")]
    NotDeployable {
        processor: String,
        implementation: String,
    },
    #[error("stale deployment handle {0}")]
    StaleHandle(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("processor {0} has a source-sink backend and cannot execute implementations")]
    NotExecutable(String),
    #[error("unknown resource {0:?}")]
    UnknownResource(String),
}

/// A virtual processor with its live capacity ledger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VirtualProcessor {
    pub id: String,
    pub ham_id: String,
    pub accept_tag: Tag,
    pub capacity: Demand,
    pub occupancy: Demand,
    pub deployments: BTreeSet<String>,
    pub backend_kind: BackendKind,
    pub backend_params: Map<String, Json>,
    pub reconfigurations: u64,
}

/// True when every demanded resource fits in what is left. Resources the
/// capacity map does not mention have capacity 0.
pub fn fits(capacity: &Demand, occupancy: &Demand, demand: &Demand) -> bool {
    demand.iter().all(|(r, d)| {
        let used = occupancy.get(r).copied().unwrap_or(0);
        let cap = capacity.get(r).copied().unwrap_or(0);
        used.checked_add(*d).is_some_and(|total| total <= cap)
    })
}

impl VirtualProcessor {
    pub fn is_compatible(&self, implementation: &AlgorithmImplementation) -> bool {
        is_ancestor_or_equal(&self.accept_tag, &implementation.compat_tag)
    }

    /// Compatibility first, then capacity. Pure.
    pub fn can_deploy(&self, implementation: &AlgorithmImplementation) -> bool {
        self.is_compatible(implementation)
            && fits(&self.capacity, &self.occupancy, &implementation.demand)
    }

    fn reconfig_delay(&self) -> Duration {
        let ms = self
            .backend_params
            .get("reconfig_delay_ms")
            .and_then(Json::as_u64)
            .unwrap_or(0);
        Duration::from_millis(ms)
    }
}

/// Proof of a live deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentHandle {
    pub handle_id: String,
    pub processor_id: String,
    pub implementation_id: String,
    pub demand: Demand,
}

/// Anything deployments can be committed against.
pub trait DeployTarget {
    fn deploy(
        &self,
        processor_id: &str,
        implementation: &AlgorithmImplementation,
    ) -> Result<DeploymentHandle, HamError>;

    fn undeploy(&self, handle: &DeploymentHandle) -> Result<(), HamError>;
}

#[derive(Debug, Clone)]
struct LiveDeployment {
    handle: DeploymentHandle,
    payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HamSummary {
    pub ham_id: String,
    pub name: String,
    pub processors: Vec<String>,
}

#[derive(Default)]
struct Inner {
    processors: Vec<VirtualProcessor>,
    positions: HashMap<String, usize>,
    index: TagIndex<String>,
    hams: Vec<HamSummary>,
    live: BTreeMap<String, LiveDeployment>,
    next_handle: u64,
}

impl Inner {
    fn processor(&self, id: &str) -> Result<&VirtualProcessor, HamError> {
        self.positions
            .get(id)
            .map(|i| &self.processors[*i])
            .ok_or_else(|| HamError::UnknownProcessor(id.to_string()))
    }

    fn processor_mut(&mut self, id: &str) -> Result<&mut VirtualProcessor, HamError> {
        match self.positions.get(id) {
            Some(i) => Ok(&mut self.processors[*i]),
            None => Err(HamError::UnknownProcessor(id.to_string())),
        }
    }
}

/// Shared processor registry. All operations are linearizable.
#[derive(Default)]
pub struct Registry {
    inner: Mutex<Inner>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("processors", &self.snapshot().len())
            .finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers every processor of the manifest, or none of them.
    pub fn load_ham(&self, manifest: &HamManifest) -> Result<HamSummary, HamError> {
        if !is_token(&manifest.ham_id) {
            return Err(HamError::InvalidId(manifest.ham_id.clone()));
        }
        let mut inner = self.lock();
        if inner.hams.iter().any(|h| h.ham_id == manifest.ham_id) {
            return Err(HamError::DuplicateHam(manifest.ham_id.clone()));
        }
        let mut fresh = Vec::with_capacity(manifest.processors.len());
        let mut seen = BTreeSet::new();
        for p in &manifest.processors {
            if !is_token(&p.id) {
                return Err(HamError::InvalidId(p.id.clone()));
            }
            if inner.positions.contains_key(&p.id) || !seen.insert(p.id.as_str()) {
                return Err(HamError::DuplicateProcessorId(p.id.clone()));
            }
            let accept_tag = Tag::parse(&p.accept_tag).map_err(|source| HamError::BadTag {
                processor: p.id.clone(),
                source,
            })?;
            let backend_kind: BackendKind = p.backend_kind.parse()?;
            if let Some(bad) = p.capacity.keys().find(|k| !is_token(k)) {
                return Err(HamError::InvalidId(bad.clone()));
            }
            check_backend_params(&p.id, backend_kind, &p.backend_params)?;
            fresh.push(VirtualProcessor {
                id: p.id.clone(),
                ham_id: manifest.ham_id.clone(),
                accept_tag,
                occupancy: p.capacity.keys().map(|k| (k.clone(), 0)).collect(),
                capacity: p.capacity.clone(),
                deployments: BTreeSet::new(),
                backend_kind,
                backend_params: p.backend_params.clone(),
                reconfigurations: 0,
            });
        }
        let summary = HamSummary {
            ham_id: manifest.ham_id.clone(),
            name: manifest.name.clone(),
            processors: fresh.iter().map(|p| p.id.clone()).collect(),
        };
        for vp in fresh {
            inner
                .index
                .insert(&vp.accept_tag, vp.id.clone())
                .expect("id uniqueness checked above");
            let pos = inner.processors.len();
            inner.positions.insert(vp.id.clone(), pos);
            inner.processors.push(vp);
        }
        inner.hams.push(summary.clone());
        Ok(summary)
    }

    pub fn hams(&self) -> Vec<HamSummary> {
        self.lock().hams.clone()
    }

    /// Point-in-time copy of every processor, in registration order.
    pub fn snapshot(&self) -> Vec<VirtualProcessor> {
        self.lock().processors.clone()
    }

    pub fn processor(&self, id: &str) -> Result<VirtualProcessor, HamError> {
        self.lock().processor(id).cloned()
    }

    /// Occupancy of every processor keyed by processor id.
    pub fn occupancy(&self) -> BTreeMap<String, Demand> {
        self.lock()
            .processors
            .iter()
            .map(|p| (p.id.clone(), p.occupancy.clone()))
            .collect()
    }

    /// Ids of processors whose accept tag is equal to or an ancestor of
    /// `implementation_tag`, in registration order.
    pub fn compatible_processors(&self, implementation_tag: &Tag) -> Vec<String> {
        let inner = self.lock();
        let mut ids: Vec<String> = inner.index.candidates(implementation_tag).into_iter().collect();
        ids.sort_by_key(|id| inner.positions[id]);
        ids
    }

    pub fn can_deploy(
        &self,
        processor_id: &str,
        implementation: &AlgorithmImplementation,
    ) -> Result<bool, HamError> {
        Ok(self.lock().processor(processor_id)?.can_deploy(implementation))
    }

    pub fn live_handles(&self) -> Vec<DeploymentHandle> {
        self.lock().live.values().map(|d| d.handle.clone()).collect()
    }

    pub fn is_live(&self, handle: &DeploymentHandle) -> bool {
        self.lock().live.contains_key(&handle.handle_id)
    }

    pub fn reconfigurations(&self, processor_id: &str) -> Result<u64, HamError> {
        Ok(self.lock().processor(processor_id)?.reconfigurations)
    }

    /// Builds the executable runner for a live deployment. Simulated FPGAs
    /// pay their configured reconfiguration delay here.
    pub fn instantiate_runner(&self, handle: &DeploymentHandle) -> Result<Box<dyn Runner>, HamError> {
        let (kind, delay, payload) = {
            let inner = self.lock();
            let live = inner
                .live
                .get(&handle.handle_id)
                .ok_or_else(|| HamError::StaleHandle(handle.handle_id.clone()))?;
            let vp = inner.processor(&handle.processor_id)?;
            (vp.backend_kind, vp.reconfig_delay(), live.payload.clone())
        };
        let operator = Operator::resolve(payload.operator())?;
        match kind {
            BackendKind::HostExecutor => Ok(Box::new(HostRunner {
                state: operator.instantiate(),
            })),
            BackendKind::SimulatedFpga => {
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                let blob = match payload {
                    Payload::Bitstream { blob, .. } => Some(blob),
                    Payload::Builtin { .. } => None,
                };
                Ok(Box::new(SimulatedFpgaRunner {
                    state: operator.instantiate(),
                    blob,
                }))
            }
            BackendKind::SourceSink => Err(HamError::NotExecutable(handle.processor_id.clone())),
        }
    }

    /// Resolves a binding resource: built-in schemes pass through, bare
    /// names are looked up in the `resources` map of source-sink processors.
    pub fn resolve_resource(&self, name: &str) -> Result<ResourceSpec, HamError> {
        if ResourceSpec::has_scheme(name) {
            return name
                .parse()
                .map_err(|_| HamError::UnknownResource(name.to_string()));
        }
        let inner = self.lock();
        inner
            .processors
            .iter()
            .filter(|p| p.backend_kind == BackendKind::SourceSink)
            .find_map(|p| {
                p.backend_params
                    .get("resources")
                    .and_then(|r| r.get(name))
                    .and_then(Json::as_str)
            })
            .and_then(|text| text.parse().ok())
            .ok_or_else(|| HamError::UnknownResource(name.to_string()))
    }
}

fn check_backend_params(
    processor: &str,
    kind: BackendKind,
    params: &Map<String, Json>,
) -> Result<(), HamError> {
    let bad = |param: &str| HamError::BadBackendParam {
        processor: processor.to_string(),
        param: param.to_string(),
    };
    match kind {
        BackendKind::SimulatedFpga => {
            if let Some(v) = params.get("reconfig_delay_ms") {
                v.as_u64().ok_or_else(|| bad("reconfig_delay_ms"))?;
            }
        }
        BackendKind::SourceSink => {
            if let Some(v) = params.get("resources") {
                let map = v.as_object().ok_or_else(|| bad("resources"))?;
                for (name, spec) in map {
                    let ok = spec
                        .as_str()
                        .is_some_and(|s| s.parse::<ResourceSpec>().is_ok());
                    if !ok {
                        return Err(bad(&format!("resources.{name}")));
                    }
                }
            }
        }
        BackendKind::HostExecutor => {}
    }
    Ok(())
}

impl DeployTarget for Registry {
    fn deploy(
        &self,
        processor_id: &str,
        implementation: &AlgorithmImplementation,
    ) -> Result<DeploymentHandle, HamError> {
        let mut inner = self.lock();
        let vp = inner.processor(processor_id)?;
        if !vp.can_deploy(implementation) {
            return Err(HamError::NotDeployable {
                processor: processor_id.to_string(),
                implementation: implementation.id.clone(),
            });
        }
        inner.next_handle += 1;
        let handle_id = format!("h{}", inner.next_handle);
        let vp = inner.processor_mut(processor_id)?;
        for (r, d) in &implementation.demand {
            *vp.occupancy.entry(r.clone()).or_insert(0) += d;
        }
        vp.deployments.insert(handle_id.clone());
        if vp.backend_kind == BackendKind::SimulatedFpga {
            vp.reconfigurations += 1;
        }
        let handle = DeploymentHandle {
            handle_id: handle_id.clone(),
            processor_id: processor_id.to_string(),
            implementation_id: implementation.id.clone(),
            demand: implementation.demand.clone(),
        };
        inner.live.insert(
            handle_id,
            LiveDeployment {
                handle: handle.clone(),
                payload: implementation.payload.clone(),
            },
        );
        Ok(handle)
    }

    fn undeploy(&self, handle: &DeploymentHandle) -> Result<(), HamError> {
        let mut inner = self.lock();
        let live = inner
            .live
            .remove(&handle.handle_id)
            .ok_or_else(|| HamError::StaleHandle(handle.handle_id.clone()))?;
        let vp = inner.processor_mut(&live.handle.processor_id)?;
        for (r, d) in &live.handle.demand {
            let used = vp.occupancy.get_mut(r).expect("demand was counted at deploy");
            *used -= d;
        }
        vp.deployments.remove(&handle.handle_id);
        Ok(())
    }
}

/// Executes one deployed implementation, one firing at a time.
pub trait Runner: Send {
    fn backend(&self) -> BackendKind;

    fn operator(&self) -> Operator;

    fn fire(&mut self, inputs: &[Value], outputs: usize) -> Result<Vec<Value>, EvalError>;
}

pub struct HostRunner {
    state: OperatorState,
}

impl Runner for HostRunner {
    fn backend(&self) -> BackendKind {
        BackendKind::HostExecutor
    }

    fn operator(&self) -> Operator {
        self.state.operator()
    }

    fn fire(&mut self, inputs: &[Value], outputs: usize) -> Result<Vec<Value>, EvalError> {
        self.state.fire(inputs, outputs)
    }
}

/// Stands in for a configured FPGA: the loaded blob is recorded, the
/// arithmetic is the catalog's.
pub struct SimulatedFpgaRunner {
    state: OperatorState,
    blob: Option<String>,
}

impl SimulatedFpgaRunner {
    pub fn blob(&self) -> Option<&str> {
        self.blob.as_deref()
    }
}

impl Runner for SimulatedFpgaRunner {
    fn backend(&self) -> BackendKind {
        BackendKind::SimulatedFpga
    }

    fn operator(&self) -> Operator {
        self.state.operator()
    }

    fn fire(&mut self, inputs: &[Value], outputs: usize) -> Result<Vec<Value>, EvalError> {
        self.state.fire(inputs, outputs)
    }
}
