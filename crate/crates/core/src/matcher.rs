//! Placement of shells onto virtual processors.
//!
//! For one shell, candidate (implementation, processor) pairs are tried in a
//! fixed order: implementations by descending tag specificity then id,
//! processors in registration order. The first pair that is both compatible
//! and deployable wins. [`plan_graph`] applies that per shell in topological
//! order (greedy), or backtracks over all combinations (exhaustive). Planning
//! works on a copy of the processors, never on live occupancy.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{AlgorithmImplementation, AlgorithmShell, DataflowGraph, Demand, Violation};
use crate::ham::{fits, DeployTarget, DeploymentHandle, HamError, VirtualProcessor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    #[default]
    Greedy,
    Exhaustive,
}

impl FromStr for PlanMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(PlanMode::Greedy),
            "exhaustive" => Ok(PlanMode::Exhaustive),
            other => Err(format!("unknown plan mode {other:?} (greedy|exhaustive)")),
        }
    }
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanMode::Greedy => "greedy",
            PlanMode::Exhaustive => "exhaustive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectReason {
    Incompatible,
    Undeployable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub implementation: String,
    pub processor: String,
    pub reason: RejectReason,
}

/// Why planning failed, per shell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    pub shells: BTreeMap<String, Vec<Rejection>>,
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "no feasible placement")?;
        for (shell, rejections) in &self.shells {
            writeln!(f, "  shell {shell}:")?;
            if rejections.is_empty() {
                writeln!(f, "    (no candidate processors)")?;
            }
            for r in rejections {
                let reason = match r.reason {
                    RejectReason::Incompatible => "incompatible",
                    RejectReason::Undeployable => "undeployable",
                };
                writeln!(f, "    {} on {}: {reason}", r.implementation, r.processor)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub implementation_id: String,
    pub processor_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStatus {
    Complete,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub mode: PlanMode,
    pub status: PlanStatus,
    /// Shell id to its placement. Empty unless the plan is complete.
    pub assignments: BTreeMap<String, Assignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<InfeasibilityReport>,
}

impl DeploymentPlan {
    pub fn is_complete(&self) -> bool {
        self.status == PlanStatus::Complete
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("graph is not valid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommitError {
    #[error("plan is not complete")]
    PlanNotComplete,
    #[error("plan refers to unknown implementation {0}")]
    UnknownImplementation(String),
    #[error("commit failed placing shell {shell}: {source}")]
    CommitFailed {
        shell: String,
        #[source]
        source: HamError,
    },
}

/// Implementations in matching order: most specific tag first, then id.
pub fn candidate_order<'a>(
    implementations: impl IntoIterator<Item = &'a AlgorithmImplementation>,
) -> Vec<&'a AlgorithmImplementation> {
    let mut v: Vec<_> = implementations.into_iter().collect();
    v.sort_by(|a, b| {
        (Reverse(a.compat_tag.specificity()), &a.id).cmp(&(Reverse(b.compat_tag.specificity()), &b.id))
    });
    v
}

/// The deployment loop for a single shell. Returns the first compatible and
/// deployable pair, or every rejected pair.
pub fn match_one(
    shell: &AlgorithmShell,
    implementations: &[&AlgorithmImplementation],
    processors: &[VirtualProcessor],
) -> Result<Assignment, Vec<Rejection>> {
    let mut rejected = Vec::new();
    for imp in candidate_order(implementations.iter().copied()) {
        debug_assert_eq!(imp.shell_id, shell.id);
        for vp in processors {
            let reason = if !vp.is_compatible(imp) {
                RejectReason::Incompatible
            } else if !vp.can_deploy(imp) {
                RejectReason::Undeployable
            } else {
                return Ok(Assignment {
                    implementation_id: imp.id.clone(),
                    processor_id: vp.id.clone(),
                });
            };
            rejected.push(Rejection {
                implementation: imp.id.clone(),
                processor: vp.id.clone(),
                reason,
            });
        }
    }
    Err(rejected)
}

fn reserve(processors: &mut [VirtualProcessor], processor_id: &str, demand: &Demand) {
    let vp = processors
        .iter_mut()
        .find(|p| p.id == processor_id)
        .expect("assigned processor is in the snapshot");
    for (r, d) in demand {
        *vp.occupancy.entry(r.clone()).or_insert(0) += d;
    }
}

fn release(processors: &mut [VirtualProcessor], processor_id: &str, demand: &Demand) {
    let vp = processors
        .iter_mut()
        .find(|p| p.id == processor_id)
        .expect("assigned processor is in the snapshot");
    for (r, d) in demand {
        *vp.occupancy.get_mut(r).expect("reserved before") -= d;
    }
}

/// Plans the whole graph against a processor snapshot.
pub fn plan_graph(
    graph: &DataflowGraph,
    processors: &[VirtualProcessor],
    mode: PlanMode,
) -> Result<DeploymentPlan, PlanError> {
    let violations = graph.validate();
    if !violations.is_empty() {
        return Err(PlanError::InvalidGraph(violations));
    }
    let order = graph
        .topological_order()
        .map_err(|_| PlanError::InvalidGraph(graph.validate()))?;
    let mut scratch = processors.to_vec();
    let outcome = match mode {
        PlanMode::Greedy => plan_greedy(graph, &order, &mut scratch),
        PlanMode::Exhaustive => plan_exhaustive(graph, &order, &mut scratch),
    };
    Ok(match outcome {
        Ok(assignments) => DeploymentPlan {
            mode,
            status: PlanStatus::Complete,
            assignments,
            report: None,
        },
        Err(report) => DeploymentPlan {
            mode,
            status: PlanStatus::Infeasible,
            assignments: BTreeMap::new(),
            report: Some(report),
        },
    })
}

fn plan_greedy(
    graph: &DataflowGraph,
    order: &[String],
    scratch: &mut [VirtualProcessor],
) -> Result<BTreeMap<String, Assignment>, InfeasibilityReport> {
    let mut assignments = BTreeMap::new();
    let mut report = InfeasibilityReport::default();
    for shell_id in order {
        let shell = &graph.shells[shell_id];
        let imps: Vec<_> = graph.implementations_of(shell_id).collect();
        match match_one(shell, &imps, scratch) {
            Ok(a) => {
                let demand = &graph.implementations[&a.implementation_id].demand;
                reserve(scratch, &a.processor_id, demand);
                assignments.insert(shell_id.clone(), a);
            }
            Err(rejections) => {
                report.shells.insert(shell_id.clone(), rejections);
            }
        }
    }
    if report.shells.is_empty() {
        Ok(assignments)
    } else {
        Err(report)
    }
}

struct Search<'a> {
    order: &'a [String],
    // per shell in `order`: (implementation, processor index) pairs that are
    // tag-compatible, in matching order
    candidates: Vec<Vec<(&'a AlgorithmImplementation, usize)>>,
    chosen: Vec<Assignment>,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize, scratch: &mut [VirtualProcessor]) -> bool {
        if depth == self.order.len() {
            return true;
        }
        for i in 0..self.candidates[depth].len() {
            let (imp, pi) = self.candidates[depth][i];
            let vp = &scratch[pi];
            if !fits(&vp.capacity, &vp.occupancy, &imp.demand) {
                continue;
            }
            let pid = vp.id.clone();
            reserve(scratch, &pid, &imp.demand);
            self.chosen.push(Assignment {
                implementation_id: imp.id.clone(),
                processor_id: pid.clone(),
            });
            if self.descend(depth + 1, scratch) {
                return true;
            }
            self.chosen.pop();
            release(scratch, &pid, &imp.demand);
        }
        false
    }
}

fn plan_exhaustive(
    graph: &DataflowGraph,
    order: &[String],
    scratch: &mut [VirtualProcessor],
) -> Result<BTreeMap<String, Assignment>, InfeasibilityReport> {
    let candidates = order
        .iter()
        .map(|shell_id| {
            let mut pairs = Vec::new();
            for imp in candidate_order(graph.implementations_of(shell_id)) {
                for (pi, vp) in scratch.iter().enumerate() {
                    if vp.is_compatible(imp) {
                        pairs.push((imp, pi));
                    }
                }
            }
            pairs
        })
        .collect();
    let mut search = Search {
        order,
        candidates,
        chosen: Vec::new(),
    };
    let baseline = scratch.to_vec();
    if search.descend(0, scratch) {
        return Ok(order.iter().cloned().zip(search.chosen).collect());
    }
    // No joint placement exists. Report every pair per shell: tag failures
    // as incompatible, everything else as undeployable in combination.
    let mut report = InfeasibilityReport::default();
    for shell_id in order {
        let mut rejections = Vec::new();
        for imp in candidate_order(graph.implementations_of(shell_id)) {
            for vp in &baseline {
                rejections.push(Rejection {
                    implementation: imp.id.clone(),
                    processor: vp.id.clone(),
                    reason: if vp.is_compatible(imp) {
                        RejectReason::Undeployable
                    } else {
                        RejectReason::Incompatible
                    },
                });
            }
        }
        report.shells.insert(shell_id.clone(), rejections);
    }
    Err(report)
}

/// Deploys every assignment of a complete plan. On the first failure all
/// deployments made by this call are rolled back.
pub fn commit_plan<T: DeployTarget + ?Sized>(
    plan: &DeploymentPlan,
    graph: &DataflowGraph,
    target: &T,
) -> Result<Vec<DeploymentHandle>, CommitError> {
    if !plan.is_complete() {
        return Err(CommitError::PlanNotComplete);
    }
    let mut steps = Vec::with_capacity(plan.assignments.len());
    for (shell, a) in &plan.assignments {
        let imp = graph
            .implementations
            .get(&a.implementation_id)
            .ok_or_else(|| CommitError::UnknownImplementation(a.implementation_id.clone()))?;
        steps.push((shell, &a.processor_id, imp));
    }
    let mut handles = Vec::with_capacity(steps.len());
    for (shell, processor_id, imp) in steps {
        match target.deploy(processor_id, imp) {
            Ok(h) => handles.push(h),
            Err(source) => {
                for h in handles.iter().rev() {
                    // handles created above are live; undeploy cannot be stale
                    let _ = target.undeploy(h);
                }
                return Err(CommitError::CommitFailed {
                    shell: shell.clone(),
                    source,
                });
            }
        }
    }
    Ok(handles)
}
