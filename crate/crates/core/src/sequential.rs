//! Single-threaded evaluation of a planned graph.
//!
//! Produces what a run session would deliver to its `collect:` sinks,
//! without threads or deployments. Used where threads are unavailable
//! (the browser demo) and for quick previews.

use std::collections::BTreeMap;

use crate::graph::{DataflowGraph, PortRef};
use crate::matcher::DeploymentPlan;
use crate::operator::{Operator, Value};
use crate::resource::{ResourceSpec, SinkWriter, SourceReader};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalFailure {
    #[error("plan is not complete")]
    IncompletePlan,
    #[error("shell {0}: {1}")]
    Shell(String, String),
    #[error("binding {0}: {1}")]
    Binding(String, String),
}

/// Runs the graph to completion shell by shell in topological order and
/// returns the contents of every `collect:` sink keyed by output port.
pub fn evaluate<F>(
    graph: &DataflowGraph,
    plan: &DeploymentPlan,
    resolve: F,
) -> Result<BTreeMap<String, Vec<Value>>, EvalFailure>
where
    F: Fn(&str) -> Result<ResourceSpec, String>,
{
    if !plan.is_complete() {
        return Err(EvalFailure::IncompletePlan);
    }
    let order = graph
        .topological_order()
        .map_err(|e| EvalFailure::Shell(String::new(), e.to_string()))?;
    let mut streams: BTreeMap<PortRef, Vec<Value>> = BTreeMap::new();

    for s in &graph.sources {
        let name = s.to.to_string();
        let datatype = graph.shells[&s.to.shell]
            .inputs
            .iter()
            .find(|p| p.name == s.to.port)
            .map(|p| p.datatype.clone())
            .ok_or_else(|| EvalFailure::Binding(name.clone(), "unknown port".into()))?;
        let spec = resolve(&s.resource).map_err(|e| EvalFailure::Binding(name.clone(), e))?;
        let values = SourceReader::open(&spec, &datatype)
            .and_then(|r| r.collect::<Result<Vec<_>, _>>())
            .map_err(|e| EvalFailure::Binding(name.clone(), e.to_string()))?;
        streams.insert(s.to.clone(), values);
    }

    for shell_id in &order {
        let shell = &graph.shells[shell_id];
        let a = &plan.assignments[shell_id];
        let imp = &graph.implementations[&a.implementation_id];
        let fail = |e: String| EvalFailure::Shell(shell_id.clone(), e);
        let op = Operator::resolve(imp.payload.operator()).map_err(|e| fail(e.to_string()))?;
        op.check_arity(shell.inputs.len(), shell.outputs.len())
            .map_err(|e| fail(e.to_string()))?;
        let inputs: Vec<Vec<Value>> = shell
            .inputs
            .iter()
            .map(|p| streams.remove(&PortRef::new(shell_id, &p.name)).unwrap_or_default())
            .collect();
        let firings = inputs.iter().map(Vec::len).min().unwrap_or(0);
        let mut outputs: Vec<Vec<Value>> = vec![Vec::with_capacity(firings); shell.outputs.len()];
        let mut state = op.instantiate();
        for k in 0..firings {
            let args: Vec<Value> = inputs.iter().map(|xs| xs[k].clone()).collect();
            let produced = state
                .fire(&args, shell.outputs.len())
                .map_err(|e| fail(e.to_string()))?;
            for ((v, out), port) in produced.into_iter().zip(&mut outputs).zip(&shell.outputs) {
                if v.datatype() != port.datatype {
                    return Err(fail(format!("produced {} on a {} port", v.datatype(), port.datatype)));
                }
                out.push(v);
            }
        }
        for (port, values) in shell.outputs.iter().zip(outputs) {
            let from = PortRef::new(shell_id, &port.name);
            if let Some(e) = graph.edges.iter().find(|e| e.from == from) {
                streams.insert(e.to.clone(), values.clone());
            }
            streams.insert(from, values);
        }
    }

    let mut collected = BTreeMap::new();
    for s in &graph.sinks {
        let name = s.from.to_string();
        let values = streams.get(&s.from).cloned().unwrap_or_default();
        let spec = resolve(&s.resource).map_err(|e| EvalFailure::Binding(name.clone(), e))?;
        let mut writer =
            SinkWriter::open(&spec).map_err(|e| EvalFailure::Binding(name.clone(), e.to_string()))?;
        if writer.collected().is_some() {
            collected.insert(name, values);
            continue;
        }
        for v in values {
            writer
                .write(v)
                .map_err(|e| EvalFailure::Binding(name.clone(), e.to_string()))?;
        }
        writer
            .finish()
            .map_err(|e| EvalFailure::Binding(name.clone(), e.to_string()))?;
    }
    Ok(collected)
}
