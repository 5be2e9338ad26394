//! The three operations behind the browser demo. Each takes and returns
//! JSON text so the page needs no bindings beyond strings; the plain
//! functions are what the native tests exercise.

use std::str::FromStr;

use hetflow_core::ham::{HamManifest, Registry};
use hetflow_core::matcher::{plan_graph, DeploymentPlan, PlanMode};
use hetflow_core::sequential::evaluate;
use hetflow_core::{DataflowGraph, PipelineDefinition, Tag};
use serde_json::{json, Value as JsonValue};
use wasm_bindgen::prelude::*;

pub const SAMPLE_HAMS: [&str; 2] = [
    include_str!("../../../pipelines/hams/workstation.json"),
    include_str!("../../../pipelines/hams/virtex-board.json"),
];
pub const SAMPLE_PIPELINE: &str = include_str!("../../../pipelines/diamond.pipeline.json");

/// Whether a processor tagged `processor` accepts an implementation tagged
/// `implementation`, with both tags in canonical form.
pub fn compatibility(processor: &str, implementation: &str) -> Result<String, String> {
    let p = Tag::parse(processor).map_err(|e| format!("processor tag: {e}"))?;
    let i = Tag::parse(implementation).map_err(|e| format!("implementation tag: {e}"))?;
    Ok(json!({
        "processor": p,
        "implementation": i,
        "compatible": p.accepts(&i),
    })
    .to_string())
}

/// `hams` is either one manifest or an array of them.
fn registry(hams: &str) -> Result<Registry, String> {
    let value: JsonValue = serde_json::from_str(hams).map_err(|e| format!("HAMs: {e}"))?;
    let list = match value {
        JsonValue::Array(items) => items,
        one => vec![one],
    };
    let registry = Registry::new();
    for m in list {
        let manifest = HamManifest::from_json(&m.to_string()).map_err(|e| e.to_string())?;
        registry.load_ham(&manifest).map_err(|e| e.to_string())?;
    }
    Ok(registry)
}

fn planned(hams: &str, pipeline: &str, mode: &str) -> Result<(Registry, DataflowGraph, DeploymentPlan), String> {
    let mode = PlanMode::from_str(mode).map_err(|e| e.to_string())?;
    let registry = registry(hams)?;
    let graph = PipelineDefinition::from_json(pipeline)
        .and_then(|d| d.build_graph())
        .map_err(|e| e.to_string())?;
    let plan = plan_graph(&graph, &registry.snapshot(), mode).map_err(|e| e.to_string())?;
    Ok((registry, graph, plan))
}

/// The deployment plan, complete or with its infeasibility report.
pub fn plan(hams: &str, pipeline: &str, mode: &str) -> Result<String, String> {
    let (_, _, plan) = planned(hams, pipeline, mode)?;
    Ok(json!({ "v": 1, "plan": plan }).to_string())
}

/// Plans, then evaluates the graph single-threaded and returns what each
/// `collect:` sink would receive.
pub fn simulate(hams: &str, pipeline: &str, mode: &str) -> Result<String, String> {
    let (registry, graph, plan) = planned(hams, pipeline, mode)?;
    if !plan.is_complete() {
        return Ok(json!({ "v": 1, "plan": plan, "sinks": null }).to_string());
    }
    let sinks = evaluate(&graph, &plan, |name| registry.resolve_resource(name).map_err(|e| e.to_string()))
        .map_err(|e| e.to_string())?;
    Ok(json!({ "v": 1, "plan": plan, "sinks": sinks }).to_string())
}

#[wasm_bindgen]
pub fn check_compatibility(processor: &str, implementation: &str) -> Result<String, JsError> {
    compatibility(processor, implementation).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plan_pipeline(hams: &str, pipeline: &str, mode: &str) -> Result<String, JsError> {
    plan(hams, pipeline, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_pipeline(hams: &str, pipeline: &str, mode: &str) -> Result<String, JsError> {
    simulate(hams, pipeline, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample_hams() -> String {
    let items: Vec<JsonValue> = SAMPLE_HAMS.iter().map(|h| serde_json::from_str(h).unwrap()).collect();
    serde_json::to_string_pretty(&items).unwrap()
}

#[wasm_bindgen]
pub fn sample_pipeline() -> String {
    SAMPLE_PIPELINE.to_string()
}
