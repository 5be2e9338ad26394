//! Pipeline definition files.
//!
//! ```json
//! {
//!   "v": 1,
//!   "id": "demo",
//!   "hams": ["hams/workstation.json"],
//!   "shells": [
//!     {"id": "S1", "inputs": [{"name": "in", "datatype": "i64"}],
//!                  "outputs": [{"name": "out", "datatype": "i64"}]}
//!   ],
//!   "implementations": [
//!     {"id": "S1-cpu", "shell": "S1", "tag": "cpu.host", "demand": {"slots": 1},
//!      "payload": {"kind": "builtin", "operator": "add_const", "params": [1]}}
//!   ],
//!   "edges": [],
//!   "sources": [{"to": "S1.in", "resource": "seq:1,2,3"}],
//!   "sinks": [{"from": "S1.out", "resource": "collect:"}]
//! }
//! ```
//!
//! `hams` is optional and lists manifest paths relative to the pipeline
//! file. Edges, sources and sinks are applied in file order, so the first
//! offending entry is the one reported.

use serde::{Deserialize, Serialize};

use crate::graph::{
    AlgorithmImplementation, AlgorithmShell, DataflowGraph, Demand, Edge, GraphError, Payload,
    SinkBinding, SourceBinding,
};
use crate::taxonomy::Tag;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDecl {
    pub name: String,
    pub datatype: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShellDecl {
    pub id: String,
    #[serde(default)]
    pub inputs: Vec<PortDecl>,
    #[serde(default)]
    pub outputs: Vec<PortDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplementationDecl {
    pub id: String,
    pub shell: String,
    pub tag: Tag,
    #[serde(default)]
    pub demand: Demand,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineDefinition {
    #[serde(default = "schema_version")]
    pub v: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hams: Vec<String>,
    pub shells: Vec<ShellDecl>,
    pub implementations: Vec<ImplementationDecl>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub sources: Vec<SourceBinding>,
    #[serde(default)]
    pub sinks: Vec<SinkBinding>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("malformed pipeline: {0}")]
    Malformed(String),
    #[error("unsupported pipeline schema version {0}")]
    Version(u32),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl PipelineDefinition {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let def: PipelineDefinition =
            serde_json::from_str(text).map_err(|e| PipelineError::Malformed(e.to_string()))?;
        if def.v != SCHEMA_VERSION {
            return Err(PipelineError::Version(def.v));
        }
        Ok(def)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("definition serializes")
    }

    /// Builds the graph through the same checked operations a program
    /// would use.
    pub fn build_graph(&self) -> Result<DataflowGraph, PipelineError> {
        let mut g = DataflowGraph::new();
        for s in &self.shells {
            let mut shell = AlgorithmShell::new(&s.id);
            for p in &s.inputs {
                shell = shell.with_input(&p.name, &p.datatype);
            }
            for p in &s.outputs {
                shell = shell.with_output(&p.name, &p.datatype);
            }
            g.add_shell(shell)?;
        }
        for i in &self.implementations {
            g.register_implementation(AlgorithmImplementation {
                id: i.id.clone(),
                shell_id: i.shell.clone(),
                compat_tag: i.tag.clone(),
                demand: i.demand.clone(),
                payload: i.payload.clone(),
            })?;
        }
        for e in &self.edges {
            g.connect(e.from.clone(), e.to.clone())?;
        }
        for s in &self.sources {
            g.bind_source(s.to.clone(), &s.resource)?;
        }
        for s in &self.sinks {
            g.bind_sink(s.from.clone(), &s.resource)?;
        }
        Ok(g)
    }

    /// The inverse of [`build_graph`](Self::build_graph).
    pub fn from_graph(id: &str, graph: &DataflowGraph) -> Self {
        let decl = |ports: &[crate::graph::PortSpec]| {
            ports
                .iter()
                .map(|p| PortDecl {
                    name: p.name.clone(),
                    datatype: p.datatype.clone(),
                })
                .collect()
        };
        PipelineDefinition {
            v: SCHEMA_VERSION,
            id: id.to_string(),
            hams: Vec::new(),
            shells: graph
                .shells
                .values()
                .map(|s| ShellDecl {
                    id: s.id.clone(),
                    inputs: decl(&s.inputs),
                    outputs: decl(&s.outputs),
                })
                .collect(),
            implementations: graph
                .implementations
                .values()
                .map(|i| ImplementationDecl {
                    id: i.id.clone(),
                    shell: i.shell_id.clone(),
                    tag: i.compat_tag.clone(),
                    demand: i.demand.clone(),
                    payload: i.payload.clone(),
                })
                .collect(),
            edges: graph.edges.clone(),
            sources: graph.sources.clone(),
            sinks: graph.sinks.clone(),
        }
    }
}
