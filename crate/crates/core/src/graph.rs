//! Algorithm shells, their implementations, and the dataflow graph that
//! connects shells port to port.
//!
//! A shell fixes ports and datatypes; implementations fix where and how the
//! shell runs. Edges are checked as they are added (direction, datatype, one
//! producer per input, one consumer per output) and [`DataflowGraph::validate`]
//! reports what can only be judged on the whole graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::operator::OperatorSpec;
use crate::taxonomy::Tag;

/// True for non-empty identifiers drawn from `[A-Za-z0-9_-]`.
pub fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub name: String,
    pub direction: Direction,
    pub datatype: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmShell {
    pub id: String,
    pub inputs: Vec<PortSpec>,
    pub outputs: Vec<PortSpec>,
    pub implementation_ids: Vec<String>,
}

impl AlgorithmShell {
    pub fn new(id: impl Into<String>) -> Self {
        AlgorithmShell {
            id: id.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            implementation_ids: Vec::new(),
        }
    }

    pub fn with_input(mut self, name: &str, datatype: &str) -> Self {
        self.inputs.push(PortSpec {
            name: name.into(),
            direction: Direction::Input,
            datatype: datatype.into(),
        });
        self
    }

    pub fn with_output(mut self, name: &str, datatype: &str) -> Self {
        self.outputs.push(PortSpec {
            name: name.into(),
            direction: Direction::Output,
            datatype: datatype.into(),
        });
        self
    }

    pub fn port(&self, direction: Direction, name: &str) -> Option<&PortSpec> {
        let ports = match direction {
            Direction::Input => &self.inputs,
            Direction::Output => &self.outputs,
        };
        ports.iter().find(|p| p.name == name)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|p| p.name == name)
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|p| p.name == name)
    }
}

/// What a deployed implementation executes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    /// A catalog operator run directly by the host executor.
    Builtin {
        #[serde(flatten)]
        operator: OperatorSpec,
    },
    /// An opaque configuration blob plus the operator it realizes.
    Bitstream {
        blob: String,
        #[serde(flatten)]
        operator: OperatorSpec,
    },
}

impl Payload {
    pub fn builtin(operator: &str, params: &[i64]) -> Self {
        Payload::Builtin {
            operator: OperatorSpec::new(operator, params.to_vec()),
        }
    }

    pub fn bitstream(blob: &str, operator: &str, params: &[i64]) -> Self {
        Payload::Bitstream {
            blob: blob.into(),
            operator: OperatorSpec::new(operator, params.to_vec()),
        }
    }

    pub fn operator(&self) -> &OperatorSpec {
        match self {
            Payload::Builtin { operator } | Payload::Bitstream { operator, .. } => operator,
        }
    }
}

/// Resource name to integer units.
pub type Demand = BTreeMap<String, u64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmImplementation {
    pub id: String,
    pub shell_id: String,
    pub compat_tag: Tag,
    pub demand: Demand,
    pub payload: Payload,
}

impl AlgorithmImplementation {
    pub fn new(id: &str, shell_id: &str, compat_tag: Tag, payload: Payload) -> Self {
        AlgorithmImplementation {
            id: id.into(),
            shell_id: shell_id.into(),
            compat_tag,
            demand: Demand::new(),
            payload,
        }
    }

    pub fn with_demand(mut self, resource: &str, units: u64) -> Self {
        self.demand.insert(resource.into(), units);
        self
    }
}

/// `shell.port` reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub shell: String,
    pub port: String,
}

impl PortRef {
    pub fn new(shell: &str, port: &str) -> Self {
        PortRef {
            shell: shell.into(),
            port: port.into(),
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.shell, self.port)
    }
}

impl FromStr for PortRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((shell, port)) if is_token(shell) && is_token(port) => Ok(PortRef::new(shell, port)),
            _ => Err(format!("expected <shell>.<port>, got {s:?}")),
        }
    }
}

impl Serialize for PortRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: PortRef,
    pub to: PortRef,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBinding {
    pub to: PortRef,
    pub resource: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkBinding {
    pub from: PortRef,
    pub resource: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("shell {shell} declares port {port} twice")]
    DuplicatePort { shell: String, port: String },
    #[error("shell {0} has no ports")]
    NoPorts(String),
    #[error("unknown shell {0}")]
    UnknownShell(String),
    #[error("unknown port {0}")]
    UnknownPort(PortRef),
    #[error("port {0} has the wrong direction for this connection")]
    DirectionMismatch(PortRef),
    #[error("type mismatch: {from} is {from_type}, {to} is {to_type}")]
    TypeMismatch {
        from: PortRef,
        to: PortRef,
        from_type: String,
        to_type: String,
    },
    #[error("input {0} already has a producer")]
    InputAlreadyBound(PortRef),
    #[error("output {0} already has a consumer")]
    OutputAlreadyConnected(PortRef),
    #[error("cycle through shells {0:?}")]
    CycleDetected(Vec<String>),
}

/// A structural problem found by [`DataflowGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    UnboundInput { shell: String, port: String },
    CycleDetected { shells: Vec<String> },
    ShellWithoutImplementations { shell: String },
    TypeMismatch { from: PortRef, to: PortRef },
}

impl Violation {
    fn sort_key(&self) -> (&str, &str, u8) {
        match self {
            Violation::UnboundInput { shell, port } => (shell, port, 0),
            Violation::CycleDetected { shells } => (&shells[0], "", 1),
            Violation::ShellWithoutImplementations { shell } => (shell, "", 2),
            Violation::TypeMismatch { to, .. } => (&to.shell, &to.port, 3),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnboundInput { shell, port } => write!(f, "unbound input {shell}.{port}"),
            Violation::CycleDetected { shells } => write!(f, "cycle through {}", shells.join(", ")),
            Violation::ShellWithoutImplementations { shell } => {
                write!(f, "shell {shell} has no implementations")
            }
            Violation::TypeMismatch { from, to } => write!(f, "type mismatch on {from} -> {to}"),
        }
    }
}

/// Non-fatal findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Warning {
    UnconsumedOutput { shell: String, port: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataflowGraph {
    pub shells: BTreeMap<String, AlgorithmShell>,
    pub implementations: BTreeMap<String, AlgorithmImplementation>,
    pub edges: Vec<Edge>,
    pub sources: Vec<SourceBinding>,
    pub sinks: Vec<SinkBinding>,
}

impl DataflowGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_shell(&mut self, mut shell: AlgorithmShell) -> Result<(), GraphError> {
        if !is_token(&shell.id) {
            return Err(GraphError::InvalidId(shell.id));
        }
        if self.shells.contains_key(&shell.id) {
            return Err(GraphError::DuplicateId(shell.id));
        }
        if shell.inputs.is_empty() && shell.outputs.is_empty() {
            return Err(GraphError::NoPorts(shell.id));
        }
        for ports in [&shell.inputs, &shell.outputs] {
            let mut seen = BTreeSet::new();
            for p in ports {
                if !is_token(&p.name) {
                    return Err(GraphError::InvalidId(p.name.clone()));
                }
                if !seen.insert(p.name.as_str()) {
                    return Err(GraphError::DuplicatePort {
                        shell: shell.id.clone(),
                        port: p.name.clone(),
                    });
                }
            }
        }
        for p in &mut shell.inputs {
            p.direction = Direction::Input;
        }
        for p in &mut shell.outputs {
            p.direction = Direction::Output;
        }
        shell.implementation_ids.clear();
        self.shells.insert(shell.id.clone(), shell);
        Ok(())
    }

    pub fn register_implementation(
        &mut self,
        implementation: AlgorithmImplementation,
    ) -> Result<(), GraphError> {
        if !is_token(&implementation.id) {
            return Err(GraphError::InvalidId(implementation.id));
        }
        if let Some(bad) = implementation.demand.keys().find(|k| !is_token(k)) {
            return Err(GraphError::InvalidId(bad.clone()));
        }
        if self.implementations.contains_key(&implementation.id) {
            return Err(GraphError::DuplicateId(implementation.id));
        }
        let shell = self
            .shells
            .get_mut(&implementation.shell_id)
            .ok_or_else(|| GraphError::UnknownShell(implementation.shell_id.clone()))?;
        shell.implementation_ids.push(implementation.id.clone());
        self.implementations
            .insert(implementation.id.clone(), implementation);
        Ok(())
    }

    pub fn shell(&self, id: &str) -> Option<&AlgorithmShell> {
        self.shells.get(id)
    }

    pub fn implementations_of<'a>(
        &'a self,
        shell_id: &str,
    ) -> impl Iterator<Item = &'a AlgorithmImplementation> + 'a {
        let ids = self
            .shells
            .get(shell_id)
            .map(|s| s.implementation_ids.as_slice())
            .unwrap_or(&[]);
        ids.iter().filter_map(|id| self.implementations.get(id))
    }

    fn lookup(&self, at: &PortRef, direction: Direction) -> Result<&PortSpec, GraphError> {
        let shell = self
            .shells
            .get(&at.shell)
            .ok_or_else(|| GraphError::UnknownShell(at.shell.clone()))?;
        if let Some(p) = shell.port(direction, &at.port) {
            return Ok(p);
        }
        let other = match direction {
            Direction::Input => Direction::Output,
            Direction::Output => Direction::Input,
        };
        if shell.port(other, &at.port).is_some() {
            Err(GraphError::DirectionMismatch(at.clone()))
        } else {
            Err(GraphError::UnknownPort(at.clone()))
        }
    }

    fn input_bound(&self, at: &PortRef) -> bool {
        self.edges.iter().any(|e| &e.to == at) || self.sources.iter().any(|s| &s.to == at)
    }

    /// Connects an output port to an input port. Datatypes must match exactly.
    pub fn connect(&mut self, from: PortRef, to: PortRef) -> Result<(), GraphError> {
        let out = self.lookup(&from, Direction::Output)?;
        let inp = self.lookup(&to, Direction::Input)?;
        if out.datatype != inp.datatype {
            return Err(GraphError::TypeMismatch {
                from_type: out.datatype.clone(),
                to_type: inp.datatype.clone(),
                from,
                to,
            });
        }
        if self.input_bound(&to) {
            return Err(GraphError::InputAlreadyBound(to));
        }
        if self.edges.iter().any(|e| e.from == from) {
            return Err(GraphError::OutputAlreadyConnected(from));
        }
        self.edges.push(Edge { from, to });
        Ok(())
    }

    pub fn bind_source(&mut self, to: PortRef, resource: &str) -> Result<(), GraphError> {
        self.lookup(&to, Direction::Input)?;
        if self.input_bound(&to) {
            return Err(GraphError::InputAlreadyBound(to));
        }
        self.sources.push(SourceBinding {
            to,
            resource: resource.into(),
        });
        Ok(())
    }

    pub fn bind_sink(&mut self, from: PortRef, resource: &str) -> Result<(), GraphError> {
        self.lookup(&from, Direction::Output)?;
        if self.sinks.iter().any(|s| s.from == from) {
            return Err(GraphError::OutputAlreadyConnected(from));
        }
        self.sinks.push(SinkBinding {
            from,
            resource: resource.into(),
        });
        Ok(())
    }

    /// Whole-graph checks. An empty result means the graph can be planned.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for shell in self.shells.values() {
            for p in &shell.inputs {
                if !self.input_bound(&PortRef::new(&shell.id, &p.name)) {
                    out.push(Violation::UnboundInput {
                        shell: shell.id.clone(),
                        port: p.name.clone(),
                    });
                }
            }
            if shell.implementation_ids.is_empty() {
                out.push(Violation::ShellWithoutImplementations {
                    shell: shell.id.clone(),
                });
            }
        }
        for e in &self.edges {
            let from = self.lookup(&e.from, Direction::Output);
            let to = self.lookup(&e.to, Direction::Input);
            if let (Ok(a), Ok(b)) = (from, to) {
                if a.datatype != b.datatype {
                    out.push(Violation::TypeMismatch {
                        from: e.from.clone(),
                        to: e.to.clone(),
                    });
                }
            }
        }
        for shells in self.cycles() {
            out.push(Violation::CycleDetected { shells });
        }
        out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        out
    }

    pub fn warnings(&self) -> Vec<Warning> {
        let mut out = Vec::new();
        for shell in self.shells.values() {
            for p in &shell.outputs {
                let at = PortRef::new(&shell.id, &p.name);
                let consumed = self.edges.iter().any(|e| e.from == at)
                    || self.sinks.iter().any(|s| s.from == at);
                if !consumed {
                    out.push(Warning::UnconsumedOutput {
                        shell: shell.id.clone(),
                        port: p.name.clone(),
                    });
                }
            }
        }
        out
    }

    fn successors(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut succ: BTreeMap<&str, BTreeSet<&str>> =
            self.shells.keys().map(|k| (k.as_str(), BTreeSet::new())).collect();
        for e in &self.edges {
            if let Some(s) = succ.get_mut(e.from.shell.as_str()) {
                s.insert(e.to.shell.as_str());
            }
        }
        succ
    }

    /// Strongly connected components that form cycles, each sorted, in
    /// ascending order of their smallest shell id.
    fn cycles(&self) -> Vec<Vec<String>> {
        let succ = self.successors();
        let mut tarjan = Tarjan {
            succ: &succ,
            index: BTreeMap::new(),
            low: BTreeMap::new(),
            stack: Vec::new(),
            on_stack: BTreeSet::new(),
            next: 0,
            components: Vec::new(),
        };
        for v in succ.keys() {
            if !tarjan.index.contains_key(v) {
                tarjan.visit(v);
            }
        }
        let mut cycles: Vec<Vec<String>> = tarjan
            .components
            .into_iter()
            .filter(|c| c.len() > 1 || succ[c[0]].contains(c[0]))
            .map(|c| {
                let mut c: Vec<String> = c.into_iter().map(String::from).collect();
                c.sort();
                c
            })
            .collect();
        cycles.sort();
        cycles
    }

    /// Shell ids such that every edge points forward. Ties go to the
    /// smallest id.
    pub fn topological_order(&self) -> Result<Vec<String>, GraphError> {
        let succ = self.successors();
        let mut indegree: BTreeMap<&str, usize> = succ.keys().map(|k| (*k, 0)).collect();
        for targets in succ.values() {
            for t in targets {
                *indegree.get_mut(t).unwrap() += 1;
            }
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| *k)
            .collect();
        let mut order = Vec::with_capacity(succ.len());
        while let Some(next) = ready.pop_first() {
            order.push(next.to_string());
            for t in &succ[next] {
                let d = indegree.get_mut(t).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(t);
                }
            }
        }
        if order.len() != succ.len() {
            let stuck = self.cycles().into_iter().flatten().collect();
            return Err(GraphError::CycleDetected(stuck));
        }
        Ok(order)
    }
}

struct Tarjan<'a> {
    succ: &'a BTreeMap<&'a str, BTreeSet<&'a str>>,
    index: BTreeMap<&'a str, usize>,
    low: BTreeMap<&'a str, usize>,
    stack: Vec<&'a str>,
    on_stack: BTreeSet<&'a str>,
    next: usize,
    components: Vec<Vec<&'a str>>,
}

impl<'a> Tarjan<'a> {
    fn visit(&mut self, v: &'a str) {
        self.index.insert(v, self.next);
        self.low.insert(v, self.next);
        self.next += 1;
        self.stack.push(v);
        self.on_stack.insert(v);
        for &w in &self.succ[v] {
            if !self.index.contains_key(w) {
                self.visit(w);
                let lw = self.low[w];
                let lv = self.low.get_mut(v).unwrap();
                *lv = (*lv).min(lw);
            } else if self.on_stack.contains(w) {
                let iw = self.index[w];
                let lv = self.low.get_mut(v).unwrap();
                *lv = (*lv).min(iw);
            }
        }
        if self.low[v] == self.index[v] {
            let mut component = Vec::new();
            loop {
                let w = self.stack.pop().unwrap();
                self.on_stack.remove(w);
                component.push(w);
                if w == v {
                    break;
                }
            }
            self.components.push(component);
        }
    }
}
