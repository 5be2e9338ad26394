//! Independent oracles and instance generators shared by the property tests
//! and the acceptance suite. Nothing here calls the code paths it checks:
//! ancestry is a hand-written prefix loop, feasibility is plain enumeration,
//! and graph evaluation is a recursive stream interpreter with its own
//! arithmetic.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hetflow_core::graph::{AlgorithmImplementation, AlgorithmShell, DataflowGraph, Demand, Payload, PortRef};
use hetflow_core::ham::{HamManifest, ProcessorManifest, Registry, VirtualProcessor};
use hetflow_core::matcher::DeploymentPlan;
use hetflow_core::Tag;
use rand::seq::SliceRandom;
use rand::Rng;

pub mod criteria;

// ---------------------------------------------------------------- tags

/// Descriptor-by-descriptor prefix comparison.
pub fn brute_prefix(processor: &[String], implementation: &[String]) -> bool {
    if processor.len() > implementation.len() {
        return false;
    }
    let mut i = 0;
    while i < processor.len() {
        if processor[i] != implementation[i] {
            return false;
        }
        i += 1;
    }
    true
}

/// Small alphabet and shallow depth so that prefixes collide often.
pub fn random_tag<R: Rng>(rng: &mut R) -> Tag {
    const WORDS: [&str; 4] = ["fpga", "xilinx", "virtex", "cpu"];
    let depth = rng.gen_range(1..=5);
    let parts: Vec<&str> = (0..depth).map(|_| *WORDS.choose(rng).unwrap()).collect();
    Tag::from_descriptors(parts).unwrap()
}

pub fn linear_candidates(entries: &[(Tag, String)], query: &Tag) -> BTreeSet<String> {
    entries
        .iter()
        .filter(|(t, _)| brute_prefix(t.descriptors(), query.descriptors()))
        .map(|(_, id)| id.clone())
        .collect()
}

// ---------------------------------------------------------- placement

pub const TAG_POOL: [&str; 8] = [
    "cpu",
    "cpu.host",
    "fpga",
    "fpga.xilinx",
    "fpga.xilinx.virtex",
    "fpga.xilinx.virtex.xcv100",
    "fpga.xilinx.virtex.revb",
    "fpga.altera",
];

#[derive(Debug, Clone)]
pub struct ImplSpec {
    pub tag: Tag,
    pub demand: Demand,
}

#[derive(Debug, Clone)]
pub struct ProcSpec {
    pub tag: Tag,
    pub capacity: Demand,
}

/// A placement problem: shells (each a list of implementations) and
/// processors.
#[derive(Debug, Clone)]
pub struct Instance {
    pub shells: Vec<Vec<ImplSpec>>,
    pub processors: Vec<ProcSpec>,
}

fn tag(s: &str) -> Tag {
    Tag::parse(s).unwrap()
}

pub fn random_demand<R: Rng>(rng: &mut R) -> Demand {
    let mut d = Demand::new();
    d.insert("slots".into(), rng.gen_range(0..=2));
    // occasionally ask for a resource no processor has
    if rng.gen_bool(0.05) {
        d.insert("dsp".into(), 1);
    }
    d
}

/// Shape is fixed by the caller, contents are random.
pub fn random_instance<R: Rng>(rng: &mut R, shells: usize, impls: usize, capacities: &[u64]) -> Instance {
    Instance {
        shells: (0..shells)
            .map(|_| {
                (0..impls)
                    .map(|_| ImplSpec {
                        tag: tag(TAG_POOL.choose(rng).unwrap()),
                        demand: random_demand(rng),
                    })
                    .collect()
            })
            .collect(),
        processors: capacities
            .iter()
            .map(|c| ProcSpec {
                tag: tag(TAG_POOL.choose(rng).unwrap()),
                capacity: [("slots".to_string(), *c)].into(),
            })
            .collect(),
    }
}

pub fn shell_id(i: usize) -> String {
    format!("S{i}")
}

pub fn impl_id(shell: usize, k: usize) -> String {
    format!("S{shell}-i{k}")
}

pub fn proc_id(p: usize) -> String {
    format!("P{p}")
}

impl Instance {
    /// A chain S0 -> S1 -> ... with one source and one sink.
    pub fn graph(&self) -> DataflowGraph {
        let mut g = DataflowGraph::new();
        for (s, imps) in self.shells.iter().enumerate() {
            let id = shell_id(s);
            g.add_shell(AlgorithmShell::new(&id).with_input("in", "i64").with_output("out", "i64"))
                .unwrap();
            for (k, imp) in imps.iter().enumerate() {
                let mut i = AlgorithmImplementation::new(
                    &impl_id(s, k),
                    &id,
                    imp.tag.clone(),
                    Payload::builtin("identity", &[]),
                );
                i.demand = imp.demand.clone();
                g.register_implementation(i).unwrap();
            }
        }
        if !self.shells.is_empty() {
            g.bind_source(PortRef::new("S0", "in"), "seq:1").unwrap();
            for s in 1..self.shells.len() {
                g.connect(PortRef::new(&shell_id(s - 1), "out"), PortRef::new(&shell_id(s), "in"))
                    .unwrap();
            }
            g.bind_sink(PortRef::new(&shell_id(self.shells.len() - 1), "out"), "collect:")
                .unwrap();
        }
        g
    }

    pub fn manifest(&self) -> HamManifest {
        HamManifest {
            v: 1,
            ham_id: "gen".into(),
            name: "generated".into(),
            processors: self
                .processors
                .iter()
                .enumerate()
                .map(|(p, spec)| ProcessorManifest {
                    id: proc_id(p),
                    accept_tag: spec.tag.to_string(),
                    capacity: spec.capacity.clone(),
                    backend_kind: "host-executor".into(),
                    backend_params: Default::default(),
                })
                .collect(),
        }
    }

    pub fn registry(&self) -> Registry {
        let r = Registry::new();
        r.load_ham(&self.manifest()).unwrap();
        r
    }

    fn assignment_fits(&self, choice: &[(usize, usize)]) -> bool {
        let mut used: Vec<BTreeMap<&str, u64>> = vec![BTreeMap::new(); self.processors.len()];
        for (s, &(k, p)) in choice.iter().enumerate() {
            let imp = &self.shells[s][k];
            if !brute_prefix(self.processors[p].tag.descriptors(), imp.tag.descriptors()) {
                return false;
            }
            for (r, d) in &imp.demand {
                *used[p].entry(r.as_str()).or_insert(0) += d;
            }
        }
        used.iter().enumerate().all(|(p, u)| {
            u.iter()
                .all(|(r, total)| *total <= self.processors[p].capacity.get(*r).copied().unwrap_or(0))
        })
    }

    /// Tries every (implementation, processor) choice for every shell.
    pub fn brute_force_feasible(&self) -> bool {
        let per_shell: Vec<usize> = self
            .shells
            .iter()
            .map(|imps| imps.len() * self.processors.len())
            .collect();
        if per_shell.iter().any(|n| *n == 0) {
            return self.shells.is_empty();
        }
        let mut counter = vec![0usize; self.shells.len()];
        loop {
            let choice: Vec<(usize, usize)> = counter
                .iter()
                .map(|c| (c / self.processors.len(), c % self.processors.len()))
                .collect();
            if self.assignment_fits(&choice) {
                return true;
            }
            let mut i = 0;
            loop {
                if i == counter.len() {
                    return false;
                }
                counter[i] += 1;
                if counter[i] < per_shell[i] {
                    break;
                }
                counter[i] = 0;
                i += 1;
            }
        }
    }

    /// True when no processor can be over-subscribed whatever each shell
    /// picks: for every processor and resource, the sum over shells of the
    /// largest compatible demand fits in capacity.
    pub fn contention_free(&self) -> bool {
        self.processors.iter().all(|p| {
            let mut worst: BTreeMap<&str, u64> = BTreeMap::new();
            for imps in &self.shells {
                let mut shell_max: BTreeMap<&str, u64> = BTreeMap::new();
                for imp in imps {
                    if !brute_prefix(p.tag.descriptors(), imp.tag.descriptors()) {
                        continue;
                    }
                    for (r, d) in &imp.demand {
                        let m = shell_max.entry(r.as_str()).or_insert(0);
                        *m = (*m).max(*d);
                    }
                }
                for (r, d) in shell_max {
                    *worst.entry(r).or_insert(0) += d;
                }
            }
            worst
                .iter()
                .all(|(r, total)| *total <= p.capacity.get(*r).copied().unwrap_or(0))
        })
    }
}

/// Checks a complete plan against the graph and processors using only the
/// public data: every shell assigned, each implementation belongs to its
/// shell, the prefix rule holds, and summed demand fits per processor.
pub fn plan_is_sound(plan: &DeploymentPlan, graph: &DataflowGraph, processors: &[VirtualProcessor]) -> Result<(), String> {
    if plan.assignments.len() != graph.shells.len() {
        return Err(format!("{} of {} shells assigned", plan.assignments.len(), graph.shells.len()));
    }
    let mut load: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for (shell, a) in &plan.assignments {
        let imp = graph
            .implementations
            .get(&a.implementation_id)
            .ok_or_else(|| format!("unknown implementation {}", a.implementation_id))?;
        if &imp.shell_id != shell {
            return Err(format!("{} does not belong to {shell}", imp.id));
        }
        let vp = processors
            .iter()
            .find(|p| p.id == a.processor_id)
            .ok_or_else(|| format!("unknown processor {}", a.processor_id))?;
        if !brute_prefix(vp.accept_tag.descriptors(), imp.compat_tag.descriptors()) {
            return Err(format!("{} incompatible with {}", imp.id, vp.id));
        }
        let l = load.entry(vp.id.as_str()).or_default();
        for (r, d) in &imp.demand {
            *l.entry(r.as_str()).or_insert(0) += d;
        }
    }
    for (pid, l) in load {
        let vp = processors.iter().find(|p| p.id == pid).unwrap();
        for (r, total) in l {
            let used = vp.occupancy.get(r).copied().unwrap_or(0);
            let cap = vp.capacity.get(r).copied().unwrap_or(0);
            if used + total > cap {
                return Err(format!("{pid}.{r}: {used}+{total} > {cap}"));
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------ dataflow

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Identity,
    AddConst(i64),
    Scale(i64),
    Clamp(i64, i64),
    SumWindow(usize),
    Tee(usize),
    Sum(usize),
}

impl OpKind {
    pub fn name_and_params(&self) -> (&'static str, Vec<i64>) {
        match *self {
            OpKind::Identity => ("identity", vec![]),
            OpKind::AddConst(k) => ("add_const", vec![k]),
            OpKind::Scale(k) => ("scale", vec![k]),
            OpKind::Clamp(lo, hi) => ("clamp", vec![lo, hi]),
            OpKind::SumWindow(n) => ("sum_window", vec![n as i64]),
            OpKind::Tee(_) => ("tee", vec![]),
            OpKind::Sum(_) => ("sum", vec![]),
        }
    }

    pub fn arity(&self) -> (usize, usize) {
        match *self {
            OpKind::Tee(n) => (1, n),
            OpKind::Sum(n) => (n, 1),
            _ => (1, 1),
        }
    }

    pub fn random_unary<R: Rng>(rng: &mut R) -> OpKind {
        match rng.gen_range(0..5) {
            0 => OpKind::Identity,
            1 => OpKind::AddConst(rng.gen_range(-100..=100)),
            2 => OpKind::Scale(rng.gen_range(-5..=5)),
            3 => {
                let lo = rng.gen_range(-500..=0);
                OpKind::Clamp(lo, lo + rng.gen_range(0..=1000))
            }
            _ => OpKind::SumWindow(rng.gen_range(1..=5)),
        }
    }
}

/// Independent stream semantics: strict firing over the shortest input,
/// wrapping integer arithmetic.
pub fn apply(op: OpKind, inputs: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let n = inputs.iter().map(Vec::len).min().unwrap_or(0);
    match op {
        OpKind::Identity => vec![inputs[0][..n].to_vec()],
        OpKind::AddConst(k) => vec![inputs[0][..n].iter().map(|x| x.wrapping_add(k)).collect()],
        OpKind::Scale(k) => vec![inputs[0][..n].iter().map(|x| x.wrapping_mul(k)).collect()],
        OpKind::Clamp(lo, hi) => vec![inputs[0][..n]
            .iter()
            .map(|x| if *x < lo { lo } else if *x > hi { hi } else { *x })
            .collect()],
        OpKind::SumWindow(w) => {
            let xs = &inputs[0][..n];
            vec![(0..n)
                .map(|i| {
                    let start = (i + 1).saturating_sub(w);
                    xs[start..=i].iter().fold(0i64, |a, b| a.wrapping_add(*b))
                })
                .collect()]
        }
        OpKind::Tee(outs) => vec![inputs[0][..n].to_vec(); outs],
        OpKind::Sum(_) => vec![(0..n)
            .map(|i| inputs.iter().fold(0i64, |a, xs| a.wrapping_add(xs[i])))
            .collect()],
    }
}

/// A random feed-forward graph of catalog operators.
#[derive(Debug, Clone)]
pub struct RandomDag {
    pub shells: Vec<(String, OpKind)>,
    /// (from shell, out port idx) -> (to shell, in port idx)
    pub edges: Vec<((usize, usize), (usize, usize))>,
    /// (shell, in port idx) -> values
    pub sources: Vec<((usize, usize), Vec<i64>)>,
    /// (shell, out port idx)
    pub sinks: Vec<(usize, usize)>,
}

fn in_port(i: usize) -> String {
    format!("in{i}")
}

fn out_port(i: usize) -> String {
    format!("out{i}")
}

impl RandomDag {
    pub fn generate<R: Rng>(rng: &mut R, max_shells: usize, max_tokens: usize) -> RandomDag {
        let n = rng.gen_range(1..=max_shells);
        let mut dag = RandomDag {
            shells: Vec::new(),
            edges: Vec::new(),
            sources: Vec::new(),
            sinks: Vec::new(),
        };
        let mut open: Vec<(usize, usize)> = Vec::new();
        let base_len = rng.gen_range(0..=max_tokens);
        for s in 0..n {
            let op = match rng.gen_range(0..10) {
                0 | 1 => OpKind::Tee(rng.gen_range(2..=3)),
                2 | 3 => OpKind::Sum(rng.gen_range(2..=3)),
                _ => OpKind::random_unary(rng),
            };
            let (ins, outs) = op.arity();
            for i in 0..ins {
                if !open.is_empty() && rng.gen_bool(0.75) {
                    let k = rng.gen_range(0..open.len());
                    let from = open.swap_remove(k);
                    dag.edges.push((from, (s, i)));
                } else {
                    let len = if rng.gen_bool(0.8) {
                        base_len
                    } else {
                        rng.gen_range(0..=max_tokens)
                    };
                    let values = (0..len).map(|_| rng.gen_range(-1000..=1000)).collect();
                    dag.sources.push(((s, i), values));
                }
            }
            for o in 0..outs {
                open.push((s, o));
            }
            dag.shells.push((format!("N{s:02}"), op));
        }
        dag.sinks = open;
        dag.sinks.sort();
        dag
    }

    /// Each shell gets a host implementation and, every other shell, a more
    /// specific simulated-FPGA one so both backends are exercised.
    pub fn graph(&self) -> DataflowGraph {
        let mut g = DataflowGraph::new();
        for (s, (id, op)) in self.shells.iter().enumerate() {
            let (ins, outs) = op.arity();
            let mut shell = AlgorithmShell::new(id);
            for i in 0..ins {
                shell = shell.with_input(&in_port(i), "i64");
            }
            for o in 0..outs {
                shell = shell.with_output(&out_port(o), "i64");
            }
            g.add_shell(shell).unwrap();
            let (name, params) = op.name_and_params();
            g.register_implementation(
                AlgorithmImplementation::new(&format!("{id}-cpu"), id, tag("cpu.host"), Payload::builtin(name, &params))
                    .with_demand("slots", 1),
            )
            .unwrap();
            if s % 2 == 0 {
                g.register_implementation(
                    AlgorithmImplementation::new(
                        &format!("{id}-fpga"),
                        id,
                        tag("fpga.xilinx.virtex.xcv100"),
                        Payload::bitstream(&format!("{name}.bit"), name, &params),
                    )
                    .with_demand("luts", 10),
                )
                .unwrap();
            }
        }
        let pref = |(s, p): (usize, usize), input: bool| {
            PortRef::new(&self.shells[s].0, &if input { in_port(p) } else { out_port(p) })
        };
        for (from, to) in &self.edges {
            g.connect(pref(*from, false), pref(*to, true)).unwrap();
        }
        for (at, values) in &self.sources {
            let text: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            g.bind_source(pref(*at, true), &format!("seq:{}", text.join(","))).unwrap();
        }
        for at in &self.sinks {
            g.bind_sink(pref(*at, false), "collect:").unwrap();
        }
        g
    }

    /// Recursive reference interpreter: the stream on an output port is the
    /// operator applied to the streams on its shell's inputs.
    pub fn reference(&self) -> BTreeMap<String, Vec<i64>> {
        let mut memo: BTreeMap<usize, Vec<Vec<i64>>> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for &(s, p) in &self.sinks {
            let streams = self.eval_shell(s, &mut memo);
            out.insert(format!("{}.{}", self.shells[s].0, out_port(p)), streams[p].clone());
        }
        out
    }

    fn eval_shell(&self, s: usize, memo: &mut BTreeMap<usize, Vec<Vec<i64>>>) -> Vec<Vec<i64>> {
        if let Some(v) = memo.get(&s) {
            return v.clone();
        }
        let (ins, _) = self.shells[s].1.arity();
        let inputs: Vec<Vec<i64>> = (0..ins)
            .map(|i| {
                if let Some((_, vals)) = self.sources.iter().find(|(at, _)| *at == (s, i)) {
                    return vals.clone();
                }
                let ((fs, fp), _) = *self.edges.iter().find(|(_, to)| *to == (s, i)).unwrap();
                self.eval_shell(fs, memo)[fp].clone()
            })
            .collect();
        let result = apply(self.shells[s].1, &inputs);
        memo.insert(s, result.clone());
        result
    }
}

/// Processors that can host every shell of a [`RandomDag`].
pub fn dag_registry() -> Registry {
    let r = Registry::new();
    r.load_ham(
        &HamManifest::from_json(
            r#"{"ham_id":"ws","name":"workstation","processors":[
                {"id":"FPGA0","accept_tag":"fpga.xilinx.virtex","capacity":{"luts":40},"backend_kind":"simulated-fpga"},
                {"id":"CPU0","accept_tag":"cpu","capacity":{"slots":16},"backend_kind":"host-executor"}]}"#,
        )
        .unwrap(),
    )
    .unwrap();
    r
}
