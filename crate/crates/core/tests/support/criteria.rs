//! Criterion checks parameterised by size so the property tests can run
//! them small and the acceptance suite at full scale. Each returns a short
//! summary on success and the first counterexample on failure.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use hetflow_core::graph::{AlgorithmImplementation, Payload, PortRef};
use hetflow_core::ham::{DeployTarget, DeploymentHandle, HamError, HamManifest, Registry};
use hetflow_core::matcher::{commit_plan, plan_graph, CommitError, PlanMode};
use hetflow_core::operator::Value;
use hetflow_core::runtime::{start_run, RunConfig, SessionState};
use hetflow_core::{is_ancestor_or_equal, DataflowGraph, AlgorithmShell, Tag};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ------------------------------------------------------------ tag oracle

pub fn tag_oracle(seed: u64, pairs: usize) -> Check {
    let literal = [
        ("fpga.xilinx.virtex", "fpga.xilinx.virtex.xcv100", true),
        ("fpga.xilinx.virtex.revb", "fpga.xilinx.virtex.xcv100", false),
        ("fpga.xilinx.virtex.xcv100", "fpga.xilinx.virtex.xcv100", true),
    ];
    for (p, i, want) in literal {
        let got = is_ancestor_or_equal(&Tag::parse(p).unwrap(), &Tag::parse(i).unwrap());
        if got != want {
            return Err(format!("{p} vs {i}: got {got}, want {want}"));
        }
    }
    let mut r = rng(seed);
    let mut agreed_true = 0;
    for _ in 0..pairs {
        let p = random_tag(&mut r);
        // bias toward related pairs so both verdicts are well represented
        let i = if r.gen_bool(0.5) {
            let mut d = p.descriptors().to_vec();
            for _ in 0..r.gen_range(0..3) {
                d.push(["a", "b", "virtex"].choose(&mut r).unwrap().to_string());
            }
            if r.gen_bool(0.2) {
                let k = r.gen_range(0..d.len());
                d[k] = "zz".into();
            }
            Tag::from_descriptors(d).unwrap()
        } else {
            random_tag(&mut r)
        };
        let got = is_ancestor_or_equal(&p, &i);
        let want = brute_prefix(p.descriptors(), i.descriptors());
        if got != want {
            return Err(format!("{p} vs {i}: got {got}, oracle {want}"));
        }
        agreed_true += usize::from(got);
    }
    Ok(format!("{} pairs + 3 literal cases agree ({} compatible)", pairs, agreed_true))
}

// ---------------------------------------------------- matcher completeness

fn capacity_vectors(processors: usize) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..processors {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..=2u64).map(move |c| {
                    let mut w = v.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
    }
    out
}

/// Every shape up to 4 shells x 3 implementations x 4 processors and every
/// capacity vector over {0,1,2}, with `samples` random tag/demand fillings
/// per cell.
pub fn matcher_completeness(seed: u64, samples: usize) -> Check {
    let mut r = rng(seed);
    let mut instances = 0usize;
    let mut feasible = 0usize;
    let mut contention_free = 0usize;
    let mut greedy_complete = 0usize;
    for shells in 1..=4 {
        for impls in 1..=3 {
            for procs in 1..=4 {
                for caps in capacity_vectors(procs) {
                    for _ in 0..samples {
                        let inst = random_instance(&mut r, shells, impls, &caps);
                        let graph = inst.graph();
                        let registry = inst.registry();
                        let vps = registry.snapshot();
                        let truth = inst.brute_force_feasible();
                        let ex = plan_graph(&graph, &vps, PlanMode::Exhaustive)
                            .map_err(|e| format!("exhaustive rejected graph: {e}"))?;
                        let gr = plan_graph(&graph, &vps, PlanMode::Greedy)
                            .map_err(|e| format!("greedy rejected graph: {e}"))?;
                        instances += 1;
                        feasible += usize::from(truth);
                        if ex.is_complete() != truth {
                            return Err(format!(
                                "exhaustive says {} but brute force says {truth}: {inst:?}",
                                ex.is_complete()
                            ));
                        }
                        if ex.is_complete() {
                            plan_is_sound(&ex, &graph, &vps)
                                .map_err(|e| format!("unsound exhaustive plan: {e}: {inst:?}"))?;
                        }
                        if gr.is_complete() {
                            greedy_complete += 1;
                            plan_is_sound(&gr, &graph, &vps)
                                .map_err(|e| format!("unsound greedy plan: {e}: {inst:?}"))?;
                            if !truth {
                                return Err(format!("greedy found a plan brute force missed: {inst:?}"));
                            }
                        }
                        if inst.contention_free() {
                            contention_free += 1;
                            if gr.is_complete() != truth {
                                return Err(format!(
                                    "greedy says {} on a contention-free instance, brute force {truth}: {inst:?}",
                                    gr.is_complete()
                                ));
                            }
                        }
                        // determinism
                        let again = plan_graph(&graph, &vps, PlanMode::Exhaustive).unwrap();
                        if again != ex {
                            return Err(format!("exhaustive plan not deterministic: {inst:?}"));
                        }
                    }
                }
            }
        }
    }
    Ok(format!(
        "{instances} instances ({feasible} feasible); greedy complete on {greedy_complete}, \
         agrees on all {contention_free} contention-free"
    ))
}

// -------------------------------------------------- capacity conservation

fn conservation_registry() -> Registry {
    let r = Registry::new();
    r.load_ham(
        &HamManifest::from_json(
            r#"{"ham_id":"c","name":"c","processors":[
                {"id":"F0","accept_tag":"fpga.xilinx","capacity":{"luts":100,"dsp":4},"backend_kind":"simulated-fpga"},
                {"id":"F1","accept_tag":"fpga","capacity":{"luts":50},"backend_kind":"simulated-fpga"},
                {"id":"C0","accept_tag":"cpu","capacity":{"slots":4},"backend_kind":"host-executor"},
                {"id":"C1","accept_tag":"cpu.host","capacity":{"slots":2,"mem":8},"backend_kind":"host-executor"}]}"#,
        )
        .unwrap(),
    )
    .unwrap();
    r
}

fn random_impl<R: Rng>(r: &mut R, n: usize) -> AlgorithmImplementation {
    let text = *TAG_POOL.choose(r).unwrap();
    let tag = Tag::parse(text).unwrap();
    let mut imp = AlgorithmImplementation::new(&format!("I{n}"), "S", tag, Payload::builtin("identity", &[]));
    // mostly resources the matching processor kind has, sometimes a foreign one
    let own: &[(&str, u64)] = if text.starts_with("fpga") {
        &[("luts", 40), ("dsp", 2)]
    } else {
        &[("slots", 2), ("mem", 4)]
    };
    for (res, max) in own {
        if r.gen_bool(0.6) {
            imp.demand.insert(res.to_string(), r.gen_range(0..=*max));
        }
    }
    if r.gen_bool(0.05) {
        imp.demand.insert(["luts", "dsp", "slots", "mem"].choose(r).unwrap().to_string(), 1);
    }
    imp
}

fn ledger_matches(registry: &Registry, live: &[(DeploymentHandle, AlgorithmImplementation)]) -> Result<(), String> {
    let mut expected: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for vp in registry.snapshot() {
        expected.entry(vp.id.clone()).or_default();
    }
    for (h, imp) in live {
        let e = expected.get_mut(&h.processor_id).unwrap();
        for (res, d) in &imp.demand {
            *e.entry(res.clone()).or_insert(0) += d;
        }
    }
    for vp in registry.snapshot() {
        let got: BTreeMap<String, u64> = vp.occupancy.iter().filter(|(_, v)| **v > 0).map(|(k, v)| (k.clone(), *v)).collect();
        let want: BTreeMap<String, u64> = expected[&vp.id].iter().filter(|(_, v)| **v > 0).map(|(k, v)| (k.clone(), *v)).collect();
        if got != want {
            return Err(format!("{}: occupancy {got:?} != live demand {want:?}", vp.id));
        }
        for (res, used) in &vp.occupancy {
            if *used > vp.capacity.get(res).copied().unwrap_or(0) {
                return Err(format!("{}.{res}: {used} exceeds capacity", vp.id));
            }
        }
    }
    let got: BTreeSet<String> = registry.live_handles().into_iter().map(|h| h.handle_id).collect();
    let want: BTreeSet<String> = live.iter().map(|(h, _)| h.handle_id.clone()).collect();
    if got != want {
        return Err(format!("live handles {got:?} != {want:?}"));
    }
    Ok(())
}

pub fn capacity_conservation(seed: u64, steps: usize) -> Check {
    let mut r = rng(seed);
    let registry = conservation_registry();
    let procs: Vec<String> = registry.snapshot().into_iter().map(|p| p.id).collect();
    let mut live: Vec<(DeploymentHandle, AlgorithmImplementation)> = Vec::new();
    let mut dead: Vec<DeploymentHandle> = Vec::new();
    let (mut deploys, mut refusals) = (0, 0);
    for step in 0..steps {
        let roll = r.gen_range(0..10);
        if roll < 6 {
            let imp = random_impl(&mut r, step);
            let pid = procs.choose(&mut r).unwrap().clone();
            let vp = registry.processor(&pid).unwrap();
            let predicted = brute_prefix(vp.accept_tag.descriptors(), imp.compat_tag.descriptors())
                && imp.demand.iter().all(|(res, d)| {
                    vp.occupancy.get(res).copied().unwrap_or(0) + d <= vp.capacity.get(res).copied().unwrap_or(0)
                });
            match registry.deploy(&pid, &imp) {
                Ok(h) => {
                    if !predicted {
                        return Err(format!("step {step}: deploy of {imp:?} on {pid} should have been refused"));
                    }
                    deploys += 1;
                    live.push((h, imp));
                }
                Err(HamError::NotDeployable { .. }) => {
                    if predicted {
                        return Err(format!("step {step}: deploy of {imp:?} on {pid} refused"));
                    }
                    refusals += 1;
                }
                Err(e) => return Err(format!("step {step}: {e}")),
            }
        } else if roll < 9 && !live.is_empty() {
            let k = r.gen_range(0..live.len());
            let (h, _) = live.swap_remove(k);
            registry.undeploy(&h).map_err(|e| format!("step {step}: {e}"))?;
            dead.push(h);
        } else if let Some(h) = dead.choose(&mut r) {
            match registry.undeploy(h) {
                Err(HamError::StaleHandle(_)) => {}
                other => return Err(format!("step {step}: stale undeploy returned {other:?}")),
            }
        }
        ledger_matches(&registry, &live).map_err(|e| format!("step {step}: {e}"))?;
    }
    Ok(format!("{steps} steps, {deploys} deploys, {refusals} refusals, ledger exact throughout"))
}

// ---------------------------------------------------------------- rollback

/// Passes deployments through to a registry, failing the `fail_at`-th.
pub struct FailNth<'a> {
    pub inner: &'a Registry,
    pub fail_at: usize,
    pub calls: std::cell::Cell<usize>,
}

impl DeployTarget for FailNth<'_> {
    fn deploy(&self, processor_id: &str, implementation: &AlgorithmImplementation) -> Result<DeploymentHandle, HamError> {
        let n = self.calls.get();
        self.calls.set(n + 1);
        if n == self.fail_at {
            return Err(HamError::UnknownProcessor(format!("{processor_id} (injected)")));
        }
        self.inner.deploy(processor_id, implementation)
    }

    fn undeploy(&self, handle: &DeploymentHandle) -> Result<(), HamError> {
        self.inner.undeploy(handle)
    }
}

pub fn rollback_exactness(seed: u64, failures: usize) -> Check {
    let mut r = rng(seed);
    let mut injected = 0;
    let mut attempts = 0;
    while injected < failures {
        attempts += 1;
        if attempts > failures * 50 {
            return Err(format!("only {injected} feasible instances generated"));
        }
        let shells = r.gen_range(1..=6);
        let caps: Vec<u64> = (0..4).map(|_| r.gen_range(2..=6)).collect();
        let inst = random_instance(&mut r, shells, 3, &caps);
        let graph = inst.graph();
        let registry = inst.registry();
        // some unrelated load already on the processors
        for k in 0..r.gen_range(0..3) {
            let pid = proc_id(r.gen_range(0..caps.len()));
            let vp = registry.processor(&pid).unwrap();
            let imp = AlgorithmImplementation::new(&format!("pre{k}"), "X", vp.accept_tag.clone(), Payload::builtin("identity", &[]))
                .with_demand("slots", 1);
            let _ = registry.deploy(&pid, &imp);
        }
        let plan = plan_graph(&graph, &registry.snapshot(), PlanMode::Exhaustive).unwrap();
        if !plan.is_complete() {
            continue;
        }
        let before_occ = registry.occupancy();
        let before_live = registry.live_handles();
        let before_deployments: Vec<_> = registry.snapshot().into_iter().map(|p| p.deployments).collect();
        let target = FailNth {
            inner: &registry,
            fail_at: r.gen_range(0..plan.assignments.len()),
            calls: Default::default(),
        };
        match commit_plan(&plan, &graph, &target) {
            Err(CommitError::CommitFailed { .. }) => {}
            other => return Err(format!("injection {injected}: commit returned {other:?}")),
        }
        let after_deployments: Vec<_> = registry.snapshot().into_iter().map(|p| p.deployments).collect();
        if registry.occupancy() != before_occ || registry.live_handles() != before_live || after_deployments != before_deployments {
            return Err(format!(
                "injection {injected}: occupancy {:?} differs from snapshot {before_occ:?}",
                registry.occupancy()
            ));
        }
        injected += 1;
    }
    Ok(format!("{injected} injected failures, every occupancy map restored"))
}

// ------------------------------------------------------- dataflow integrity

fn as_ints(values: &[Value]) -> Option<Vec<i64>> {
    values.iter().map(Value::as_i64).collect()
}

fn run_and_compare(label: &str, graph: DataflowGraph, want: &BTreeMap<String, Vec<i64>>, watchdog: Duration) -> Result<usize, String> {
    let registry = Arc::new(dag_registry());
    let session = start_run(label, Arc::new(graph), registry.clone(), RunConfig::default())
        .map_err(|e| format!("{label}: start failed: {e}"))?;
    if !session.wait(watchdog) {
        let _ = session.stop();
        return Err(format!("{label}: watchdog expired after {watchdog:?}"));
    }
    let stats = session.stats();
    if stats.state != SessionState::Stopped {
        return Err(format!("{label}: ended {:?} ({:?})", stats.state, stats.error));
    }
    if stats.sequence_errors != 0 {
        return Err(format!("{label}: {} sequence errors", stats.sequence_errors));
    }
    if stats.tokens_per_edge != stats.consumed_per_edge {
        return Err(format!(
            "{label}: produced {:?} != consumed {:?}",
            stats.tokens_per_edge, stats.consumed_per_edge
        ));
    }
    let got: BTreeMap<String, Vec<i64>> = stats
        .sinks
        .iter()
        .map(|(k, v)| (k.clone(), as_ints(v).unwrap_or_default()))
        .collect();
    if &got != want {
        let diff: Vec<&String> = want.keys().filter(|k| got.get(*k) != want.get(*k)).collect();
        return Err(format!("{label}: sinks {diff:?} differ from the reference"));
    }
    if !registry.live_handles().is_empty() {
        return Err(format!("{label}: deployments left behind"));
    }
    Ok(got.values().map(Vec::len).sum())
}

pub fn demo_graph() -> DataflowGraph {
    let mut g = DataflowGraph::new();
    for id in ["S1", "S2"] {
        g.add_shell(AlgorithmShell::new(id).with_input("in", "i64").with_output("out", "i64"))
            .unwrap();
    }
    g.register_implementation(AlgorithmImplementation::new(
        "S1-cpu",
        "S1",
        Tag::parse("cpu.host").unwrap(),
        Payload::builtin("add_const", &[1]),
    ))
    .unwrap();
    g.register_implementation(
        AlgorithmImplementation::new(
            "S2-fpga",
            "S2",
            Tag::parse("fpga.xilinx.virtex.xcv100").unwrap(),
            Payload::bitstream("scale2.bit", "scale", &[2]),
        )
        .with_demand("luts", 10),
    )
    .unwrap();
    g.connect(PortRef::new("S1", "out"), PortRef::new("S2", "in")).unwrap();
    g.bind_source(PortRef::new("S1", "in"), "seq:1,2,3").unwrap();
    g.bind_sink(PortRef::new("S2", "out"), "collect:").unwrap();
    g
}

pub fn dataflow_integrity(seed: u64, dags: usize, max_shells: usize, max_tokens: usize, watchdog: Duration) -> Check {
    let want: BTreeMap<String, Vec<i64>> = [("S2.out".to_string(), vec![4, 6, 8])].into();
    run_and_compare("demo", demo_graph(), &want, watchdog)?;
    let mut r = rng(seed);
    let mut delivered = 0;
    for k in 0..dags {
        let dag = RandomDag::generate(&mut r, max_shells, max_tokens);
        let want = dag.reference();
        delivered += run_and_compare(&format!("dag{k}"), dag.graph(), &want, watchdog)?;
    }
    Ok(format!("demo = [4,6,8]; {dags} random DAGs match the reference ({delivered} sink tokens)"))
}

// ------------------------------------------------------ backend equivalence

fn backend_registry() -> Registry {
    let r = Registry::new();
    r.load_ham(
        &HamManifest::from_json(
            r#"{"ham_id":"b","name":"b","processors":[
                {"id":"HOST","accept_tag":"cpu","capacity":{"slots":64},"backend_kind":"host-executor"},
                {"id":"FPGA","accept_tag":"fpga","capacity":{"luts":1000},"backend_kind":"simulated-fpga"}]}"#,
        )
        .unwrap(),
    )
    .unwrap();
    r
}

pub fn backend_equivalence(seed: u64, inputs: usize) -> Check {
    let mut r = rng(seed);
    let registry = backend_registry();
    let ops = [
        OpKind::Identity,
        OpKind::AddConst(r.gen_range(-1000..=1000)),
        OpKind::Scale(r.gen_range(-9..=9)),
        OpKind::Clamp(-300, 300),
        OpKind::SumWindow(r.gen_range(1..=8)),
        OpKind::Tee(3),
        OpKind::Sum(3),
    ];
    for (k, op) in ops.iter().enumerate() {
        let (name, params) = op.name_and_params();
        let host_imp = AlgorithmImplementation::new(&format!("h{k}"), "S", Tag::parse("cpu").unwrap(), Payload::builtin(name, &params));
        let fpga_imp = AlgorithmImplementation::new(
            &format!("f{k}"),
            "S",
            Tag::parse("fpga.x").unwrap(),
            Payload::bitstream(&format!("{name}.bit"), name, &params),
        );
        let hh = registry.deploy("HOST", &host_imp).map_err(|e| e.to_string())?;
        let fh = registry.deploy("FPGA", &fpga_imp).map_err(|e| e.to_string())?;
        let mut host = registry.instantiate_runner(&hh).map_err(|e| e.to_string())?;
        let mut fpga = registry.instantiate_runner(&fh).map_err(|e| e.to_string())?;
        let (ins, outs) = op.arity();
        let columns: Vec<Vec<i64>> = (0..ins)
            .map(|_| {
                (0..inputs)
                    .map(|_| match r.gen_range(0..20) {
                        0 => i64::MAX - r.gen_range(0..10),
                        1 => i64::MIN + r.gen_range(0..10),
                        _ => r.gen_range(-100_000..=100_000),
                    })
                    .collect()
            })
            .collect();
        let reference = apply(*op, &columns);
        for t in 0..inputs {
            let args: Vec<Value> = columns.iter().map(|c| Value::I64(c[t])).collect();
            let a = host.fire(&args, outs).map_err(|e| format!("{name} host: {e}"))?;
            let b = fpga.fire(&args, outs).map_err(|e| format!("{name} fpga: {e}"))?;
            if a != b {
                return Err(format!("{name} input {t} {args:?}: host {a:?} != fpga {b:?}"));
            }
            let want: Vec<Value> = reference.iter().map(|col| Value::I64(col[t])).collect();
            if a != want {
                return Err(format!("{name} input {t} {args:?}: runners {a:?} != reference {want:?}"));
            }
        }
        registry.undeploy(&hh).unwrap();
        registry.undeploy(&fh).unwrap();
    }
    Ok(format!("{} operators x {inputs} inputs identical on both backends", ops.len()))
}
