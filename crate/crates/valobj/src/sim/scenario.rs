//! Scenario files describe a complete simulation setup: which
//! implementation to run, the object and its parameters, process count,
//! crash budget, storage backend, per-process workloads, and (for consensus
//! runs) the protocol and proposals. The same structures also back the
//! seeded corpus generator used by the test suite.

use super::consensus::{build_consensus_kernel, ConsensusProtocol};
use super::kernel::{Actor, CrashTarget, ImplKind, Kernel, PlannedCrash, World};
use super::regular::RegularActor;
use super::total::{AbService, TotalActor};
use crate::apps::{self, AppKind, SpecEntry};
use crate::checkers::ReductionWitness;
use crate::dlo::{Backend, LedgerFabric};
use crate::object::CentralizedObject;
use crate::registers::RegisterBank;
use crate::types::{OpUid, OperationRecord, ProcessId, Value};
use crate::wire;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioImpl {
    Regular,
    Total,
    Consensus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolChoice {
    Mutual,
    Oneway,
    Wrapper,
    /// Wrapper forced onto a one-way invalidation witness.
    WrapperOneway,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub impl_kind: ScenarioImpl,
    pub object: String,
    pub n: usize,
    pub f: usize,
    pub backend: Backend,
    pub seed: Option<u64>,
    pub crash_plan: Vec<(CrashTarget, u64)>,
    pub workloads: BTreeMap<ProcessId, Vec<OperationRecord>>,
    pub protocol: Option<ProtocolChoice>,
    pub proposals: Vec<Value>,
}

fn err(line: usize, msg: impl Into<String>) -> String {
    format!("line {line}: {}", msg.into())
}

pub fn parse_crash_spec(s: &str) -> Result<(CrashTarget, u64), String> {
    let (target, at) = s
        .split_once('@')
        .ok_or_else(|| format!("crash `{s}` is not target@step"))?;
    let step: u64 = at
        .parse()
        .map_err(|_| format!("crash step `{at}` is not an integer"))?;
    if let Some(p) = target.strip_prefix('p') {
        let id: u32 = p
            .parse()
            .map_err(|_| format!("process `{target}` is not p<id>"))?;
        if id == 0 {
            return Err("process ids start at 1".into());
        }
        Ok((CrashTarget::Process(ProcessId(id)), step))
    } else if let Some(r) = target.strip_prefix('r') {
        let id: usize = r
            .parse()
            .map_err(|_| format!("server `{target}` is not r<id>"))?;
        if id == 0 {
            return Err("server ids start at 1".into());
        }
        Ok((CrashTarget::Replica(id - 1), step))
    } else {
        Err(format!("crash target `{target}` is neither p<id> nor r<id>"))
    }
}

/// Parse the scenario text format. The first line must be the header; the
/// body is `key value` pairs plus `p<k>: call call ...` workload lines.
/// `#` starts a comment.
pub fn parse_scenario(text: &str) -> Result<Scenario, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == wire::SCENARIO_HEADER => {}
        _ => return Err(format!("missing `{}` header", wire::SCENARIO_HEADER)),
    }

    let mut impl_kind: Option<ScenarioImpl> = None;
    let mut object: Option<String> = None;
    let mut n: Option<usize> = None;
    let mut f: usize = 0;
    let mut backend = Backend::Oracle;
    let mut seed: Option<u64> = None;
    let mut crash_plan: Vec<(CrashTarget, u64)> = Vec::new();
    let mut raw_workloads: Vec<(usize, ProcessId, String)> = Vec::new();
    let mut protocol: Option<ProtocolChoice> = None;
    let mut proposals: Vec<Value> = Vec::new();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = match raw.split_once('#') {
            Some((before, _)) => before.trim(),
            None => raw.trim(),
        };
        if line.is_empty() {
            continue;
        }
        if let Some((head, rest)) = line.split_once(':') {
            let head = head.trim();
            if head.starts_with('p') && head[1..].chars().all(|c| c.is_ascii_digit()) {
                let id: u32 = head[1..]
                    .parse()
                    .map_err(|_| err(line_no, format!("bad process `{head}`")))?;
                if id == 0 {
                    return Err(err(line_no, "process ids start at 1"));
                }
                raw_workloads.push((line_no, ProcessId(id), rest.trim().to_string()));
                continue;
            }
        }
        let (key, value) = match line.split_once(char::is_whitespace) {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (line, ""),
        };
        match key {
            "impl" => {
                impl_kind = Some(match value {
                    "regular" => ScenarioImpl::Regular,
                    "total" => ScenarioImpl::Total,
                    "consensus" => ScenarioImpl::Consensus,
                    other => {
                        return Err(err(
                            line_no,
                            format!("impl `{other}` is not regular, total, or consensus"),
                        ))
                    }
                });
            }
            "object" => object = Some(value.to_string()),
            "n" => {
                n = Some(
                    value
                        .parse()
                        .map_err(|_| err(line_no, format!("n `{value}` is not an integer")))?,
                );
            }
            "f" => {
                f = value
                    .parse()
                    .map_err(|_| err(line_no, format!("f `{value}` is not an integer")))?;
            }
            "backend" => {
                let mut parts = value.split_whitespace();
                match parts.next() {
                    Some("oracle") => backend = Backend::Oracle,
                    Some("replicated") => {
                        let replicas: usize = parts
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| err(line_no, "replicated backend needs a server count"))?;
                        let tolerated: usize = parts
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| err(line_no, "replicated backend needs a crash bound"))?;
                        backend = Backend::Replicated {
                            replicas,
                            tolerated,
                        };
                        backend.validate().map_err(|e| err(line_no, e))?;
                    }
                    other => {
                        return Err(err(
                            line_no,
                            format!("backend `{}` is not oracle or replicated", other.unwrap_or("")),
                        ))
                    }
                }
                if parts.next().is_some() {
                    return Err(err(line_no, "trailing tokens after backend"));
                }
            }
            "seed" => {
                seed = Some(
                    value
                        .parse()
                        .map_err(|_| err(line_no, format!("seed `{value}` is not an integer")))?,
                );
            }
            "crash" => {
                for part in value.split_whitespace() {
                    crash_plan.push(parse_crash_spec(part).map_err(|e| err(line_no, e))?);
                }
            }
            "protocol" => {
                protocol = Some(match value {
                    "mutual" => ProtocolChoice::Mutual,
                    "oneway" => ProtocolChoice::Oneway,
                    "wrapper" => ProtocolChoice::Wrapper,
                    "wrapper-oneway" => ProtocolChoice::WrapperOneway,
                    other => {
                        return Err(err(
                            line_no,
                            format!(
                                "protocol `{other}` is not mutual, oneway, wrapper, or wrapper-oneway"
                            ),
                        ))
                    }
                });
            }
            "proposals" => {
                for part in value.split(',') {
                    proposals.push(
                        wire::parse_value(part.trim(), line_no, true).map_err(|e| e.to_string())?,
                    );
                }
            }
            other => return Err(err(line_no, format!("unknown key `{other}`"))),
        }
    }

    let impl_kind = impl_kind.ok_or("scenario names no impl")?;
    let object = object.ok_or("scenario names no object")?;
    let entry = apps::spec_by_name(&object).map_err(|e| e.to_string())?;
    let n = n.ok_or("scenario names no n")?;
    if n == 0 {
        return Err("n must be at least 1".into());
    }
    if crash_plan.len() > f {
        return Err(format!(
            "crash plan schedules {} crashes but f is {f}",
            crash_plan.len()
        ));
    }

    let mut workloads: BTreeMap<ProcessId, Vec<OperationRecord>> = BTreeMap::new();
    for (line_no, pid, calls) in raw_workloads {
        if pid.index() >= n {
            return Err(err(line_no, format!("p{pid} is outside 1..={n}")));
        }
        let list = workloads.entry(pid).or_default();
        for call_src in split_calls(&calls) {
            // A bare name is a zero-argument call.
            let (kind, args) = if call_src.contains('(') {
                wire::parse_call(&call_src, line_no, true).map_err(|e| e.to_string())?
            } else {
                (call_src, Vec::new())
            };
            let args = entry
                .app
                .canonicalize_workload_op(&kind, args, pid)
                .map_err(|e| err(line_no, e))?;
            let seq = list.len() as u32 + 1;
            list.push(OperationRecord::new(OpUid::new(pid, seq), kind, args));
        }
    }

    match impl_kind {
        ScenarioImpl::Regular => {}
        ScenarioImpl::Total | ScenarioImpl::Consensus => {
            if backend != Backend::Oracle {
                return Err("only the ledger implementation takes a storage backend".into());
            }
        }
    }
    if impl_kind == ScenarioImpl::Consensus {
        if protocol.is_none() {
            return Err("consensus scenarios name a protocol".into());
        }
        if !workloads.is_empty() {
            return Err("consensus scenarios take proposals, not workloads".into());
        }
        if proposals.is_empty() {
            return Err("consensus scenarios need proposals".into());
        }
    } else {
        if protocol.is_some() || !proposals.is_empty() {
            return Err("protocol and proposals apply only to consensus scenarios".into());
        }
        if workloads.is_empty() {
            return Err("no workload lines".into());
        }
    }

    Ok(Scenario {
        impl_kind,
        object,
        n,
        f,
        backend,
        seed,
        crash_plan,
        workloads,
        protocol,
        proposals,
    })
}

/// Split a workload line into call sources: whitespace separates calls, but
/// whitespace inside parentheses or quotes belongs to the call.
fn split_calls(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut in_str = false;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '"' => {
                in_str = !in_str;
                cur.push(c);
            }
            '(' | '<' if !in_str => {
                depth += 1;
                cur.push(c);
            }
            ')' | '>' if !in_str => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            c if c.is_whitespace() && depth == 0 && !in_str => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// A scenario turned into a runnable kernel. Consensus scenarios carry the
/// proposal map their verdict needs.
pub struct Built {
    pub kernel: Kernel,
    pub proposals: Option<BTreeMap<ProcessId, Value>>,
}

/// Locate the invalidation witness a consensus build runs on, searching the
/// object's default three-process universe to prefix depth 3.
pub fn reduction_witness_for(entry: &SpecEntry, oneway: bool) -> Option<ReductionWitness> {
    let universe = entry.app.default_universe(3);
    if oneway {
        crate::checkers::find_oneway_reduction_witness(&entry.spec, &universe, 3)
    } else {
        crate::checkers::find_reduction_witness(&entry.spec, &universe, 3)
    }
}

pub fn build_kernel(scenario: &Scenario) -> Result<Built, String> {
    let entry = apps::spec_by_name(&scenario.object).map_err(|e| e.to_string())?;
    match scenario.impl_kind {
        ScenarioImpl::Regular => {
            let fabric = LedgerFabric::new(scenario.backend.clone(), scenario.n)?;
            let world = World {
                tick: 0,
                history: Vec::new(),
                fabric,
                registers: RegisterBank::new(),
                ab: AbService::default(),
                object: CentralizedObject::new(entry.spec.clone()),
                spec_name: scenario.object.clone(),
                debug: Vec::new(),
                pending_responds: Vec::new(),
            };
            let actors = (1..=scenario.n as u32)
                .map(ProcessId)
                .map(|pid| {
                    Actor::Regular(RegularActor::new(
                        pid,
                        scenario.n,
                        scenario.workloads.get(&pid).cloned().unwrap_or_default(),
                    ))
                })
                .collect();
            let kernel = Kernel::new(
                world,
                actors,
                ImplKind::Regular,
                scenario.f,
                planned(&scenario.crash_plan),
            )?;
            Ok(Built {
                kernel,
                proposals: None,
            })
        }
        ScenarioImpl::Total => {
            let world = World {
                tick: 0,
                history: Vec::new(),
                fabric: LedgerFabric::new(Backend::Oracle, 0)
                    .expect("the oracle backend always validates"),
                registers: RegisterBank::new(),
                ab: AbService::default(),
                object: CentralizedObject::new(entry.spec.clone()),
                spec_name: scenario.object.clone(),
                debug: Vec::new(),
                pending_responds: Vec::new(),
            };
            let actors = (1..=scenario.n as u32)
                .map(ProcessId)
                .map(|pid| {
                    Actor::Total(TotalActor::new(
                        pid,
                        scenario.workloads.get(&pid).cloned().unwrap_or_default(),
                    ))
                })
                .collect();
            let kernel = Kernel::new(
                world,
                actors,
                ImplKind::Total,
                scenario.f,
                planned(&scenario.crash_plan),
            )?;
            Ok(Built {
                kernel,
                proposals: None,
            })
        }
        ScenarioImpl::Consensus => {
            let choice = scenario.protocol.expect("validated at parse time");
            let oneway_witness =
                matches!(choice, ProtocolChoice::Oneway | ProtocolChoice::WrapperOneway);
            let witness = reduction_witness_for(&entry, oneway_witness).ok_or_else(|| {
                format!(
                    "object `{}` keeps concurrent operations valid; nothing to race",
                    scenario.object
                )
            })?;
            let protocol = match choice {
                ProtocolChoice::Mutual => ConsensusProtocol::Mutual,
                ProtocolChoice::Oneway => ConsensusProtocol::Oneway,
                ProtocolChoice::Wrapper | ProtocolChoice::WrapperOneway => {
                    ConsensusProtocol::Wrapper { n: scenario.n }
                }
            };
            let proposals = assign_proposals(&witness, protocol, scenario.n, &scenario.proposals)?;
            let kernel = build_consensus_kernel(
                &entry.spec,
                &scenario.object,
                &witness,
                protocol,
                &proposals,
                scenario.f,
            )?;
            if !scenario.crash_plan.is_empty() {
                return Err("consensus runs enumerate crashes; use f, not a crash plan".into());
            }
            Ok(Built {
                kernel,
                proposals: Some(proposals),
            })
        }
    }
}

/// Map positional proposals onto process ids: the racing pair in issuer
/// order for two-process protocols, p1..pn for the wrapper.
pub fn assign_proposals(
    witness: &ReductionWitness,
    protocol: ConsensusProtocol,
    n: usize,
    values: &[Value],
) -> Result<BTreeMap<ProcessId, Value>, String> {
    let mut map = BTreeMap::new();
    match protocol {
        ConsensusProtocol::Mutual | ConsensusProtocol::Oneway => {
            if values.len() != 2 {
                return Err(format!(
                    "two-process protocol takes 2 proposals, got {}",
                    values.len()
                ));
            }
            map.insert(witness.op_i.uid.issuer, values[0].clone());
            map.insert(witness.op_j.uid.issuer, values[1].clone());
        }
        ConsensusProtocol::Wrapper { .. } => {
            if values.len() != n {
                return Err(format!(
                    "wrapper at n={n} takes {n} proposals, got {}",
                    values.len()
                ));
            }
            for (k, v) in values.iter().enumerate() {
                map.insert(ProcessId(k as u32 + 1), v.clone());
            }
        }
    }
    Ok(map)
}

fn planned(plan: &[(CrashTarget, u64)]) -> Vec<PlannedCrash> {
    plan.iter()
        .map(|(t, at)| PlannedCrash::new(*t, *at))
        .collect()
}

/// Deterministic workload generator for the seeded corpus: up to `max_ops`
/// operations spread over `n` processes, shaped to each application's call
/// mix so that runs exercise both acceptance and rejection paths.
pub fn seeded_workload(
    app: &AppKind,
    n: u32,
    max_ops: usize,
    seed: u64,
) -> BTreeMap<ProcessId, Vec<OperationRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let total = rng.gen_range(max_ops.min(4)..=max_ops);
    let mut per_process: BTreeMap<ProcessId, Vec<OperationRecord>> = BTreeMap::new();
    for pid in (1..=n).map(ProcessId) {
        per_process.insert(pid, Vec::new());
    }
    for _ in 0..total {
        let pid = ProcessId(rng.gen_range(1..=n));
        let list = per_process.get_mut(&pid).expect("all processes preseeded");
        let seq = list.len() as u32 + 1;
        let uid = OpUid::new(pid, seq);
        let op = match app {
            AppKind::Punching => {
                // Strict per-process alternation keeps every call valid; the
                // clock argument of a punch-out is filled at invocation.
                if seq % 2 == 1 {
                    let t = rng.gen_range(1..=40i64);
                    OperationRecord::new(
                        uid,
                        "punch-in",
                        vec![Value::Int(t), Value::Int(pid.0 as i64)],
                    )
                } else {
                    OperationRecord::new(uid, "punch-out", vec![Value::Int(pid.0 as i64)])
                }
            }
            AppKind::Crypto { accounts, .. } => {
                if rng.gen_range(0..3) < 2 {
                    let to = rng.gen_range(1..=*accounts) as i64;
                    let x = rng.gen_range(1..=4i64);
                    OperationRecord::new(
                        uid,
                        "transfer",
                        vec![Value::Int(pid.0 as i64), Value::Int(to), Value::Int(x)],
                    )
                } else {
                    let k = rng.gen_range(1..=*accounts) as i64;
                    OperationRecord::new(uid, "read", vec![Value::Int(k)])
                }
            }
            AppKind::DoAll { jobs, .. } => {
                let job = jobs[rng.gen_range(0..jobs.len())].clone();
                let kind = if rng.gen_range(0..3) < 2 { "do" } else { "completed" };
                OperationRecord::new(
                    uid,
                    kind,
                    vec![Value::str(job), Value::Int(pid.0 as i64)],
                )
            }
            AppKind::Versioned => {
                if rng.gen_range(0..3) < 2 {
                    let ver = rng.gen_range(1..=5i64);
                    let tag = format!("p{}s{}", pid.0, seq);
                    OperationRecord::new(
                        uid,
                        "write",
                        vec![
                            Value::pair(Value::Int(ver), Value::str(tag)),
                            Value::str("x"),
                        ],
                    )
                } else {
                    OperationRecord::new(uid, "read", vec![Value::str("x")])
                }
            }
            AppKind::PositiveRegister => {
                if rng.gen_range(0..2) == 0 {
                    let v = rng.gen_range(-2..=5i64);
                    OperationRecord::new(uid, "write", vec![Value::Int(v)])
                } else {
                    OperationRecord::new(uid, "read", vec![])
                }
            }
        };
        list.push(op);
    }
    per_process
}

/// Deterministic crash plan for the seeded corpus: with roughly one chance
/// in two, a single crash of a random process (or, when servers exist, a
/// random server) at a small step index.
pub fn seeded_crash_plan(n: u32, replicas: usize, f: usize, seed: u64) -> Vec<(CrashTarget, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    if f == 0 || rng.gen_range(0..2) == 0 {
        return Vec::new();
    }
    if replicas > 0 && rng.gen_range(0..3) == 0 {
        let r = rng.gen_range(0..replicas);
        vec![(CrashTarget::Replica(r), rng.gen_range(0..12))]
    } else {
        let p = rng.gen_range(1..=n);
        vec![(CrashTarget::Process(ProcessId(p)), rng.gen_range(0..8))]
    }
}

/// A ready-made corpus scenario: seeded workload plus seeded crash plan for
/// one of the registered objects.
pub fn seeded_scenario(
    object: &str,
    impl_kind: ScenarioImpl,
    backend: Backend,
    n: usize,
    max_ops: usize,
    f: usize,
    seed: u64,
) -> Result<Scenario, String> {
    assert_ne!(
        impl_kind,
        ScenarioImpl::Consensus,
        "the corpus generator covers workload scenarios only"
    );
    let entry = apps::spec_by_name(object).map_err(|e| e.to_string())?;
    let workloads = seeded_workload(&entry.app, n as u32, max_ops, seed);
    let replicas = match (&impl_kind, &backend) {
        (ScenarioImpl::Regular, Backend::Replicated { replicas, .. }) => *replicas,
        _ => 0,
    };
    let crash_plan = seeded_crash_plan(n as u32, replicas, f, seed);
    Ok(Scenario {
        impl_kind,
        object: object.to_string(),
        n,
        f,
        backend,
        seed: Some(seed),
        crash_plan,
        workloads,
        protocol: None,
        proposals: Vec::new(),
    })
}
