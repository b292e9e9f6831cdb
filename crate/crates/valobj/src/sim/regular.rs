//! Crash-tolerant implementation over per-process shared ledgers. Each call
//! snapshots every ledger, stamps the operation with the observed lengths,
//! validates it against the union of the snapshots, and on success appends
//! the stamped record to the caller's own ledger before acknowledging.

use super::kernel::World;
use crate::apps;
use crate::dlo::{CallId, LedgerRecord};
use crate::ordered::OrderedOps;
use crate::types::{ApplyResult, OperationRecord, ProcessId, VectorTimestamp, ts_precedes};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Clone, Debug, Hash, PartialEq, Eq)]
enum Phase {
    Idle,
    AwaitGet { j: usize, call: CallId },
    AwaitAppend { call: CallId },
    Done,
}

#[derive(Clone, Debug, Hash)]
pub struct RegularActor {
    pid: ProcessId,
    n: usize,
    workload: VecDeque<OperationRecord>,
    phase: Phase,
    current: Option<OperationRecord>,
    snapshots: Vec<Vec<LedgerRecord>>,
    counts: Vec<u32>,
}

impl RegularActor {
    pub fn new(pid: ProcessId, n: usize, workload: Vec<OperationRecord>) -> Self {
        for op in &workload {
            assert_eq!(op.uid.issuer, pid, "workload op issued by its own process");
        }
        let phase = if workload.is_empty() { Phase::Done } else { Phase::Idle };
        RegularActor {
            pid,
            n,
            workload: workload.into(),
            phase,
            current: None,
            snapshots: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn pid(&self) -> ProcessId {
        self.pid
    }

    pub fn done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn runnable(&self, w: &World) -> bool {
        match &self.phase {
            Phase::Idle => true,
            Phase::AwaitGet { call, .. } | Phase::AwaitAppend { call } => {
                w.fabric.outcome(*call).is_some()
            }
            Phase::Done => false,
        }
    }

    pub fn describe_wait(&self) -> String {
        match &self.phase {
            Phase::AwaitGet { j, call } => {
                format!("waiting on get(L{}) call {call}", j + 1)
            }
            Phase::AwaitAppend { call } => format!("waiting on append call {call}"),
            Phase::Idle => "runnable".into(),
            Phase::Done => "done".into(),
        }
    }

    fn next_or_done(&mut self) {
        self.phase = if self.workload.is_empty() { Phase::Done } else { Phase::Idle };
    }

    pub fn step(&mut self, w: &mut World) {
        match self.phase.clone() {
            Phase::Idle => {
                let mut op = self.workload.pop_front().expect("idle implies work left");
                apps::autofill_at_invoke(&w.spec_name, &mut op, w.tick);
                w.emit_invoke(op.clone());
                w.log(format!("#p{} begins {}", self.pid, op.render_call()));
                self.current = Some(op);
                self.snapshots.clear();
                self.counts.clear();
                let call = w.fabric.begin_get(0, self.pid, w.tick);
                self.phase = Phase::AwaitGet { j: 0, call };
            }
            Phase::AwaitGet { j, call } => {
                let (_, returned) = w.fabric.outcome(call).expect("runnable implies complete");
                let copy = returned.expect("gets return a copy").clone();
                self.counts.push(copy.len() as u32);
                self.snapshots.push(copy);
                if j + 1 < self.n {
                    let call = w.fabric.begin_get(j + 1, self.pid, w.tick);
                    self.phase = Phase::AwaitGet { j: j + 1, call };
                } else {
                    self.finish_op(w);
                }
            }
            Phase::AwaitAppend { call } => {
                assert!(w.fabric.outcome(call).is_some(), "runnable implies complete");
                self.current = None;
                self.next_or_done();
            }
            Phase::Done => unreachable!("done actors are never scheduled"),
        }
    }

    /// All snapshots are in: stamp, validate against the union prefix, and
    /// either append-then-acknowledge or reject immediately.
    fn finish_op(&mut self, w: &mut World) {
        let op = self.current.clone().expect("an operation is in flight");
        let ts = VectorTimestamp::new(self.pid, self.counts.clone());
        let mut union: BTreeMap<_, LedgerRecord> = BTreeMap::new();
        for snap in &self.snapshots {
            for rec in snap {
                if let Some(prev) = union.get(&rec.op.uid) {
                    assert_eq!(prev, rec, "copies of one record never diverge");
                } else {
                    union.insert(rec.op.uid, rec.clone());
                }
            }
        }
        let records: Vec<LedgerRecord> = union.into_values().collect();
        let prefix = derive_partial_order(&records)
            .expect("timestamp order on observed records is acyclic");
        let spec = w.object.spec().clone();
        if spec.valid(&prefix, &op, self.pid) {
            let r = spec.execute(&prefix, &op, self.pid);
            w.log(format!(
                "#p{} accepts {} with stamp {ts}",
                self.pid,
                op.render_call()
            ));
            let call = w.fabric.begin_append(
                self.pid.index(),
                self.pid,
                LedgerRecord { ts, op: op.clone() },
                w.tick,
            );
            w.pending_responds.push((call, op.uid, ApplyResult::Ack(r)));
            self.phase = Phase::AwaitAppend { call };
        } else {
            w.log(format!("#p{} rejects {}", self.pid, op.render_call()));
            w.emit_respond(op.uid, ApplyResult::Nack);
            self.current = None;
            self.next_or_done();
        }
    }
}

/// The order induced by the vector stamps: record a precedes record b when
/// b's stamp counts strictly more than a's position in a's own ledger.
/// The raw relation need not be transitive, so the closure is taken; a cycle
/// is reported as an error (it cannot arise from real ledger snapshots).
pub fn derive_partial_order(records: &[LedgerRecord]) -> Result<OrderedOps, String> {
    let mut pairs = Vec::new();
    for a in records {
        for b in records {
            if a.op.uid == b.op.uid {
                continue;
            }
            let prec = ts_precedes(&a.ts, &b.ts)
                .map_err(|e| format!("stamp comparison failed: {e}"))?;
            if prec {
                pairs.push((a.op.uid, b.op.uid));
            }
        }
    }
    OrderedOps::from_pairs(records.iter().map(|r| r.op.clone()), pairs)
        .map_err(|e| format!("timestamp order is not a strict partial order: {e}"))
}

/// Extend a partial order to a total one, preferring earlier responders among
/// the ready operations (Kahn's algorithm with a min-respond-time tie-break).
/// `respond_rank` maps each uid to its position in response order.
pub fn response_order_extension(
    order: &OrderedOps,
    respond_rank: &BTreeMap<crate::types::OpUid, usize>,
) -> Vec<crate::types::OpUid> {
    let uids: Vec<_> = order.uids().collect();
    let mut remaining: BTreeSet<_> = uids.iter().copied().collect();
    let mut out = Vec::with_capacity(uids.len());
    while !remaining.is_empty() {
        let ready = remaining
            .iter()
            .copied()
            .filter(|&u| {
                !remaining
                    .iter()
                    .any(|&v| v != u && order.precedes(v, u))
            })
            .min_by_key(|u| respond_rank.get(u).copied().unwrap_or(usize::MAX))
            .expect("a finite strict partial order always has a minimal element");
        remaining.remove(&ready);
        out.push(ready);
    }
    out
}

/// Every pair ordered by real time must also be ordered by the stamps.
pub fn real_time_contained(
    trace: &crate::history::HistoryTrace,
    order: &OrderedOps,
) -> Result<(), String> {
    let completed = trace.completed_acked();
    for a in &completed {
        for b in &completed {
            let (ua, ub) = (a.op.uid, b.op.uid);
            if ua == ub || !order.contains(ua) || !order.contains(ub) {
                continue;
            }
            if a.respond_time < b.invoke_time && !order.precedes(ua, ub) {
                return Err(format!(
                    "{ua} finished before {ub} began but the stamp order does not relate them"
                ));
            }
        }
    }
    Ok(())
}

/// Position invariant: the record stored at index k of a process's ledger
/// carries k as its own-ledger count.
pub fn ledger_self_count_invariant(fabric: &crate::dlo::LedgerFabric) -> Result<(), String> {
    for l in 0..fabric.ledger_count() {
        let hist = fabric.canonical_history(l);
        for (k, rec) in hist.iter().enumerate() {
            let own = rec.ts.counts[rec.ts.issuer.index()];
            if own as usize != k {
                return Err(format!(
                    "record {} sits at index {k} of L{} but counts {own} own records",
                    rec.op.uid,
                    l + 1
                ));
            }
            if rec.ts.issuer.index() != l {
                return Err(format!(
                    "record {} issued by p{} stored in L{}",
                    rec.op.uid,
                    rec.ts.issuer,
                    l + 1
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::scenario::{build_kernel, parse_scenario, seeded_scenario, ScenarioImpl};
    use super::*;
    use crate::checkers::{check_regular, CheckBudget};
    use crate::types::OpUid;

    fn run_scenario(text: &str, seed: u64) -> super::super::kernel::Kernel {
        let mut k = build_kernel(&parse_scenario(text).expect("scenario parses"))
            .expect("scenario builds")
            .kernel;
        let summary = k.run(seed);
        assert!(summary.deadlocked.is_empty(), "{:?}", summary.deadlocked);
        k
    }

    #[test]
    fn seeded_punching_run_is_regular_and_stamps_are_sound() {
        let text = "valobj-v1 scenario\n\
                    impl regular\n\
                    object punching\n\
                    n 3\n\
                    f 0\n\
                    p1: punch-in(9) punch-out\n\
                    p2: punch-in(10) punch-out\n\
                    p3: punch-in(11)\n";
        for seed in [1u64, 2, 3, 4, 5] {
            let k = run_scenario(text, seed);
            let trace = k.completed_trace().unwrap();
            let spec = k.world.object.spec().clone();
            let report = check_regular(&spec, &trace, &CheckBudget::default()).unwrap();
            assert!(report.passed(), "seed {seed}: {:?}", report.witness());

            ledger_self_count_invariant(&k.world.fabric).unwrap();
            let mut all: Vec<LedgerRecord> = Vec::new();
            for l in 0..k.world.fabric.ledger_count() {
                all.extend(k.world.fabric.canonical_history(l));
            }
            let order = derive_partial_order(&all).unwrap();
            real_time_contained(&trace, &order).unwrap();
        }
    }

    #[test]
    fn rejected_op_is_answered_but_never_stored() {
        let text = "valobj-v1 scenario\n\
                    impl regular\n\
                    object crypto:n=2,ibalance=1\n\
                    n 2\n\
                    f 0\n\
                    p1: transfer(2,5)\n";
        let k = run_scenario(text, 9);
        let trace = k.completed_trace().unwrap();
        assert_eq!(trace.events().len(), 2);
        assert!(trace.completed_acked().is_empty(), "the transfer is rejected");
        for l in 0..k.world.fabric.ledger_count() {
            assert!(k.world.fabric.canonical_history(l).is_empty());
        }
    }

    #[test]
    fn extension_prefers_response_order_among_ready_ops() {
        let mk = |p: u32, s: u32| OpUid::new(ProcessId(p), s);
        let rec = |p: u32, s: u32| {
            crate::types::OperationRecord::new(mk(p, s), "read", vec![])
        };
        let order = crate::ordered::OrderedOps::from_pairs(
            [rec(1, 1), rec(2, 1), rec(3, 1)],
            [(mk(1, 1), mk(3, 1))],
        )
        .unwrap();
        let ranks: BTreeMap<OpUid, usize> =
            [(mk(2, 1), 0), (mk(1, 1), 1), (mk(3, 1), 2)].into_iter().collect();
        let ext = response_order_extension(&order, &ranks);
        assert_eq!(ext, vec![mk(2, 1), mk(1, 1), mk(3, 1)]);
    }

    #[test]
    fn extension_respects_order_over_response_ranks() {
        // The later responder comes first when the partial order demands it.
        let mk = |p: u32, s: u32| OpUid::new(ProcessId(p), s);
        let rec = |p: u32, s: u32| {
            crate::types::OperationRecord::new(mk(p, s), "read", vec![])
        };
        let order = crate::ordered::OrderedOps::from_pairs(
            [rec(1, 1), rec(2, 1)],
            [(mk(2, 1), mk(1, 1))],
        )
        .unwrap();
        let ranks: BTreeMap<OpUid, usize> = [(mk(1, 1), 0), (mk(2, 1), 1)].into_iter().collect();
        let ext = response_order_extension(&order, &ranks);
        assert_eq!(ext, vec![mk(2, 1), mk(1, 1)]);
    }

    #[test]
    fn seeded_corpus_is_regular_on_both_backends() {
        for seed in 20..26u64 {
            for backend in [
                crate::dlo::Backend::Oracle,
                crate::dlo::Backend::Replicated {
                    replicas: 3,
                    tolerated: 1,
                },
            ] {
                let scenario = seeded_scenario(
                    "versioned",
                    ScenarioImpl::Regular,
                    backend,
                    3,
                    8,
                    1,
                    seed,
                )
                .unwrap();
                let mut k = build_kernel(&scenario).unwrap().kernel;
                let summary = k.run(seed);
                assert!(summary.deadlocked.is_empty(), "{:?}", summary.deadlocked);
                let trace = k.completed_trace().unwrap();
                let spec = k.world.object.spec().clone();
                let report = check_regular(&spec, &trace, &CheckBudget::default()).unwrap();
                assert!(report.passed(), "seed {seed}: {:?}", report.witness());
                crate::dlo::check_ledger_linearizable(k.world.fabric.calls()).unwrap();
            }
        }
    }
}
