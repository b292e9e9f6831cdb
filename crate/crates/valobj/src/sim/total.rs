//! Totally-ordered implementation over atomic broadcast. A process
//! broadcasts its call, every process applies delivered calls to its local
//! replica in sequence order, and the caller answers when its own call is
//! delivered back to it.

use super::kernel::World;
use crate::apps;
use crate::ordered::OrderedOps;
use crate::types::{ApplyResult, OpUid, OperationRecord, ProcessId};
use std::collections::{BTreeMap, VecDeque};

/// Atomic broadcast with a built-in sequencer. Accepting a message and
/// applying it to the canonical object happen in the same step, so a sender
/// crash can never leave a half-accepted call; per-process cursors hand out
/// deliveries in sequence order.
#[derive(Clone, Debug, Default, Hash)]
pub struct AbService {
    accepted: Vec<(ProcessId, OperationRecord)>,
    canonical: Vec<ApplyResult>,
    cursors: BTreeMap<ProcessId, usize>,
}

impl AbService {
    fn cursor(&self, pid: ProcessId) -> usize {
        self.cursors.get(&pid).copied().unwrap_or(0)
    }

    /// Accept a message and run the sequencer's apply, atomically.
    pub fn broadcast(
        &mut self,
        sender: ProcessId,
        op: OperationRecord,
        object: &mut crate::object::CentralizedObject,
    ) -> usize {
        let seq = self.accepted.len();
        let res = object
            .apply(op.clone(), sender)
            .expect("sequencer applies each accepted call once");
        self.accepted.push((sender, op));
        self.canonical.push(res);
        seq
    }

    pub fn pending_for(&self, pid: ProcessId) -> bool {
        self.cursor(pid) < self.accepted.len()
    }

    /// Hand `pid` its next delivery and advance its cursor.
    pub fn next_for(&mut self, pid: ProcessId) -> (usize, ProcessId, OperationRecord) {
        let at = self.cursor(pid);
        assert!(at < self.accepted.len(), "delivery requested with none pending");
        let (sender, op) = self.accepted[at].clone();
        self.cursors.insert(pid, at + 1);
        (at, sender, op)
    }

    pub fn canonical(&self, seq: usize) -> &ApplyResult {
        &self.canonical[seq]
    }

    /// The canonical result of an accepted call, by uid.
    pub fn result_of(&self, uid: OpUid) -> Option<&ApplyResult> {
        self.accepted
            .iter()
            .position(|(_, op)| op.uid == uid)
            .map(|seq| &self.canonical[seq])
    }

    pub fn accepted_len(&self) -> usize {
        self.accepted.len()
    }
}

#[derive(Clone, Debug, Hash, PartialEq, Eq)]
enum Phase {
    Idle,
    AwaitMine { uid: OpUid },
    Done,
}

#[derive(Clone, Debug, Hash)]
pub struct TotalActor {
    pid: ProcessId,
    workload: VecDeque<OperationRecord>,
    /// Local replica of the applied sequence.
    s: OrderedOps,
    phase: Phase,
}

impl TotalActor {
    pub fn new(pid: ProcessId, workload: Vec<OperationRecord>) -> Self {
        for op in &workload {
            assert_eq!(op.uid.issuer, pid, "workload op issued by its own process");
        }
        let phase = if workload.is_empty() { Phase::Done } else { Phase::Idle };
        TotalActor {
            pid,
            workload: workload.into(),
            s: OrderedOps::empty(),
            phase,
        }
    }

    pub fn pid(&self) -> ProcessId {
        self.pid
    }

    pub fn local_sequence(&self) -> &OrderedOps {
        &self.s
    }

    /// All own calls issued and answered. Deliveries of other processes'
    /// calls keep arriving past this point and are still applied.
    pub fn done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// A broadcast is out but has not come back yet. A crash in this window
    /// leaves the call accepted but unanswered, the case the trace
    /// completion rule exists for.
    pub fn in_flight(&self) -> bool {
        matches!(self.phase, Phase::AwaitMine { .. })
    }

    pub fn runnable(&self, _w: &World) -> bool {
        // Progress while waiting comes from deliveries, not steps.
        self.phase == Phase::Idle
    }

    pub fn describe_wait(&self) -> String {
        match &self.phase {
            Phase::AwaitMine { uid } => format!("waiting for own delivery of {uid}"),
            Phase::Idle => "runnable".into(),
            Phase::Done => "done".into(),
        }
    }

    pub fn step(&mut self, w: &mut World) {
        assert_eq!(self.phase, Phase::Idle, "only idle actors take steps");
        let mut op = self.workload.pop_front().expect("idle implies work left");
        apps::autofill_at_invoke(&w.spec_name, &mut op, w.tick);
        w.emit_invoke(op.clone());
        w.log(format!("#p{} broadcasts {}", self.pid, op.render_call()));
        let uid = op.uid;
        let World { ab, object, .. } = w;
        ab.broadcast(self.pid, op, object);
        self.phase = Phase::AwaitMine { uid };
    }

    /// Apply the next delivery to the local replica; answering happens when
    /// the delivered call is this process's own.
    pub fn deliver_ab(&mut self, w: &mut World) {
        let (seq, sender, op) = w.ab.next_for(self.pid);
        let spec = w.object.spec().clone();
        let res = if spec.valid(&self.s, &op, sender) {
            ApplyResult::Ack(spec.execute(&self.s, &op, sender))
        } else {
            ApplyResult::Nack
        };
        assert_eq!(
            &res,
            w.ab.canonical(seq),
            "every replica agrees with the sequencer"
        );
        if res.is_ack() {
            self.s
                .append_to_sequence(op.clone())
                .expect("replica sequence extends without duplicates");
        }
        w.log(format!(
            "#p{} applies seq {} {} by p{sender}: {res}",
            self.pid,
            seq + 1,
            op.render_call()
        ));
        if let Phase::AwaitMine { uid } = self.phase {
            if sender == self.pid {
                assert_eq!(uid, op.uid, "deliveries come back in issue order");
                w.emit_respond(uid, res);
                self.phase = if self.workload.is_empty() { Phase::Done } else { Phase::Idle };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::kernel::{Actor, CrashTarget};
    use super::super::scenario::{build_kernel, parse_scenario};
    use super::*;
    use crate::checkers::{check_total, CheckBudget};

    fn build(text: &str) -> super::super::kernel::Kernel {
        build_kernel(&parse_scenario(text).expect("scenario parses"))
            .expect("scenario builds")
            .kernel
    }

    #[test]
    fn replicas_converge_and_history_is_totally_orderable() {
        let text = "valobj-v1 scenario\n\
                    impl total\n\
                    object versioned\n\
                    n 3\n\
                    f 0\n\
                    p1: write(<1,\"a\">,\"x\") read(\"x\")\n\
                    p2: write(<2,\"b\">,\"x\")\n\
                    p3: write(<1,\"c\">,\"x\") read(\"x\")\n";
        for seed in [7u64, 8, 9] {
            let mut k = build(text);
            let summary = k.run(seed);
            assert!(summary.deadlocked.is_empty(), "{:?}", summary.deadlocked);

            let mut sequences: Vec<Vec<crate::types::OpUid>> = Vec::new();
            for a in &k.actors {
                if let Actor::Total(t) = a {
                    let seq = t.local_sequence().to_sequence().unwrap();
                    sequences.push(seq.iter().map(|r| r.uid).collect());
                }
            }
            assert_eq!(sequences.len(), 3);
            assert_eq!(sequences[0], sequences[1], "seed {seed}");
            assert_eq!(sequences[1], sequences[2], "seed {seed}");

            let trace = k.completed_trace().unwrap();
            let spec = k.world.object.spec().clone();
            let report = check_total(&spec, &trace, &CheckBudget::default()).unwrap();
            assert!(report.passed(), "seed {seed}: {:?}", report.witness());
        }
    }

    #[test]
    fn caller_crash_after_broadcast_still_completes_the_call() {
        let text = "valobj-v1 scenario\n\
                    impl total\n\
                    object versioned\n\
                    n 2\n\
                    f 1\n\
                    p1: write(<1,\"a\">,\"x\")\n\
                    p2: read(\"x\")\n";
        let mut k = build(text);
        // p1 broadcasts, then dies before its own delivery arrives.
        let step_p1 = k
            .enabled_actions()
            .into_iter()
            .find(|a| matches!(a, super::super::kernel::Action::Step(0)))
            .unwrap();
        k.execute(step_p1);
        {
            let Actor::Total(t) = &k.actors[0] else { panic!("p1 is a broadcaster") };
            assert!(t.in_flight());
        }
        k.crash_now(CrashTarget::Process(ProcessId(1)));
        let summary = k.run(11);
        assert!(summary.deadlocked.is_empty(), "{:?}", summary.deadlocked);

        // The write went through the sequencer, so completion fills in its result.
        let trace = k.completed_trace().unwrap();
        let acked = trace.completed_acked();
        assert!(acked
            .iter()
            .any(|e| e.op.uid == crate::types::OpUid::new(ProcessId(1), 1)));

        // The survivor applied the crashed caller's write.
        let Actor::Total(t2) = &k.actors[1] else { panic!("p2 is a broadcaster") };
        assert!(t2
            .local_sequence()
            .contains(crate::types::OpUid::new(ProcessId(1), 1)));

        let spec = k.world.object.spec().clone();
        let report = check_total(&spec, &trace, &CheckBudget::default()).unwrap();
        assert!(report.passed(), "{:?}", report.witness());
    }

    #[test]
    fn local_filter_matches_sequencer_on_rejections() {
        // Both writers race version 1; whoever is sequenced second gets rejected
        // everywhere, never just locally.
        let text = "valobj-v1 scenario\n\
                    impl total\n\
                    object versioned\n\
                    n 2\n\
                    f 0\n\
                    p1: write(<1,\"a\">,\"x\")\n\
                    p2: write(<1,\"b\">,\"x\")\n";
        for seed in 0..6u64 {
            let mut k = build(text);
            let summary = k.run(seed);
            assert!(summary.deadlocked.is_empty(), "{:?}", summary.deadlocked);
            let trace = k.completed_trace().unwrap();
            let acked = trace.completed_acked();
            assert_eq!(acked.len(), 1, "seed {seed}: exactly one version-1 write wins");
        }
    }
}
