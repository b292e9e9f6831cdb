//! Shared append-only ledgers.
//!
//! Each process owns one ledger that everyone may read. Two backends: an
//! oracle that completes every call at its issuing step, and a replicated
//! backend that spreads each ledger over a crash-prone server cluster and
//! completes calls on majority acknowledgements. Call completions are
//! decoupled from the caller: an append whose writes reached a majority
//! completes even if the appending process has crashed meanwhile.

use crate::types::{OperationRecord, ProcessId, VectorTimestamp};
use serde::Serialize;
use std::collections::BTreeMap;

pub type CallId = u64;
pub type MsgId = u64;

/// One ledger entry: the operation together with the vector of ledger
/// lengths its issuer observed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct LedgerRecord {
    pub ts: VectorTimestamp,
    pub op: OperationRecord,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    /// Calls complete atomically at their issuing step.
    Oracle,
    /// Every ledger is stored on `replicas` servers; calls complete on
    /// majority acknowledgement and survive up to `tolerated` server crashes.
    Replicated { replicas: usize, tolerated: usize },
}

impl Backend {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Backend::Oracle => Ok(()),
            Backend::Replicated {
                replicas,
                tolerated,
            } => {
                if *replicas == 0 {
                    return Err("replicated backend needs at least one server".into());
                }
                if tolerated * 2 >= *replicas {
                    return Err(format!(
                        "cannot tolerate {tolerated} crashes with {replicas} servers; \
                         a majority must survive"
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LedgerCallKind {
    Get,
    Append(LedgerRecord),
}

/// Audit record of one ledger call, for the linearizability check.
#[derive(Clone, Debug)]
pub struct LedgerCallRecord {
    pub id: CallId,
    pub ledger: usize,
    pub caller: ProcessId,
    pub kind: LedgerCallKind,
    pub invoked: u64,
    pub completed: Option<u64>,
    /// For gets: the adopted history.
    pub returned: Option<Vec<LedgerRecord>>,
}

#[derive(Clone, Debug, Hash)]
enum Phase {
    AppendWait { acks: usize },
    GetRead { acks: usize, best: Vec<LedgerRecord> },
    GetWriteBack { acks: usize },
    Done,
}

#[derive(Clone, Debug, Hash)]
enum Msg {
    Write {
        replica: usize,
        ledger: usize,
        history: Vec<LedgerRecord>,
        call: CallId,
    },
    WriteAck {
        call: CallId,
    },
    Read {
        replica: usize,
        ledger: usize,
        call: CallId,
    },
    ReadAck {
        call: CallId,
        history: Vec<LedgerRecord>,
    },
}

#[derive(Clone, Debug, Hash)]
struct Replica {
    alive: bool,
    /// One history per ledger.
    store: Vec<Vec<LedgerRecord>>,
}

/// The ledger service: owns every ledger's storage, tracks in-flight calls,
/// and (for the replicated backend) the undelivered messages.
#[derive(Clone, Debug)]
pub struct LedgerFabric {
    backend: Backend,
    n_ledgers: usize,
    oracle_store: Vec<Vec<LedgerRecord>>,
    replicas: Vec<Replica>,
    calls: Vec<LedgerCallRecord>,
    phases: BTreeMap<CallId, Phase>,
    messages: BTreeMap<MsgId, Msg>,
    next_msg: MsgId,
    pub debug: Vec<(u64, String)>,
}

impl LedgerFabric {
    pub fn new(backend: Backend, n_ledgers: usize) -> Result<Self, String> {
        backend.validate()?;
        let replicas = match &backend {
            Backend::Oracle => Vec::new(),
            Backend::Replicated { replicas, .. } => (0..*replicas)
                .map(|_| Replica {
                    alive: true,
                    store: vec![Vec::new(); n_ledgers],
                })
                .collect(),
        };
        Ok(LedgerFabric {
            backend,
            n_ledgers,
            oracle_store: vec![Vec::new(); n_ledgers],
            replicas,
            calls: Vec::new(),
            phases: BTreeMap::new(),
            messages: BTreeMap::new(),
            next_msg: 0,
            debug: Vec::new(),
        })
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    pub fn ledger_count(&self) -> usize {
        self.n_ledgers
    }

    pub fn calls(&self) -> &[LedgerCallRecord] {
        &self.calls
    }

    fn quorum(&self) -> usize {
        self.replicas.len() / 2 + 1
    }

    fn new_call(
        &mut self,
        ledger: usize,
        caller: ProcessId,
        kind: LedgerCallKind,
        now: u64,
    ) -> CallId {
        assert!(ledger < self.n_ledgers, "ledger index out of range");
        let id = self.calls.len() as CallId;
        self.calls.push(LedgerCallRecord {
            id,
            ledger,
            caller,
            kind,
            invoked: now,
            completed: None,
            returned: None,
        });
        id
    }

    fn send(&mut self, msg: Msg) {
        // A message addressed to a crashed server would never be processed;
        // it is dropped at the sending step.
        if let Msg::Write { replica, .. } | Msg::Read { replica, .. } = &msg {
            if !self.replicas[*replica].alive {
                return;
            }
        }
        self.messages.insert(self.next_msg, msg);
        self.next_msg += 1;
    }

    /// Start reading `ledger`. Under the oracle the call completes now.
    pub fn begin_get(&mut self, ledger: usize, caller: ProcessId, now: u64) -> CallId {
        let id = self.new_call(ledger, caller, LedgerCallKind::Get, now);
        match self.backend {
            Backend::Oracle => {
                let history = self.oracle_store[ledger].clone();
                self.complete(id, Some(history), now);
            }
            Backend::Replicated { .. } => {
                self.debug
                    .push((now, format!("#dlo get L{} by p{} starts call {}", ledger + 1, caller, id)));
                self.phases.insert(
                    id,
                    Phase::GetRead {
                        acks: 0,
                        best: Vec::new(),
                    },
                );
                for r in 0..self.replicas.len() {
                    self.send(Msg::Read {
                        replica: r,
                        ledger,
                        call: id,
                    });
                }
            }
        }
        id
    }

    /// Start appending to `ledger`. Completion does not require the caller
    /// to stay alive: once a majority stored the record, the call finishes.
    pub fn begin_append(
        &mut self,
        ledger: usize,
        caller: ProcessId,
        record: LedgerRecord,
        now: u64,
    ) -> CallId {
        let id = self.new_call(ledger, caller, LedgerCallKind::Append(record.clone()), now);
        match self.backend {
            Backend::Oracle => {
                self.oracle_store[ledger].push(record);
                self.complete(id, None, now);
            }
            Backend::Replicated { .. } => {
                self.debug.push((
                    now,
                    format!("#dlo append L{} by p{} starts call {}", ledger + 1, caller, id),
                ));
                self.phases.insert(id, Phase::AppendWait { acks: 0 });
                // The full intended history travels with the write, so any
                // single delivered copy already carries every earlier record.
                let mut history = self.longest_copy(ledger);
                history.push(record);
                for r in 0..self.replicas.len() {
                    self.send(Msg::Write {
                        replica: r,
                        ledger,
                        history: history.clone(),
                        call: id,
                    });
                }
            }
        }
        id
    }

    /// Longest stored copy of a ledger across servers (the owner's latest
    /// append, since only the owner extends it).
    fn longest_copy(&self, ledger: usize) -> Vec<LedgerRecord> {
        match self.backend {
            Backend::Oracle => self.oracle_store[ledger].clone(),
            Backend::Replicated { .. } => self
                .replicas
                .iter()
                .map(|r| &r.store[ledger])
                .max_by_key(|h| h.len())
                .cloned()
                .unwrap_or_default(),
        }
    }

    pub fn canonical_history(&self, ledger: usize) -> Vec<LedgerRecord> {
        self.longest_copy(ledger)
    }

    fn complete(&mut self, call: CallId, history: Option<Vec<LedgerRecord>>, now: u64) {
        let rec = &mut self.calls[call as usize];
        assert!(rec.completed.is_none(), "call completed twice");
        rec.completed = Some(now);
        rec.returned = history;
        self.phases.insert(call, Phase::Done);
        if matches!(self.backend, Backend::Replicated { .. }) {
            self.debug
                .push((now, format!("#dlo call {call} completes")));
        }
    }

    /// The completion time and (for gets) adopted history, once a call is
    /// done.
    pub fn outcome(&self, call: CallId) -> Option<(u64, Option<&Vec<LedgerRecord>>)> {
        let rec = &self.calls[call as usize];
        rec.completed.map(|at| (at, rec.returned.as_ref()))
    }

    /// Undelivered message ids, in sending order.
    pub fn pending_messages(&self) -> Vec<MsgId> {
        self.messages.keys().copied().collect()
    }

    pub fn has_pending_messages(&self) -> bool {
        !self.messages.is_empty()
    }

    /// Deliver one in-flight message; this may advance or complete a call.
    pub fn deliver(&mut self, msg: MsgId, now: u64) {
        let msg = self.messages.remove(&msg).expect("unknown ledger message");
        match msg {
            Msg::Write {
                replica,
                ledger,
                history,
                call,
            } => {
                let node = &mut self.replicas[replica];
                if !node.alive {
                    return;
                }
                let stored = &mut node.store[ledger];
                if history.len() > stored.len() {
                    assert_eq!(
                        &history[..stored.len()],
                        stored.as_slice(),
                        "ledger copies must extend one another"
                    );
                    *stored = history;
                }
                self.send(Msg::WriteAck { call });
            }
            Msg::Read {
                replica,
                ledger,
                call,
            } => {
                let node = &self.replicas[replica];
                if !node.alive {
                    return;
                }
                let history = node.store[ledger].clone();
                self.send(Msg::ReadAck { call, history });
            }
            Msg::WriteAck { call } => {
                let quorum = self.quorum();
                match self.phases.get_mut(&call) {
                    Some(Phase::AppendWait { acks }) => {
                        *acks += 1;
                        if *acks >= quorum {
                            self.complete(call, None, now);
                        }
                    }
                    Some(Phase::GetWriteBack { acks }) => {
                        *acks += 1;
                        if *acks >= quorum {
                            // The adopted history was frozen at the round
                            // switch; securing it on a majority finishes the
                            // call.
                            let rec = &mut self.calls[call as usize];
                            assert!(rec.completed.is_none(), "call completed twice");
                            rec.completed = Some(now);
                            let len = rec.returned.as_ref().map_or(0, |h| h.len());
                            self.phases.insert(call, Phase::Done);
                            self.debug.push((
                                now,
                                format!("#dlo call {call} completes with {len} records"),
                            ));
                        }
                    }
                    Some(Phase::Done) | None => {
                        // Late acknowledgement beyond the quorum.
                    }
                    Some(Phase::GetRead { .. }) => {
                        panic!("write acknowledgement during read round")
                    }
                }
            }
            Msg::ReadAck { call, history } => {
                let quorum = self.quorum();
                let advance = match self.phases.get_mut(&call) {
                    Some(Phase::GetRead { acks, best }) => {
                        *acks += 1;
                        if history.len() > best.len() {
                            assert_eq!(
                                &history[..best.len()],
                                best.as_slice(),
                                "ledger copies must extend one another"
                            );
                            *best = history;
                        } else if !best.is_empty() {
                            assert_eq!(
                                &best[..history.len()],
                                history.as_slice(),
                                "ledger copies must extend one another"
                            );
                        }
                        if *acks >= quorum {
                            Some(best.clone())
                        } else {
                            None
                        }
                    }
                    // Acknowledgements beyond the quorum arrive after the
                    // round already moved on.
                    Some(Phase::GetWriteBack { .. }) | Some(Phase::Done) | None => None,
                    Some(Phase::AppendWait { .. }) => {
                        panic!("read acknowledgement for an append")
                    }
                };
                if let Some(best) = advance {
                    // Freeze the adopted history now; completion happens
                    // after the write-back round secures it on a majority.
                    let ledger = self.calls[call as usize].ledger;
                    self.calls[call as usize].returned = Some(best.clone());
                    self.phases.insert(call, Phase::GetWriteBack { acks: 0 });
                    for r in 0..self.replicas.len() {
                        self.send(Msg::Write {
                            replica: r,
                            ledger,
                            history: best.clone(),
                            call,
                        });
                    }
                }
            }
        }
    }

    /// Crash one server: it stops processing, and messages addressed to it
    /// will never be handled.
    pub fn crash_replica(&mut self, replica: usize, now: u64) {
        assert!(replica < self.replicas.len(), "no such server");
        self.replicas[replica].alive = false;
        self.messages.retain(|_, m| {
            !matches!(m, Msg::Write { replica: r, .. } | Msg::Read { replica: r, .. } if *r == replica)
        });
        self.debug.push((now, format!("#dlo server r{} crashes", replica + 1)));
    }

    pub fn replica_alive(&self, replica: usize) -> bool {
        self.replicas[replica].alive
    }

    /// The server a message is addressed to, when it is a server-bound
    /// request rather than an acknowledgement.
    pub fn message_replica_target(&self, msg: MsgId) -> Option<usize> {
        match self.messages.get(&msg)? {
            Msg::Write { replica, .. } | Msg::Read { replica, .. } => Some(*replica),
            Msg::WriteAck { .. } | Msg::ReadAck { .. } => None,
        }
    }

    /// Hash the protocol-relevant storage state; call audit and debug lines
    /// are excluded.
    pub fn hash_state<H: std::hash::Hasher>(&self, h: &mut H) {
        use std::hash::Hash;
        self.oracle_store.hash(h);
        self.replicas.hash(h);
        self.phases.hash(h);
        for m in self.messages.values() {
            m.hash(h);
        }
    }
}

/// Is the recorded call log explainable by some linearization per ledger?
/// Completed calls must all take effect within their intervals; an append
/// that never completed may or may not have taken effect; a get that never
/// completed is ignored.
pub fn check_ledger_linearizable(calls: &[LedgerCallRecord]) -> Result<(), String> {
    let mut by_ledger: BTreeMap<usize, Vec<&LedgerCallRecord>> = BTreeMap::new();
    for c in calls {
        by_ledger.entry(c.ledger).or_default().push(c);
    }
    for (ledger, mut calls) in by_ledger {
        calls.retain(|c| c.completed.is_some() || matches!(c.kind, LedgerCallKind::Append(_)));
        calls.sort_by_key(|c| c.invoked);
        let mut scheduled = vec![false; calls.len()];
        if !linearize(&calls, &mut scheduled, &mut Vec::new()) {
            return Err(format!(
                "ledger {} has no linearization explaining its {} calls",
                ledger + 1,
                calls.len()
            ));
        }
    }
    Ok(())
}

fn linearize(
    calls: &[&LedgerCallRecord],
    scheduled: &mut Vec<bool>,
    state: &mut Vec<LedgerRecord>,
) -> bool {
    let remaining_completed = calls
        .iter()
        .enumerate()
        .filter(|(k, c)| !scheduled[*k] && c.completed.is_some());
    let horizon = remaining_completed
        .clone()
        .map(|(_, c)| c.completed.unwrap())
        .min();
    if horizon.is_none() {
        // Every completed call is placed; unfinished appends may simply
        // never have taken effect.
        return true;
    }
    for k in 0..calls.len() {
        if scheduled[k] {
            continue;
        }
        let c = calls[k];
        // A call cannot linearize after another one that completed before it
        // was even invoked.
        if c.invoked > horizon.unwrap() {
            break;
        }
        match &c.kind {
            LedgerCallKind::Get => {
                let returned = c.returned.as_ref().expect("completed get has a result");
                if returned != state {
                    continue;
                }
                scheduled[k] = true;
                if linearize(calls, scheduled, state) {
                    return true;
                }
                scheduled[k] = false;
            }
            LedgerCallKind::Append(rec) => {
                scheduled[k] = true;
                state.push(rec.clone());
                if linearize(calls, scheduled, state) {
                    return true;
                }
                state.pop();
                scheduled[k] = false;
            }
        }
    }
    false
}
