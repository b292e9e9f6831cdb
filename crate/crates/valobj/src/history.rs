//! Invocation/response histories and the real-time precedence relation
//! consistency is judged against.

use crate::types::{ApplyResult, OpUid, OperationRecord, ProcessId, Value};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum EventPayload {
    Invoke(OperationRecord),
    Respond(ApplyResult),
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct HistoryEvent {
    /// Logical time assigned by the kernel; strictly increasing across the
    /// whole trace, never wall clock.
    pub time: u64,
    pub uid: OpUid,
    pub payload: EventPayload,
}

impl HistoryEvent {
    pub fn issuer(&self) -> ProcessId {
        self.uid.issuer
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("event times not strictly increasing at index {0}")]
    TimesNotIncreasing(usize),
    #[error("duplicate INVOKE for {0}")]
    DuplicateInvoke(OpUid),
    #[error("duplicate RESPOND for {0}")]
    DuplicateRespond(OpUid),
    #[error("RESPOND without INVOKE for {0}")]
    RespondWithoutInvoke(OpUid),
    #[error("process {0} invoked {1} while a previous call was outstanding")]
    OverlappingCalls(ProcessId, OpUid),
    #[error("uid {0} not present in the trace")]
    UnknownUid(OpUid),
    #[error("completion map has no entry for dangling operation {0}")]
    IncompleteMap(OpUid),
    #[error("INVOKE payload for {uid} declares issuer {declared}")]
    IssuerMismatch { uid: OpUid, declared: ProcessId },
}

/// How to turn a partial history into a complete one.
#[derive(Clone, Debug)]
pub enum CompletionPolicy {
    /// Remove invocations that never got a response.
    Drop,
    /// Append responses for dangling invocations, drawn from the map.
    CompleteWith(BTreeMap<OpUid, ApplyResult>),
}

/// A well-formed timestamped event list. Construction validates:
/// strictly increasing times, at most one INVOKE/RESPOND per uid, INVOKE
/// before RESPOND, and per-process sequentiality (a process never invokes
/// while its previous call is outstanding; a dangling call is final).
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize)]
pub struct HistoryTrace {
    events: Vec<HistoryEvent>,
}

impl HistoryTrace {
    pub fn new(events: Vec<HistoryEvent>) -> Result<Self, HistoryError> {
        let mut last_time: Option<u64> = None;
        let mut invoked: BTreeMap<OpUid, u64> = BTreeMap::new();
        let mut responded: BTreeMap<OpUid, u64> = BTreeMap::new();
        let mut outstanding: BTreeMap<ProcessId, OpUid> = BTreeMap::new();
        for (idx, ev) in events.iter().enumerate() {
            if let Some(t) = last_time {
                if ev.time <= t {
                    return Err(HistoryError::TimesNotIncreasing(idx));
                }
            }
            last_time = Some(ev.time);
            match &ev.payload {
                EventPayload::Invoke(op) => {
                    if op.uid != ev.uid {
                        return Err(HistoryError::IssuerMismatch {
                            uid: ev.uid,
                            declared: op.issuer(),
                        });
                    }
                    if invoked.insert(ev.uid, ev.time).is_some() {
                        return Err(HistoryError::DuplicateInvoke(ev.uid));
                    }
                    if let Some(prev) = outstanding.get(&ev.issuer()) {
                        return Err(HistoryError::OverlappingCalls(ev.issuer(), *prev));
                    }
                    outstanding.insert(ev.issuer(), ev.uid);
                }
                EventPayload::Respond(_) => {
                    if !invoked.contains_key(&ev.uid) {
                        return Err(HistoryError::RespondWithoutInvoke(ev.uid));
                    }
                    if responded.insert(ev.uid, ev.time).is_some() {
                        return Err(HistoryError::DuplicateRespond(ev.uid));
                    }
                    if outstanding.get(&ev.issuer()) == Some(&ev.uid) {
                        outstanding.remove(&ev.issuer());
                    }
                }
            }
        }
        Ok(HistoryTrace { events })
    }

    pub fn events(&self) -> &[HistoryEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn invoke_time(&self, uid: OpUid) -> Option<u64> {
        self.events.iter().find_map(|ev| match &ev.payload {
            EventPayload::Invoke(_) if ev.uid == uid => Some(ev.time),
            _ => None,
        })
    }

    pub fn respond_time(&self, uid: OpUid) -> Option<u64> {
        self.events.iter().find_map(|ev| match &ev.payload {
            EventPayload::Respond(_) if ev.uid == uid => Some(ev.time),
            _ => None,
        })
    }

    pub fn operation(&self, uid: OpUid) -> Option<&OperationRecord> {
        self.events.iter().find_map(|ev| match &ev.payload {
            EventPayload::Invoke(op) if ev.uid == uid => Some(op),
            _ => None,
        })
    }

    pub fn result(&self, uid: OpUid) -> Option<&ApplyResult> {
        self.events.iter().find_map(|ev| match &ev.payload {
            EventPayload::Respond(r) if ev.uid == uid => Some(r),
            _ => None,
        })
    }

    /// Uids that were invoked but never received a response.
    pub fn dangling(&self) -> Vec<OpUid> {
        self.events
            .iter()
            .filter_map(|ev| match &ev.payload {
                EventPayload::Invoke(_) if self.respond_time(ev.uid).is_none() => Some(ev.uid),
                _ => None,
            })
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.dangling().is_empty()
    }

    /// Convert a partial history into a complete one.
    pub fn complete(&self, policy: &CompletionPolicy) -> Result<HistoryTrace, HistoryError> {
        let dangling = self.dangling();
        if dangling.is_empty() {
            return Ok(self.clone());
        }
        match policy {
            CompletionPolicy::Drop => {
                let events = self
                    .events
                    .iter()
                    .filter(|ev| !dangling.contains(&ev.uid))
                    .cloned()
                    .collect();
                HistoryTrace::new(events)
            }
            CompletionPolicy::CompleteWith(map) => {
                let mut events = self.events.clone();
                let mut t = events.last().map(|ev| ev.time).unwrap_or(0);
                // Dangling uids in canonical uid order, appended after the end.
                let mut pending = dangling.clone();
                pending.sort();
                for uid in pending {
                    let res = map.get(&uid).ok_or(HistoryError::IncompleteMap(uid))?;
                    t += 1;
                    events.push(HistoryEvent {
                        time: t,
                        uid,
                        payload: EventPayload::Respond(res.clone()),
                    });
                }
                HistoryTrace::new(events)
            }
        }
    }

    /// Real-time precedence: `u1`'s response happened before `u2`'s
    /// invocation. Irreflexive by construction (a call cannot respond before
    /// it is invoked).
    pub fn real_time_precedes(&self, u1: OpUid, u2: OpUid) -> Result<bool, HistoryError> {
        let r1 = match self.respond_time(u1) {
            Some(t) => t,
            None => {
                self.invoke_time(u1).ok_or(HistoryError::UnknownUid(u1))?;
                return Ok(false); // pending call precedes nothing
            }
        };
        let i2 = self.invoke_time(u2).ok_or(HistoryError::UnknownUid(u2))?;
        Ok(r1 < i2)
    }

    /// Completed operations that were accepted, with their returned values,
    /// in response order. This is the set consistency is judged over:
    /// rejected operations leave no trace in object state.
    pub fn completed_acked(&self) -> Vec<CompletedOp> {
        let mut out = Vec::new();
        for ev in &self.events {
            if let EventPayload::Respond(ApplyResult::Ack(v)) = &ev.payload {
                let op = self
                    .operation(ev.uid)
                    .expect("well-formedness: response implies invocation")
                    .clone();
                out.push(CompletedOp {
                    op,
                    value: v.clone(),
                    invoke_time: self.invoke_time(ev.uid).unwrap(),
                    respond_time: ev.time,
                });
            }
        }
        out
    }
}

/// An accepted, completed operation with its observed value and interval.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct CompletedOp {
    pub op: OperationRecord,
    pub value: Value,
    pub invoke_time: u64,
    pub respond_time: u64,
}
