//! The pluggable object definition (a validation predicate plus an execution
//! function over ordered prefixes) and the centralized reference apply that
//! every distributed implementation is judged against.

use crate::ordered::OrderedOps;
use crate::types::{ApplyResult, OpUid, OperationRecord, ProcessId, Value};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

pub type ValidFn = dyn Fn(&OrderedOps, &OperationRecord, ProcessId) -> bool + Send + Sync;
pub type ExecuteFn = dyn Fn(&OrderedOps, &OperationRecord, ProcessId) -> Value + Send + Sync;

/// A validated object: pure `valid`/`execute` functions over an ordered
/// prefix, plus an optional initial prefix the object starts from. Both
/// functions must be deterministic and must not depend on anything beyond
/// their arguments.
#[derive(Clone)]
pub struct ObjectSpec {
    pub name: String,
    valid: Arc<ValidFn>,
    execute: Arc<ExecuteFn>,
    pub initial_prefix: OrderedOps,
}

impl fmt::Debug for ObjectSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectSpec")
            .field("name", &self.name)
            .field("initial_prefix_len", &self.initial_prefix.len())
            .finish()
    }
}

impl ObjectSpec {
    pub fn new(
        name: impl Into<String>,
        valid: impl Fn(&OrderedOps, &OperationRecord, ProcessId) -> bool + Send + Sync + 'static,
        execute: impl Fn(&OrderedOps, &OperationRecord, ProcessId) -> Value + Send + Sync + 'static,
    ) -> Self {
        ObjectSpec {
            name: name.into(),
            valid: Arc::new(valid),
            execute: Arc::new(execute),
            initial_prefix: OrderedOps::empty(),
        }
    }

    pub fn with_initial_prefix(mut self, prefix: OrderedOps) -> Self {
        self.initial_prefix = prefix;
        self
    }

    pub fn valid(&self, p: &OrderedOps, op: &OperationRecord, i: ProcessId) -> bool {
        (self.valid)(p, op, i)
    }

    pub fn execute(&self, p: &OrderedOps, op: &OperationRecord, i: ProcessId) -> Value {
        (self.execute)(p, op, i)
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ApplyError {
    #[error("operation {0} already applied")]
    DuplicateUid(OpUid),
    #[error("caller {caller} is not the issuer of {uid}")]
    WrongCaller { caller: ProcessId, uid: OpUid },
    #[error("object state is not a sequence")]
    StateNotSequence,
}

/// One apply step of the centralized implementation: validate against the
/// current sequence, execute and append on acceptance, reject otherwise. The
/// rejected case leaves the state untouched.
pub fn apply_centralized(
    spec: &ObjectSpec,
    state: &OrderedOps,
    op: OperationRecord,
    i: ProcessId,
) -> Result<(ApplyResult, OrderedOps), ApplyError> {
    if !state.is_total_order() {
        return Err(ApplyError::StateNotSequence);
    }
    if op.issuer() != i {
        return Err(ApplyError::WrongCaller { caller: i, uid: op.uid });
    }
    if state.contains(op.uid) {
        return Err(ApplyError::DuplicateUid(op.uid));
    }
    if spec.valid(state, &op, i) {
        let res = spec.execute(state, &op, i);
        let mut next = state.clone();
        next.append_to_sequence(op).expect("uid freshness checked above");
        Ok((ApplyResult::Ack(res), next))
    } else {
        Ok((ApplyResult::Nack, state.clone()))
    }
}

/// A reliable, sequentially accessed validated object: the reference
/// implementation, also used as the black-box object in the consensus
/// reduction. Keeps a log of every interaction for test instrumentation.
#[derive(Clone, Debug)]
pub struct CentralizedObject {
    spec: ObjectSpec,
    state: OrderedOps,
    interaction_log: Vec<(ProcessId, OpUid, ApplyResult)>,
}

impl CentralizedObject {
    pub fn new(spec: ObjectSpec) -> Self {
        let state = spec.initial_prefix.clone();
        assert!(
            state.is_total_order(),
            "centralized object state must be a sequence"
        );
        CentralizedObject {
            spec,
            state,
            interaction_log: Vec::new(),
        }
    }

    pub fn spec(&self) -> &ObjectSpec {
        &self.spec
    }

    pub fn apply(&mut self, op: OperationRecord, i: ProcessId) -> Result<ApplyResult, ApplyError> {
        let uid = op.uid;
        let (res, next) = apply_centralized(&self.spec, &self.state, op, i)?;
        self.state = next;
        self.interaction_log.push((i, uid, res.clone()));
        Ok(res)
    }

    pub fn state(&self) -> &OrderedOps {
        &self.state
    }

    pub fn sequence(&self) -> Vec<&OperationRecord> {
        self.state
            .to_sequence()
            .expect("centralized state stays a sequence")
    }

    pub fn interaction_log(&self) -> &[(ProcessId, OpUid, ApplyResult)] {
        &self.interaction_log
    }

    /// Hash the applied sequence; the interaction log is excluded.
    pub fn hash_state<H: std::hash::Hasher>(&self, h: &mut H) {
        use std::hash::Hash;
        self.state.hash(h);
    }
}

/// Register accepting only positive writes: `write(v)` is valid iff `v > 0`
/// and returns nothing; `read()` is always valid and returns the last written
/// value (0 before any write).
pub fn positive_register_spec() -> ObjectSpec {
    ObjectSpec::new(
        "positive-register",
        |_p, op, i| {
            if op.issuer() != i {
                return false;
            }
            match op.kind.as_str() {
                "write" => op.int_arg(0).map(|v| v > 0).unwrap_or(false),
                "read" => true,
                _ => false,
            }
        },
        |p, op, _i| match op.kind.as_str() {
            "read" => last_write_value(p),
            _ => Value::Null,
        },
    )
}

fn last_write_value(p: &OrderedOps) -> Value {
    let writes: Vec<&OperationRecord> =
        p.records().filter(|op| op.kind == "write").collect();
    let last = writes
        .iter()
        .find(|w| !writes.iter().any(|other| p.precedes(w.uid, other.uid)));
    match last {
        Some(w) => w.args[0].clone(),
        None => Value::Int(0),
    }
}
