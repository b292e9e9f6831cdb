//! Single-writer atomic registers for the consensus protocols. Reads and
//! writes take effect at the accessing step; every register is written at
//! most once, which the bank enforces.

use crate::types::{ApplyResult, OperationRecord, ProcessId, Value};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegName {
    /// Consensus input register of a process.
    Cons(ProcessId),
    /// Proposal register of a process.
    Prop(ProcessId),
    /// Decision register of a process.
    Decision(ProcessId),
    /// Slot `c` of a process's logged-operation list.
    OpList(ProcessId, usize),
    /// Slot `c` of a process's logged-result list.
    ResList(ProcessId, usize),
}

impl std::fmt::Display for RegName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegName::Cons(p) => write!(f, "cons[{p}]"),
            RegName::Prop(p) => write!(f, "prop[{p}]"),
            RegName::Decision(p) => write!(f, "decision[{p}]"),
            RegName::OpList(p, c) => write!(f, "oplist[{p}][{c}]"),
            RegName::ResList(p, c) => write!(f, "reslist[{p}][{c}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RegContent {
    Plain(Value),
    Op(OperationRecord),
    Res(ApplyResult),
}

/// Who performs a register access: an ordinary process, or the object's own
/// service task (which alone fills result slots).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accessor {
    Process(ProcessId),
    ObjectTask,
}

#[derive(Clone, Debug, Default)]
pub struct RegisterBank {
    cells: BTreeMap<RegName, RegContent>,
    /// Audit trail: (tick, accessor, register).
    writes: Vec<(u64, Accessor, RegName)>,
}

impl RegisterBank {
    pub fn new() -> Self {
        Self::default()
    }

    fn owner_matches(name: RegName, by: Accessor) -> bool {
        match (name, by) {
            (RegName::Cons(p), Accessor::Process(q))
            | (RegName::Prop(p), Accessor::Process(q))
            | (RegName::Decision(p), Accessor::Process(q))
            | (RegName::OpList(p, _), Accessor::Process(q)) => p == q,
            (RegName::ResList(..), Accessor::ObjectTask) => true,
            _ => false,
        }
    }

    /// Write once; a second write to the same register, or a write by a
    /// non-owner, is a protocol bug.
    pub fn write(&mut self, by: Accessor, name: RegName, content: RegContent, tick: u64) {
        assert!(
            Self::owner_matches(name, by),
            "{name} is not writable by {by:?}"
        );
        let prev = self.cells.insert(name, content);
        assert!(prev.is_none(), "{name} written twice");
        self.writes.push((tick, by, name));
    }

    pub fn read(&self, name: RegName) -> Option<&RegContent> {
        self.cells.get(&name)
    }

    pub fn is_set(&self, name: RegName) -> bool {
        self.cells.contains_key(&name)
    }

    pub fn write_log(&self) -> &[(u64, Accessor, RegName)] {
        &self.writes
    }

    /// Hash the register contents; the audit trail is excluded.
    pub fn hash_state<H: std::hash::Hasher>(&self, h: &mut H) {
        use std::hash::Hash;
        self.cells.hash(h);
    }
}
