//! Shared domain types: process ids, operation records, apply results, and
//! the vector timestamps that induce the ledger-derived partial order.

use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Identity of a process, 1-based: valid ids are 1..=n for a system of size n.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct ProcessId(pub u32);

impl ProcessId {
    /// Zero-based index for vectors sized by the system size.
    pub fn index(self) -> usize {
        debug_assert!(self.0 >= 1, "process ids are 1-based");
        (self.0 - 1) as usize
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unique operation identifier: issuing process plus a per-process sequence
/// number. Rendered as `issuer.seq`. Ordering is lexicographic, which gives
/// every deterministic search in this crate its canonical iteration order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct OpUid {
    pub issuer: ProcessId,
    pub seq: u32,
}

impl OpUid {
    pub fn new(issuer: ProcessId, seq: u32) -> Self {
        OpUid { issuer, seq }
    }
}

impl fmt::Display for OpUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.issuer, self.seq)
    }
}

/// Scalar argument / result values carried by operations.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub enum Value {
    Null,
    Int(i64),
    Bool(bool),
    Str(String),
    Pair(Box<Value>, Box<Value>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    pub fn pair(a: Value, b: Value) -> Value {
        Value::Pair(Box::new(a), Box::new(b))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    /// Wire rendering: bare integers, `true`/`false`, `null`, quoted strings
    /// with backslash escapes, `<a,b>` pairs.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "null"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => {
                write!(f, "\"")?;
                for c in s.chars() {
                    match c {
                        '"' => write!(f, "\\\"")?,
                        '\\' => write!(f, "\\\\")?,
                        '\n' => write!(f, "\\n")?,
                        '\r' => write!(f, "\\r")?,
                        c => write!(f, "{c}")?,
                    }
                }
                write!(f, "\"")
            }
            Value::Pair(a, b) => write!(f, "<{a},{b}>"),
        }
    }
}

/// An application operation: a tagged payload plus the identity that issued
/// it. Equality and hashing are structural so checkers can canonicalize and
/// compare operations seen through different processes' snapshots.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct OperationRecord {
    pub uid: OpUid,
    pub kind: String,
    pub args: Vec<Value>,
}

impl OperationRecord {
    pub fn new(uid: OpUid, kind: impl Into<String>, args: Vec<Value>) -> Self {
        OperationRecord {
            uid,
            kind: kind.into(),
            args,
        }
    }

    pub fn issuer(&self) -> ProcessId {
        self.uid.issuer
    }

    pub fn int_arg(&self, idx: usize) -> Option<i64> {
        self.args.get(idx).and_then(Value::as_int)
    }

    pub fn str_arg(&self, idx: usize) -> Option<&str> {
        self.args.get(idx).and_then(Value::as_str)
    }

    /// `kind(arg,arg,...)` rendering shared by traces and reports.
    pub fn render_call(&self) -> String {
        let args: Vec<String> = self.args.iter().map(|v| v.to_string()).collect();
        format!("{}({})", self.kind, args.join(","))
    }
}

/// Outcome of applying an operation: accepted with an execute result, or
/// rejected. A rejected operation leaves no trace in object state.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub enum ApplyResult {
    Ack(Value),
    Nack,
}

impl ApplyResult {
    pub fn is_ack(&self) -> bool {
        matches!(self, ApplyResult::Ack(_))
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            ApplyResult::Ack(v) => Some(v),
            ApplyResult::Nack => None,
        }
    }
}

impl fmt::Display for ApplyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApplyResult::Ack(v) => write!(f, "ACK({v})"),
            ApplyResult::Nack => write!(f, "NACK"),
        }
    }
}

/// Timestamp assigned to an operation by the ledger-based apply: the issuer
/// plus the per-ledger record counts observed before appending.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct VectorTimestamp {
    pub issuer: ProcessId,
    pub counts: Vec<u32>,
}

impl VectorTimestamp {
    pub fn new(issuer: ProcessId, counts: Vec<u32>) -> Self {
        VectorTimestamp { issuer, counts }
    }

    /// Convenience wrapper over [`ts_precedes`] for contexts where both
    /// timestamps are known to come from the same run (equal lengths).
    pub fn precedes(&self, other: &VectorTimestamp) -> bool {
        ts_precedes(self, other).expect("timestamps from one run have equal length")
    }
}

impl fmt::Display for VectorTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let counts: Vec<String> = self.counts.iter().map(|c| c.to_string()).collect();
        write!(f, "({},[{}])", self.issuer, counts.join(","))
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum TimestampError {
    #[error("timestamp length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Does `a` precede `b`? True iff `b` observed strictly more records in `a`'s
/// issuer's ledger than `a` itself did. On data from a real run this relation
/// is acyclic; on synthetic input it is just the stated comparison.
pub fn ts_precedes(a: &VectorTimestamp, b: &VectorTimestamp) -> Result<bool, TimestampError> {
    if a.counts.len() != b.counts.len() {
        return Err(TimestampError::LengthMismatch {
            left: a.counts.len(),
            right: b.counts.len(),
        });
    }
    let i = a.issuer.index();
    Ok(b.counts[i] > a.counts[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(issuer: u32, counts: Vec<u32>) -> VectorTimestamp {
        VectorTimestamp::new(ProcessId(issuer), counts)
    }

    #[test]
    fn ts_precedes_sees_new_record() {
        let a = ts(1, vec![0, 0]);
        let b = ts(2, vec![1, 0]);
        assert_eq!(ts_precedes(&a, &b), Ok(true));
    }

    #[test]
    fn ts_precedes_equal_count_is_unordered() {
        let a = ts(1, vec![0, 0]);
        let b = ts(2, vec![0, 0]);
        assert_eq!(ts_precedes(&a, &b), Ok(false));
        assert_eq!(ts_precedes(&b, &a), Ok(false));
    }

    #[test]
    fn ts_precedes_synthetic_two_cycle_evaluates_plainly() {
        // Synthetic timestamps can satisfy the comparison in both directions;
        // real runs never produce this (checked over every simulated run).
        let a = ts(1, vec![2, 5]);
        let b = ts(2, vec![3, 4]);
        assert_eq!(ts_precedes(&a, &b), Ok(true));
        assert_eq!(ts_precedes(&b, &a), Ok(true));
    }

    #[test]
    fn ts_precedes_rejects_length_mismatch() {
        let a = ts(1, vec![0, 0]);
        let b = ts(2, vec![0, 0, 0]);
        assert_eq!(
            ts_precedes(&a, &b),
            Err(TimestampError::LengthMismatch { left: 2, right: 3 })
        );
    }

    #[test]
    fn value_rendering() {
        assert_eq!(Value::Int(-3).to_string(), "-3");
        assert_eq!(Value::Null.to_string(), "null");
        assert_eq!(Value::Bool(true).to_string(), "true");
        assert_eq!(Value::str("a\"b\\c").to_string(), "\"a\\\"b\\\\c\"");
        assert_eq!(
            Value::pair(Value::Int(2), Value::str("a")).to_string(),
            "<2,\"a\">"
        );
    }

    #[test]
    fn uid_ordering_is_issuer_then_seq() {
        let a = OpUid::new(ProcessId(1), 9);
        let b = OpUid::new(ProcessId(2), 1);
        assert!(a < b);
        assert_eq!(a.to_string(), "1.9");
    }

    #[test]
    fn render_call_formats_args() {
        let op = OperationRecord::new(
            OpUid::new(ProcessId(1), 1),
            "transfer",
            vec![Value::Int(1), Value::Int(2), Value::Int(5)],
        );
        assert_eq!(op.render_call(), "transfer(1,2,5)");
    }
}
