//! A set of operations carrying a strict partial order: the `⟨P,≺⟩` argument
//! that validation and execution functions receive. Total orders are the
//! special case where every pair is comparable, and degenerate to sequences.

use crate::types::{OpUid, OperationRecord};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum OrderError {
    #[error("order references unknown operation {0}")]
    UnknownUid(OpUid),
    #[error("duplicate operation {0}")]
    DuplicateUid(OpUid),
    #[error("order pair ({0},{0}) is reflexive")]
    Reflexive(OpUid),
    #[error("order contains a cycle through {0}")]
    Cycle(OpUid),
    #[error("operations do not form a sequence: {0} and {1} are incomparable")]
    NotTotal(OpUid, OpUid),
}

/// Strict partially ordered operation set. The order is stored as its
/// transitive reduction; reachability queries walk the reduction on demand.
/// The reduction of a finite strict order is unique, so structural equality
/// on this representation coincides with equality of the orders.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize)]
pub struct OrderedOps {
    ops: BTreeMap<OpUid, OperationRecord>,
    reduction: BTreeSet<(OpUid, OpUid)>,
}

impl OrderedOps {
    pub fn empty() -> Self {
        OrderedOps::default()
    }

    /// Build a totally ordered set from a sequence.
    pub fn from_sequence(seq: impl IntoIterator<Item = OperationRecord>) -> Result<Self, OrderError> {
        let mut out = OrderedOps::empty();
        for op in seq {
            out.append_to_sequence(op)?;
        }
        Ok(out)
    }

    /// Build from an explicit relation. `pairs` may be any acyclic relation;
    /// the stored order is its transitive closure.
    pub fn from_pairs(
        ops: impl IntoIterator<Item = OperationRecord>,
        pairs: impl IntoIterator<Item = (OpUid, OpUid)>,
    ) -> Result<Self, OrderError> {
        let mut map = BTreeMap::new();
        for op in ops {
            let uid = op.uid;
            if map.insert(uid, op).is_some() {
                return Err(OrderError::DuplicateUid(uid));
            }
        }
        let mut raw: BTreeSet<(OpUid, OpUid)> = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(OrderError::Reflexive(a));
            }
            if !map.contains_key(&a) {
                return Err(OrderError::UnknownUid(a));
            }
            if !map.contains_key(&b) {
                return Err(OrderError::UnknownUid(b));
            }
            raw.insert((a, b));
        }
        Self::from_raw_relation(map, &raw)
    }

    fn from_raw_relation(
        map: BTreeMap<OpUid, OperationRecord>,
        raw: &BTreeSet<(OpUid, OpUid)>,
    ) -> Result<Self, OrderError> {
        let uids: Vec<OpUid> = map.keys().copied().collect();
        let index: BTreeMap<OpUid, usize> = uids.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let m = uids.len();
        let mut succ = vec![vec![false; m]; m];
        for (a, b) in raw {
            succ[index[a]][index[b]] = true;
        }
        // Transitive closure, then cycle detection via the diagonal.
        for k in 0..m {
            for i in 0..m {
                if succ[i][k] {
                    for j in 0..m {
                        if succ[k][j] {
                            succ[i][j] = true;
                        }
                    }
                }
            }
        }
        for i in 0..m {
            if succ[i][i] {
                return Err(OrderError::Cycle(uids[i]));
            }
        }
        // Reduction: drop every edge that a two-step path re-derives.
        let mut reduction = BTreeSet::new();
        for i in 0..m {
            for j in 0..m {
                if succ[i][j] {
                    let composite = (0..m).any(|k| succ[i][k] && succ[k][j]);
                    if !composite {
                        reduction.insert((uids[i], uids[j]));
                    }
                }
            }
        }
        Ok(OrderedOps {
            ops: map,
            reduction,
        })
    }

    /// Internal fast path for callers that already hold a transitively closed
    /// relation over exactly these operations.
    pub(crate) fn from_closure_unchecked(
        ops: BTreeMap<OpUid, OperationRecord>,
        closure: &BTreeSet<(OpUid, OpUid)>,
    ) -> Self {
        let mut reduction = BTreeSet::new();
        for (a, b) in closure {
            let composite = closure
                .iter()
                .any(|(x, k)| x == a && k != b && closure.contains(&(*k, *b)));
            if !composite {
                reduction.insert((*a, *b));
            }
        }
        OrderedOps { ops, reduction }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn contains(&self, uid: OpUid) -> bool {
        self.ops.contains_key(&uid)
    }

    pub fn get(&self, uid: OpUid) -> Option<&OperationRecord> {
        self.ops.get(&uid)
    }

    /// Operations in uid order (canonical iteration order).
    pub fn records(&self) -> impl Iterator<Item = &OperationRecord> {
        self.ops.values()
    }

    pub fn uids(&self) -> impl Iterator<Item = OpUid> + '_ {
        self.ops.keys().copied()
    }

    /// Reduction edges (for rendering and fingerprinting).
    pub fn reduction_edges(&self) -> impl Iterator<Item = (OpUid, OpUid)> + '_ {
        self.reduction.iter().copied()
    }

    /// Does `a ≺ b` hold? Walks the reduction.
    pub fn precedes(&self, a: OpUid, b: OpUid) -> bool {
        if a == b || !self.contains(a) || !self.contains(b) {
            return false;
        }
        let mut stack = vec![a];
        let mut seen = BTreeSet::new();
        while let Some(x) = stack.pop() {
            for (from, to) in self.reduction.range((x, OpUid::new(crate::types::ProcessId(1), 0))..) {
                if *from != x {
                    break;
                }
                if *to == b {
                    return true;
                }
                if seen.insert(*to) {
                    stack.push(*to);
                }
            }
        }
        false
    }

    /// The strict down-set `{op′ : op′ ≺ op}` of `uid`, as a sub-order. This
    /// is the prefix an operation is validated against.
    pub fn down_set(&self, uid: OpUid) -> OrderedOps {
        let below: BTreeSet<OpUid> = self
            .ops
            .keys()
            .copied()
            .filter(|u| self.precedes(*u, uid))
            .collect();
        self.restrict(&below)
    }

    /// Sub-order induced on `keep`.
    pub fn restrict(&self, keep: &BTreeSet<OpUid>) -> OrderedOps {
        let ops: BTreeMap<OpUid, OperationRecord> = self
            .ops
            .iter()
            .filter(|(u, _)| keep.contains(u))
            .map(|(u, op)| (*u, op.clone()))
            .collect();
        let mut raw = BTreeSet::new();
        let uids: Vec<OpUid> = ops.keys().copied().collect();
        for &a in &uids {
            for &b in &uids {
                if a != b && self.precedes(a, b) {
                    raw.insert((a, b));
                }
            }
        }
        Self::from_raw_relation(ops, &raw).expect("sub-order of a strict order is a strict order")
    }

    /// Append an operation after everything currently present, keeping the
    /// set a sequence. Errors if the current content is not totally ordered.
    pub fn append_to_sequence(&mut self, op: OperationRecord) -> Result<(), OrderError> {
        if self.ops.contains_key(&op.uid) {
            return Err(OrderError::DuplicateUid(op.uid));
        }
        let last = self.to_sequence()?.last().map(|r| r.uid);
        if let Some(last) = last {
            self.reduction.insert((last, op.uid));
        }
        self.ops.insert(op.uid, op);
        Ok(())
    }

    /// True iff every pair of distinct operations is comparable.
    pub fn is_total_order(&self) -> bool {
        let uids: Vec<OpUid> = self.ops.keys().copied().collect();
        for (i, &a) in uids.iter().enumerate() {
            for &b in &uids[i + 1..] {
                if !self.precedes(a, b) && !self.precedes(b, a) {
                    return false;
                }
            }
        }
        true
    }

    /// The unique linear arrangement when the order is total.
    pub fn to_sequence(&self) -> Result<Vec<&OperationRecord>, OrderError> {
        let mut remaining: BTreeSet<OpUid> = self.ops.keys().copied().collect();
        let mut out = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let minimals: Vec<OpUid> = remaining
                .iter()
                .copied()
                .filter(|&u| !remaining.iter().any(|&v| v != u && self.precedes(v, u)))
                .collect();
            match minimals.as_slice() {
                [next] => {
                    out.push(&self.ops[next]);
                    remaining.remove(next);
                }
                [a, b, ..] => return Err(OrderError::NotTotal(*a, *b)),
                [] => unreachable!("a nonempty strict order has a minimal element"),
            }
        }
        Ok(out)
    }

    /// Clone of the sequence contents; convenience for callers that mutate.
    pub fn sequence_owned(&self) -> Result<Vec<OperationRecord>, OrderError> {
        Ok(self.to_sequence()?.into_iter().cloned().collect())
    }

    /// Last operation issued by `pid` under `≺`, asserting that `pid`'s
    /// operations form a chain (they do in every certified order, because
    /// real-time order relates any two operations of one process).
    pub fn last_op_of(&self, pid: crate::types::ProcessId) -> Option<&OperationRecord> {
        let own: Vec<OpUid> = self
            .ops
            .keys()
            .copied()
            .filter(|u| u.issuer == pid)
            .collect();
        let maximal: Vec<OpUid> = own
            .iter()
            .copied()
            .filter(|&u| !own.iter().any(|&v| v != u && self.precedes(u, v)))
            .collect();
        assert!(
            maximal.len() <= 1,
            "operations of process {pid} do not form a chain"
        );
        maximal.first().map(|u| &self.ops[u])
    }

    /// Render as `op [edges]` lines for reports.
    pub fn render(&self) -> String {
        let ops: Vec<String> = self
            .ops
            .values()
            .map(|op| format!("{} {}", op.uid, op.render_call()))
            .collect();
        let edges: Vec<String> = self
            .reduction
            .iter()
            .map(|(a, b)| format!("{a}<{b}"))
            .collect();
        format!("ops{{{}}} order{{{}}}", ops.join("; "), edges.join(","))
    }
}
