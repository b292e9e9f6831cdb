//! Brute-force conformance checkers.
//!
//! `check_regular` asks whether a completed trace admits a strict partial
//! order over its accepted operations that contains the real-time order and
//! under which every operation was valid against its down-set and returned
//! the executed value. `check_total` asks the same for a total order.
//! `check_persistent_validity` / `check_persistent_execution` enumerate
//! reachable sequences over a finite operation universe and look for a pair
//! of concurrent operations that invalidate or re-value each other.

use crate::history::{CompletedOp, HistoryError, HistoryTrace};
use crate::object::ObjectSpec;
use crate::ordered::OrderedOps;
use crate::types::{OpUid, OperationRecord, Value};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Hard cap on checkable operations; sets fit in a `u64` bitmask.
const HARD_OP_CAP: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckBudget {
    /// Maximum number of accepted operations in the trace.
    pub max_ops: usize,
    /// Maximum number of (operation, prefix) evaluations during the search.
    pub max_nodes: u64,
}

impl Default for CheckBudget {
    fn default() -> Self {
        CheckBudget {
            max_ops: 10,
            max_nodes: 5_000_000,
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error("trace has incomplete calls; complete it before checking")]
    Incomplete,
    #[error("{ops} accepted operations exceed the checking budget of {max}")]
    TooManyOps { ops: usize, max: usize },
    #[error("search exceeded the node budget of {0}")]
    NodeBudget(u64),
    #[error("bad certificate: {0}")]
    Certificate(String),
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// One operation that could not be placed, diagnosed against the prefix it
/// was tried on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockedOp {
    pub uid: OpUid,
    pub call: String,
    pub valid_on_prefix: bool,
    /// The value execution would have produced, when the operation was valid.
    pub executed: Option<Value>,
    pub recorded: Value,
    /// Set when the operation was rejected for contradicting real-time order
    /// rather than for validity or value.
    pub rt_conflict: Option<OpUid>,
}

/// The deepest dead end the search reached: no remaining operation could be
/// appended to this prefix in any admissible way.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FailWitness {
    /// Uids already placed, in placement order.
    pub prefix: Vec<OpUid>,
    pub blocked: Vec<BlockedOp>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass { certificate: OrderedOps },
    Fail { witness: FailWitness },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub verdict: Verdict,
    /// Number of accepted operations that were checked.
    pub ops: usize,
    /// (operation, prefix) evaluations performed.
    pub nodes: u64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        matches!(self.verdict, Verdict::Pass { .. })
    }

    pub fn certificate(&self) -> Option<&OrderedOps> {
        match &self.verdict {
            Verdict::Pass { certificate } => Some(certificate),
            Verdict::Fail { .. } => None,
        }
    }

    pub fn witness(&self) -> Option<&FailWitness> {
        match &self.verdict {
            Verdict::Fail { witness } => Some(witness),
            Verdict::Pass { .. } => None,
        }
    }
}

/// Does some strict partial order over the accepted operations explain the
/// trace? The order must contain real-time precedence, and every operation
/// must be valid against its down-set and return the executed value.
pub fn check_regular(
    spec: &ObjectSpec,
    trace: &HistoryTrace,
    budget: &CheckBudget,
) -> Result<CheckReport, CheckError> {
    run_search(spec, trace, budget, false)
}

/// Same question restricted to total orders: some sequence of the accepted
/// operations, consistent with real time, validates and explains every value.
pub fn check_total(
    spec: &ObjectSpec,
    trace: &HistoryTrace,
    budget: &CheckBudget,
) -> Result<CheckReport, CheckError> {
    run_search(spec, trace, budget, true)
}

fn run_search(
    spec: &ObjectSpec,
    trace: &HistoryTrace,
    budget: &CheckBudget,
    total: bool,
) -> Result<CheckReport, CheckError> {
    if !trace.is_complete() {
        return Err(CheckError::Incomplete);
    }
    let ops = trace.completed_acked();
    let cap = budget.max_ops.min(HARD_OP_CAP);
    if ops.len() > cap {
        return Err(CheckError::TooManyOps {
            ops: ops.len(),
            max: cap,
        });
    }
    let n = ops.len();
    let mut rt_pred = vec![0u64; n];
    for k in 0..n {
        for m in 0..n {
            if ops[m].respond_time < ops[k].invoke_time {
                rt_pred[k] |= 1 << m;
            }
        }
    }
    let mut search = Search {
        spec,
        ops,
        rt_pred,
        total,
        max_nodes: budget.max_nodes,
        nodes: 0,
        inserted: Vec::new(),
        down: vec![0; n],
        used: 0,
        best: None,
    };
    let certificate = search.dfs()?;
    let verdict = match certificate {
        Some(certificate) => Verdict::Pass { certificate },
        None => Verdict::Fail {
            witness: search
                .best
                .expect("a failed search visits at least one dead end"),
        },
    };
    Ok(CheckReport {
        verdict,
        ops: n,
        nodes: search.nodes,
    })
}

struct Search<'a> {
    spec: &'a ObjectSpec,
    ops: Vec<CompletedOp>,
    rt_pred: Vec<u64>,
    total: bool,
    max_nodes: u64,
    nodes: u64,
    inserted: Vec<usize>,
    /// Down-set mask of each placed operation.
    down: Vec<u64>,
    used: u64,
    /// Deepest dead end seen so far: (depth, witness).
    best: Option<FailWitness>,
}

fn bits(mut m: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let k = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(k)
        }
    })
}

impl Search<'_> {
    /// The order on a down-closed subset of placed operations.
    fn order_of_mask(&self, mask: u64) -> OrderedOps {
        let mut map = BTreeMap::new();
        let mut closure = BTreeSet::new();
        for k in bits(mask) {
            map.insert(self.ops[k].op.uid, self.ops[k].op.clone());
            for a in bits(self.down[k] & mask) {
                closure.insert((self.ops[a].op.uid, self.ops[k].op.uid));
            }
        }
        OrderedOps::from_closure_unchecked(map, &closure)
    }

    fn admit(&mut self, k: usize, ps: u64) -> Result<bool, CheckError> {
        self.nodes += 1;
        if self.nodes > self.max_nodes {
            return Err(CheckError::NodeBudget(self.max_nodes));
        }
        let prefix = self.order_of_mask(ps);
        let rec = &self.ops[k];
        let i = rec.op.issuer();
        Ok(self.spec.valid(&prefix, &rec.op, i)
            && self.spec.execute(&prefix, &rec.op, i) == rec.value)
    }

    /// Try every placement for the next operation; placements are tried in
    /// response order, candidate down-sets smallest first.
    fn dfs(&mut self) -> Result<Option<OrderedOps>, CheckError> {
        if self.inserted.len() == self.ops.len() {
            return Ok(Some(self.order_of_mask(self.used)));
        }
        let mut dead_end = true;
        for k in 0..self.ops.len() {
            if self.used & (1 << k) != 0 || self.rt_pred[k] & !self.used != 0 {
                continue;
            }
            // Down-closure of the real-time predecessors: every admissible
            // down-set contains it.
            let mut base = self.rt_pred[k];
            for a in bits(self.rt_pred[k]) {
                base |= self.down[a];
            }
            let free = if self.total { 0 } else { self.used & !base };
            let forced = if self.total { self.used } else { base };
            let mut s = 0u64;
            loop {
                let ps = forced | s;
                if self.admit(k, ps)? {
                    dead_end = false;
                    self.down[k] = ps;
                    self.used |= 1 << k;
                    self.inserted.push(k);
                    let found = self.dfs()?;
                    self.inserted.pop();
                    self.used &= !(1 << k);
                    if found.is_some() {
                        return Ok(found);
                    }
                }
                if s == free {
                    break;
                }
                s = s.wrapping_sub(free) & free;
            }
        }
        if dead_end {
            self.record_dead_end();
        }
        Ok(None)
    }

    fn record_dead_end(&mut self) {
        let depth = self.inserted.len();
        if let Some(best) = &self.best {
            if best.prefix.len() >= depth {
                return;
            }
        }
        let full = self.order_of_mask(self.used);
        let mut blocked = Vec::new();
        for k in 0..self.ops.len() {
            if self.used & (1 << k) != 0 || self.rt_pred[k] & !self.used != 0 {
                continue;
            }
            let rec = &self.ops[k];
            let i = rec.op.issuer();
            let valid = self.spec.valid(&full, &rec.op, i);
            let executed = valid.then(|| self.spec.execute(&full, &rec.op, i));
            blocked.push(BlockedOp {
                uid: rec.op.uid,
                call: rec.op.render_call(),
                valid_on_prefix: valid,
                executed,
                recorded: rec.value.clone(),
                rt_conflict: None,
            });
        }
        self.best = Some(FailWitness {
            prefix: self.inserted.iter().map(|&k| self.ops[k].op.uid).collect(),
            blocked,
        });
    }
}

/// Verify a specific total order instead of searching for one: the sequence
/// must enumerate exactly the accepted operations, respect real time, and
/// validate and explain each value against its prefix.
pub fn check_total_with_certificate(
    spec: &ObjectSpec,
    trace: &HistoryTrace,
    order: &[OpUid],
) -> Result<CheckReport, CheckError> {
    if !trace.is_complete() {
        return Err(CheckError::Incomplete);
    }
    let ops = trace.completed_acked();
    let by_uid: BTreeMap<OpUid, &CompletedOp> = ops.iter().map(|c| (c.op.uid, c)).collect();
    if order.len() != ops.len() {
        return Err(CheckError::Certificate(format!(
            "certificate has {} operations, trace accepted {}",
            order.len(),
            ops.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for uid in order {
        if !by_uid.contains_key(uid) {
            return Err(CheckError::Certificate(format!(
                "certificate names {uid}, which the trace did not accept"
            )));
        }
        if !seen.insert(*uid) {
            return Err(CheckError::Certificate(format!(
                "certificate repeats {uid}"
            )));
        }
    }
    let mut prefix = OrderedOps::empty();
    let mut nodes = 0u64;
    for (idx, uid) in order.iter().enumerate() {
        let rec = by_uid[uid];
        nodes += 1;
        // A later real-time operation placed before an earlier one breaks
        // the certificate regardless of validity.
        let rt_conflict = order[idx + 1..]
            .iter()
            .find(|later| by_uid[*later].respond_time < rec.invoke_time)
            .copied();
        let i = rec.op.issuer();
        let valid = spec.valid(&prefix, &rec.op, i);
        let executed = valid.then(|| spec.execute(&prefix, &rec.op, i));
        if rt_conflict.is_some() || !valid || executed.as_ref() != Some(&rec.value) {
            let witness = FailWitness {
                prefix: order[..idx].to_vec(),
                blocked: vec![BlockedOp {
                    uid: *uid,
                    call: rec.op.render_call(),
                    valid_on_prefix: valid,
                    executed,
                    recorded: rec.value.clone(),
                    rt_conflict,
                }],
            };
            return Ok(CheckReport {
                verdict: Verdict::Fail { witness },
                ops: ops.len(),
                nodes,
            });
        }
        prefix
            .append_to_sequence(rec.op.clone())
            .expect("certificate uids are distinct");
    }
    Ok(CheckReport {
        verdict: Verdict::Pass {
            certificate: prefix,
        },
        ops: ops.len(),
        nodes,
    })
}

/// A reachable sequence plus two concurrently-valid operations of distinct
/// issuers where appending one invalidates the other. `mutual` says the
/// invalidation goes both ways.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReductionWitness {
    pub prefix: Vec<OperationRecord>,
    pub op_i: OperationRecord,
    pub op_j: OperationRecord,
    pub mutual: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum PropertyWitness {
    Invalidation(ReductionWitness),
    /// Appending `other` changed what `op` would return.
    Divergence {
        prefix: Vec<OperationRecord>,
        op: OperationRecord,
        other: OperationRecord,
        before: Value,
        after: Value,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PropertyReport {
    pub holds: bool,
    pub witness: Option<PropertyWitness>,
    /// Reachable sequences visited during the scan.
    pub sequences: u64,
}

/// Can one process's valid operation be invalidated by another process's
/// concurrent valid operation? Scans every reachable sequence over the
/// universe up to `depth` appended operations.
pub fn check_persistent_validity(
    spec: &ObjectSpec,
    universe: &[OperationRecord],
    depth: usize,
) -> PropertyReport {
    let mut scan = Scan::new(spec, universe, depth);
    let witness = scan.run(Mode::Invalidation { oneway_only: false });
    PropertyReport {
        holds: witness.is_none(),
        witness,
        sequences: scan.sequences,
    }
}

/// Persistent validity plus stable return values: a concurrent valid
/// operation must not change what another one returns.
pub fn check_persistent_execution(
    spec: &ObjectSpec,
    universe: &[OperationRecord],
    depth: usize,
) -> PropertyReport {
    let mut scan = Scan::new(spec, universe, depth);
    if let Some(witness) = scan.run(Mode::Invalidation { oneway_only: false }) {
        return PropertyReport {
            holds: false,
            witness: Some(witness),
            sequences: scan.sequences,
        };
    }
    let mut scan2 = Scan::new(spec, universe, depth);
    let witness = scan2.run(Mode::Divergence);
    PropertyReport {
        holds: witness.is_none(),
        witness,
        sequences: scan.sequences + scan2.sequences,
    }
}

/// First invalidation witness in scan order, if any.
pub fn find_reduction_witness(
    spec: &ObjectSpec,
    universe: &[OperationRecord],
    depth: usize,
) -> Option<ReductionWitness> {
    let mut scan = Scan::new(spec, universe, depth);
    match scan.run(Mode::Invalidation { oneway_only: false }) {
        Some(PropertyWitness::Invalidation(w)) => Some(w),
        _ => None,
    }
}

/// First witness whose invalidation only goes one way: appending `op_j`
/// invalidates `op_i` while appending `op_i` leaves `op_j` valid.
pub fn find_oneway_reduction_witness(
    spec: &ObjectSpec,
    universe: &[OperationRecord],
    depth: usize,
) -> Option<ReductionWitness> {
    let mut scan = Scan::new(spec, universe, depth);
    match scan.run(Mode::Invalidation { oneway_only: true }) {
        Some(PropertyWitness::Invalidation(w)) => Some(w),
        _ => None,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Invalidation { oneway_only: bool },
    Divergence,
}

struct Scan<'a> {
    spec: &'a ObjectSpec,
    /// Universe in uid order.
    universe: Vec<&'a OperationRecord>,
    depth: usize,
    sequences: u64,
    chosen: Vec<usize>,
    used: Vec<bool>,
}

impl<'a> Scan<'a> {
    fn new(spec: &'a ObjectSpec, universe: &'a [OperationRecord], depth: usize) -> Self {
        let mut sorted: Vec<&OperationRecord> = universe.iter().collect();
        sorted.sort_by_key(|o| o.uid);
        let distinct: BTreeSet<OpUid> = sorted.iter().map(|o| o.uid).collect();
        assert_eq!(
            distinct.len(),
            sorted.len(),
            "universe operations must carry distinct uids"
        );
        let used = vec![false; sorted.len()];
        Scan {
            spec,
            universe: sorted,
            depth,
            sequences: 0,
            chosen: Vec::new(),
            used,
        }
    }

    fn run(&mut self, mode: Mode) -> Option<PropertyWitness> {
        self.dfs(&mode)
    }

    fn current_sequence(&self) -> Vec<OperationRecord> {
        self.chosen
            .iter()
            .map(|&k| self.universe[k].clone())
            .collect()
    }

    fn dfs(&mut self, mode: &Mode) -> Option<PropertyWitness> {
        self.sequences += 1;
        let base = OrderedOps::from_sequence(self.current_sequence())
            .expect("scan sequences use distinct uids");
        let valid_now: Vec<bool> = self
            .universe
            .iter()
            .enumerate()
            .map(|(k, op)| !self.used[k] && self.spec.valid(&base, op, op.issuer()))
            .collect();
        if let Some(w) = self.scan_pairs(&base, &valid_now, mode) {
            return Some(w);
        }
        if self.chosen.len() < self.depth {
            for k in 0..self.universe.len() {
                if !valid_now[k] {
                    continue;
                }
                self.used[k] = true;
                self.chosen.push(k);
                let w = self.dfs(mode);
                self.chosen.pop();
                self.used[k] = false;
                if w.is_some() {
                    return w;
                }
            }
        }
        None
    }

    fn scan_pairs(
        &self,
        base: &OrderedOps,
        valid_now: &[bool],
        mode: &Mode,
    ) -> Option<PropertyWitness> {
        for ki in 0..self.universe.len() {
            if !valid_now[ki] {
                continue;
            }
            let op_i = self.universe[ki];
            for kj in 0..self.universe.len() {
                if kj == ki || !valid_now[kj] {
                    continue;
                }
                let op_j = self.universe[kj];
                if op_i.issuer() == op_j.issuer() {
                    continue;
                }
                let mut ext_j = base.clone();
                ext_j
                    .append_to_sequence(op_j.clone())
                    .expect("universe uids are distinct");
                match mode {
                    Mode::Invalidation { oneway_only } => {
                        if self.spec.valid(&ext_j, op_i, op_i.issuer()) {
                            continue;
                        }
                        let mut ext_i = base.clone();
                        ext_i
                            .append_to_sequence(op_i.clone())
                            .expect("universe uids are distinct");
                        let mutual = !self.spec.valid(&ext_i, op_j, op_j.issuer());
                        if *oneway_only && mutual {
                            continue;
                        }
                        return Some(PropertyWitness::Invalidation(ReductionWitness {
                            prefix: self.current_sequence(),
                            op_i: op_i.clone(),
                            op_j: op_j.clone(),
                            mutual,
                        }));
                    }
                    Mode::Divergence => {
                        if !self.spec.valid(&ext_j, op_i, op_i.issuer()) {
                            // Persistent validity already failed; the
                            // invalidation scan reports that case.
                            continue;
                        }
                        let before = self.spec.execute(base, op_i, op_i.issuer());
                        let after = self.spec.execute(&ext_j, op_i, op_i.issuer());
                        if before != after {
                            return Some(PropertyWitness::Divergence {
                                prefix: self.current_sequence(),
                                op: op_i.clone(),
                                other: op_j.clone(),
                                before,
                                after,
                            });
                        }
                    }
                }
            }
        }
        None
    }
}
