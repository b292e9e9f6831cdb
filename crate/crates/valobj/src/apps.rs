//! The example applications: punching clock, token transfer, Do-All task
//! sharing, and versioned read/write storage. Each is a pure pair of
//! validity/execution functions over an ordered prefix.

use crate::object::{positive_register_spec, ObjectSpec};
use crate::ordered::OrderedOps;
use crate::types::{OpUid, OperationRecord, ProcessId, Value};
use thiserror::Error;

/// Punching clock: each process alternates `punch-in(t,i)` / `punch-out(i)`,
/// starting with a punch-in; punch-out returns the hours elapsed since the
/// unmatched punch-in. Validity and execution depend only on the issuer's own
/// operations, so no other process can disturb them.
pub fn punching_spec() -> ObjectSpec {
    ObjectSpec::new(
        "punching",
        |p, op, i| {
            if op.issuer() != i {
                return false;
            }
            let lop = p.last_op_of(i);
            match op.kind.as_str() {
                "punch-out" => {
                    op.int_arg(0) == Some(i.0 as i64)
                        && matches!(lop, Some(prev) if prev.kind == "punch-in")
                }
                "punch-in" => {
                    op.int_arg(1) == Some(i.0 as i64)
                        && match lop {
                            None => true,
                            Some(prev) => prev.kind == "punch-out",
                        }
                }
                _ => false,
            }
        },
        |p, op, i| match op.kind.as_str() {
            "punch-out" => {
                let prev = p
                    .last_op_of(i)
                    .expect("a valid punch-out follows a punch-in");
                assert_eq!(prev.kind, "punch-in", "punch-out without open interval");
                let started = prev.int_arg(0).expect("punch-in carries its time");
                let now = op
                    .int_arg(1)
                    .expect("punch-out carries the current time as its second argument");
                Value::Int(now - started)
            }
            _ => Value::Null,
        },
    )
}

/// Token accounts: `transfer(i,k,x)` moves `x > 0` tokens from the issuer's
/// account `i` to `k` if the issuer's balance over the observed prefix covers
/// it; `read(k)` reports account `k`'s balance. The issuer-identity check
/// stands in for a signature: an operation naming a source account other
/// than its issuer is rejected.
pub fn crypto_spec(ibalance: i64) -> ObjectSpec {
    ObjectSpec::new(
        "crypto",
        move |p, op, i| {
            if op.issuer() != i {
                return false;
            }
            match op.kind.as_str() {
                "read" => op.args.len() == 1 && op.int_arg(0).is_some(),
                "transfer" => match (op.int_arg(0), op.int_arg(1), op.int_arg(2)) {
                    (Some(from), Some(_to), Some(x)) => {
                        from == i.0 as i64 && x > 0 && balance(p, from, ibalance) >= x
                    }
                    _ => false,
                },
                _ => false,
            }
        },
        move |p, op, _i| match op.kind.as_str() {
            "read" => {
                let k = op.int_arg(0).expect("a valid read names an account");
                Value::Int(balance(p, k, ibalance))
            }
            _ => Value::Null,
        },
    )
}

/// Account balance over a prefix: initial tokens plus incoming minus
/// outgoing transfer amounts.
fn balance(p: &OrderedOps, account: i64, ibalance: i64) -> i64 {
    let mut b = ibalance;
    for op in p.records() {
        if op.kind == "transfer" {
            let from = op.int_arg(0).unwrap_or(i64::MIN);
            let to = op.int_arg(1).unwrap_or(i64::MIN);
            let x = op.int_arg(2).unwrap_or(0);
            if to == account {
                b += x;
            }
            if from == account {
                b -= x;
            }
        }
    }
    b
}

/// Do-All task sharing: `do(t,i)` claims job `t` if at most `T` distinct
/// processes already performed it in the observed prefix (the count test is
/// implemented exactly as stated, which admits `T+1` performers in a
/// sequence); `completed(t,i)` asks whether the issuer already performed `t`.
pub fn doall_spec(t_threshold: usize) -> ObjectSpec {
    ObjectSpec::new(
        "doall",
        move |p, op, i| {
            if op.issuer() != i {
                return false;
            }
            match op.kind.as_str() {
                "completed" => {
                    op.str_arg(0).is_some() && op.int_arg(1) == Some(i.0 as i64)
                }
                "do" => match (op.str_arg(0), op.int_arg(1)) {
                    (Some(job), Some(k)) => {
                        k == i.0 as i64 && performers(p, job).len() <= t_threshold
                    }
                    _ => false,
                },
                _ => false,
            }
        },
        |p, op, _i| match op.kind.as_str() {
            "completed" => {
                let job = op.str_arg(0).expect("a valid completed names a job");
                let k = op.int_arg(1).expect("a valid completed names its issuer");
                let done = p
                    .records()
                    .any(|r| r.kind == "do" && r.str_arg(0) == Some(job) && r.int_arg(1) == Some(k));
                Value::Bool(done)
            }
            _ => Value::Null,
        },
    )
}

/// Distinct processes that performed `job` in the prefix.
fn performers(p: &OrderedOps, job: &str) -> std::collections::BTreeSet<i64> {
    p.records()
        .filter(|r| r.kind == "do" && r.str_arg(0) == Some(job))
        .filter_map(|r| r.int_arg(1))
        .collect()
}

/// Versioned read/write storage: `write(<ver,v>,x)` succeeds only with a
/// version strictly above every version already written to `x` (the first
/// write trivially qualifies); `read(x)` returns the highest-versioned pair,
/// or null before any write.
pub fn versioned_spec() -> ObjectSpec {
    ObjectSpec::new(
        "versioned",
        |p, op, i| {
            if op.issuer() != i {
                return false;
            }
            match op.kind.as_str() {
                "read" => op.args.len() == 1 && op.str_arg(0).is_some(),
                "write" => match (op.args.first(), op.str_arg(1)) {
                    (Some(Value::Pair(ver, _v)), Some(x)) => match ver.as_int() {
                        Some(ver) => max_version(p, x).map(|m| ver > m).unwrap_or(true),
                        None => false,
                    },
                    _ => false,
                },
                _ => false,
            }
        },
        |p, op, _i| match op.kind.as_str() {
            "read" => {
                let x = op.str_arg(0).expect("a valid read names an object");
                match top_write(p, x) {
                    Some((ver, v)) => Value::pair(Value::Int(ver), v),
                    None => Value::Null,
                }
            }
            _ => Value::Null,
        },
    )
}

fn writes_to<'a>(
    p: &'a OrderedOps,
    x: &'a str,
) -> impl Iterator<Item = (OpUid, i64, Value)> + 'a {
    p.records().filter_map(move |r| {
        if r.kind != "write" || r.str_arg(1) != Some(x) {
            return None;
        }
        match r.args.first() {
            Some(Value::Pair(ver, v)) => ver.as_int().map(|ver| (r.uid, ver, (**v).clone())),
            _ => None,
        }
    })
}

fn max_version(p: &OrderedOps, x: &str) -> Option<i64> {
    writes_to(p, x).map(|(_, ver, _)| ver).max()
}

/// The highest-versioned write to `x`; concurrent same-version writes (which
/// only arise under the relaxed object) are tie-broken by smallest uid so
/// reads stay deterministic.
fn top_write(p: &OrderedOps, x: &str) -> Option<(i64, Value)> {
    let max = max_version(p, x)?;
    writes_to(p, x)
        .filter(|(_, ver, _)| *ver == max)
        .min_by_key(|(uid, _, _)| *uid)
        .map(|(_, ver, v)| (ver, v))
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SpecParseError {
    #[error("unknown object `{0}`")]
    UnknownSpec(String),
    #[error("bad parameter `{0}` for object `{1}`")]
    BadParam(String, String),
}

/// A registered application: the spec plus enough parameter knowledge to
/// build operation universes for the property checkers.
#[derive(Clone, Debug)]
pub struct SpecEntry {
    pub spec: ObjectSpec,
    pub app: AppKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AppKind {
    Punching,
    Crypto { ibalance: i64, accounts: u32 },
    DoAll { t: usize, jobs: Vec<String> },
    Versioned,
    PositiveRegister,
}

/// Resolve a registry name like `crypto:n=3,ibalance=10`, `doall:T=3,J=a..e`,
/// `punching`, or `versioned`.
pub fn spec_by_name(name: &str) -> Result<SpecEntry, SpecParseError> {
    let (base, params) = match name.split_once(':') {
        Some((b, p)) => (b, Some(p)),
        None => (name, None),
    };
    let mut kv: Vec<(String, String)> = Vec::new();
    if let Some(params) = params {
        for part in params.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                SpecParseError::BadParam(part.to_string(), base.to_string())
            })?;
            kv.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let bad = |p: &str| SpecParseError::BadParam(p.to_string(), base.to_string());
    match base {
        "punching" => {
            if !kv.is_empty() {
                return Err(bad(&kv[0].0));
            }
            Ok(SpecEntry {
                spec: punching_spec(),
                app: AppKind::Punching,
            })
        }
        "versioned" => {
            if !kv.is_empty() {
                return Err(bad(&kv[0].0));
            }
            Ok(SpecEntry {
                spec: versioned_spec(),
                app: AppKind::Versioned,
            })
        }
        "positive-register" => {
            if !kv.is_empty() {
                return Err(bad(&kv[0].0));
            }
            Ok(SpecEntry {
                spec: positive_register_spec(),
                app: AppKind::PositiveRegister,
            })
        }
        "crypto" => {
            let mut ibalance = 10i64;
            let mut accounts = 3u32;
            for (k, v) in &kv {
                match k.as_str() {
                    "ibalance" => ibalance = v.parse().map_err(|_| bad(v))?,
                    "n" => accounts = v.parse().map_err(|_| bad(v))?,
                    _ => return Err(bad(k)),
                }
            }
            if ibalance < 0 {
                return Err(bad("ibalance"));
            }
            Ok(SpecEntry {
                spec: crypto_spec(ibalance),
                app: AppKind::Crypto { ibalance, accounts },
            })
        }
        "doall" => {
            let mut t = 3usize;
            let mut jobs = vec!["x".to_string()];
            for (k, v) in &kv {
                match k.as_str() {
                    "T" => {
                        t = v.parse().map_err(|_| bad(v))?;
                        if t == 0 {
                            return Err(bad("T"));
                        }
                    }
                    "J" => jobs = parse_job_set(v).ok_or_else(|| bad(v))?,
                    _ => return Err(bad(k)),
                }
            }
            Ok(SpecEntry {
                spec: doall_spec(t),
                app: AppKind::DoAll { t, jobs },
            })
        }
        other => Err(SpecParseError::UnknownSpec(other.to_string())),
    }
}

/// `a..e` expands to the inclusive letter range; a single word names one job.
fn parse_job_set(v: &str) -> Option<Vec<String>> {
    if let Some((lo, hi)) = v.split_once("..") {
        let mut lo = lo.chars();
        let mut hi = hi.chars();
        match (lo.next(), lo.next(), hi.next(), hi.next()) {
            (Some(a), None, Some(b), None) if a <= b => {
                Some((a..=b).map(|c| c.to_string()).collect())
            }
            _ => None,
        }
    } else if v.is_empty() {
        None
    } else {
        Some(vec![v.to_string()])
    }
}

impl AppKind {
    /// A finite operation universe for property enumeration: per process a
    /// small, representative set of operations with explicit arguments.
    pub fn default_universe(&self, procs: u32) -> Vec<OperationRecord> {
        let mut out = Vec::new();
        for pn in 1..=procs {
            let i = ProcessId(pn);
            let mk = |seq: u32, kind: &str, args: Vec<Value>| {
                OperationRecord::new(OpUid::new(i, seq), kind, args)
            };
            match self {
                AppKind::Punching => {
                    let base = 9 + pn as i64;
                    out.push(mk(1, "punch-in", vec![Value::Int(base), Value::Int(pn as i64)]));
                    out.push(mk(
                        2,
                        "punch-out",
                        vec![Value::Int(pn as i64), Value::Int(base + 8)],
                    ));
                    out.push(mk(
                        3,
                        "punch-in",
                        vec![Value::Int(base + 20), Value::Int(pn as i64)],
                    ));
                }
                AppKind::Crypto { .. } => {
                    let to = (pn % procs + 1) as i64;
                    let from = pn as i64;
                    out.push(mk(
                        1,
                        "transfer",
                        vec![Value::Int(from), Value::Int(to), Value::Int(1)],
                    ));
                    out.push(mk(
                        2,
                        "transfer",
                        vec![Value::Int(from), Value::Int(to), Value::Int(1)],
                    ));
                    out.push(mk(3, "read", vec![Value::Int(from)]));
                }
                AppKind::DoAll { jobs, .. } => {
                    let job = Value::str(jobs.first().cloned().unwrap_or_else(|| "x".into()));
                    out.push(mk(1, "do", vec![job.clone(), Value::Int(pn as i64)]));
                    out.push(mk(2, "completed", vec![job, Value::Int(pn as i64)]));
                }
                AppKind::Versioned => {
                    out.push(mk(
                        1,
                        "write",
                        vec![
                            Value::pair(Value::Int(1), Value::str(format!("v{pn}a"))),
                            Value::str("x"),
                        ],
                    ));
                    out.push(mk(
                        2,
                        "write",
                        vec![
                            Value::pair(Value::Int(2), Value::str(format!("v{pn}b"))),
                            Value::str("x"),
                        ],
                    ));
                    out.push(mk(3, "read", vec![Value::str("x")]));
                }
                AppKind::PositiveRegister => {
                    out.push(mk(1, "write", vec![Value::Int(pn as i64)]));
                    out.push(mk(2, "read", vec![]));
                }
            }
        }
        out
    }

    /// Scenario workload convenience: bring a user-written call into the
    /// application's argument shape, filling in the issuer where operations
    /// embed one.
    pub fn canonicalize_workload_op(
        &self,
        kind: &str,
        mut args: Vec<Value>,
        issuer: ProcessId,
    ) -> Result<Vec<Value>, String> {
        let id = Value::Int(issuer.0 as i64);
        match (self, kind) {
            (AppKind::Punching, "punch-in") => {
                if args.len() == 1 {
                    args.push(id);
                }
            }
            (AppKind::Punching, "punch-out") => {
                // punch-out(i) or punch-out(i, now); user writes `punch-out`
                // or `punch-out(now)`, the issuer goes in front.
                if args.len() <= 1 {
                    args.insert(0, id);
                }
            }
            (AppKind::Crypto { .. }, "transfer") => {
                if args.len() == 2 {
                    args.insert(0, id);
                }
            }
            (AppKind::DoAll { jobs, .. }, "do") | (AppKind::DoAll { jobs, .. }, "completed") => {
                if args.len() == 1 {
                    args.push(id);
                }
                if let Some(Value::Str(job)) = args.first() {
                    if !jobs.contains(job) {
                        return Err(format!("job `{job}` is not in the configured job set"));
                    }
                }
            }
            _ => {}
        }
        Ok(args)
    }
}

/// Fill in call-time arguments at invocation: a punch-out without its `now`
/// argument receives the kernel clock (logical time, hour scale 1).
pub fn autofill_at_invoke(spec_name: &str, op: &mut OperationRecord, now: u64) {
    if spec_name == "punching" && op.kind == "punch-out" && op.args.len() == 1 {
        op.args.push(Value::Int(now as i64));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ApplyResult;

    fn uid(issuer: u32, seq: u32) -> OpUid {
        OpUid::new(ProcessId(issuer), seq)
    }

    fn op(issuer: u32, seq: u32, kind: &str, args: Vec<Value>) -> OperationRecord {
        OperationRecord::new(uid(issuer, seq), kind, args)
    }

    fn seq(ops: Vec<OperationRecord>) -> OrderedOps {
        OrderedOps::from_sequence(ops).unwrap()
    }

    fn punch_in(issuer: u32, s: u32, t: i64) -> OperationRecord {
        op(issuer, s, "punch-in", vec![Value::Int(t), Value::Int(issuer as i64)])
    }

    fn punch_out(issuer: u32, s: u32, now: i64) -> OperationRecord {
        op(issuer, s, "punch-out", vec![Value::Int(issuer as i64), Value::Int(now)])
    }

    #[test]
    fn punching_first_punch_in_is_valid() {
        let spec = punching_spec();
        assert!(spec.valid(&OrderedOps::empty(), &punch_in(1, 1, 9), ProcessId(1)));
    }

    #[test]
    fn punching_rejects_double_punch_in() {
        let spec = punching_spec();
        let p = seq(vec![punch_in(1, 1, 9)]);
        assert!(!spec.valid(&p, &punch_in(1, 2, 10), ProcessId(1)));
    }

    #[test]
    fn punching_out_returns_elapsed_hours() {
        let spec = punching_spec();
        let p = seq(vec![punch_in(1, 1, 9)]);
        let out = punch_out(1, 2, 17);
        assert!(spec.valid(&p, &out, ProcessId(1)));
        assert_eq!(spec.execute(&p, &out, ProcessId(1)), Value::Int(8));
    }

    #[test]
    fn punching_out_before_in_is_invalid() {
        let spec = punching_spec();
        assert!(!spec.valid(&OrderedOps::empty(), &punch_out(1, 1, 17), ProcessId(1)));
    }

    #[test]
    fn punching_ignores_other_processes() {
        let spec = punching_spec();
        let p = seq(vec![punch_in(2, 1, 9)]);
        // Process 1 never punched in, so its punch-out stays invalid no
        // matter what process 2 did.
        assert!(!spec.valid(&p, &punch_out(1, 1, 17), ProcessId(1)));
        assert!(spec.valid(&p, &punch_in(1, 1, 11), ProcessId(1)));
    }

    #[test]
    fn punching_rejects_forged_issuer() {
        let spec = punching_spec();
        // Embedded identity says 2, the uid says 1: rejected for either caller.
        let forged = op(1, 1, "punch-in", vec![Value::Int(9), Value::Int(2)]);
        assert!(!spec.valid(&OrderedOps::empty(), &forged, ProcessId(1)));
        assert!(!spec.valid(&OrderedOps::empty(), &forged, ProcessId(2)));
    }

    fn transfer(issuer: u32, s: u32, to: i64, x: i64) -> OperationRecord {
        op(
            issuer,
            s,
            "transfer",
            vec![Value::Int(issuer as i64), Value::Int(to), Value::Int(x)],
        )
    }

    fn read(issuer: u32, s: u32, k: i64) -> OperationRecord {
        op(issuer, s, "read", vec![Value::Int(k)])
    }

    #[test]
    fn crypto_transfer_within_balance_is_valid() {
        let spec = crypto_spec(10);
        assert!(spec.valid(&OrderedOps::empty(), &transfer(1, 1, 2, 5), ProcessId(1)));
    }

    #[test]
    fn crypto_transfer_beyond_balance_is_invalid() {
        let spec = crypto_spec(10);
        let p = seq(vec![transfer(1, 1, 2, 5)]);
        assert!(!spec.valid(&p, &transfer(1, 2, 3, 6), ProcessId(1)));
    }

    #[test]
    fn crypto_read_sums_incoming_and_outgoing() {
        let spec = crypto_spec(10);
        let p = seq(vec![transfer(1, 1, 2, 5)]);
        let r = read(3, 1, 2);
        assert!(spec.valid(&p, &r, ProcessId(3)));
        assert_eq!(spec.execute(&p, &r, ProcessId(3)), Value::Int(15));
        let r1 = read(3, 2, 1);
        assert_eq!(spec.execute(&p, &r1, ProcessId(3)), Value::Int(5));
    }

    #[test]
    fn crypto_rejects_non_positive_amounts_and_forged_source() {
        let spec = crypto_spec(10);
        let zero = transfer(1, 1, 2, 0);
        assert!(!spec.valid(&OrderedOps::empty(), &zero, ProcessId(1)));
        let forged = op(
            2,
            1,
            "transfer",
            vec![Value::Int(1), Value::Int(2), Value::Int(5)],
        );
        assert!(!spec.valid(&OrderedOps::empty(), &forged, ProcessId(2)));
    }

    fn do_op(issuer: u32, s: u32, job: &str) -> OperationRecord {
        op(issuer, s, "do", vec![Value::str(job), Value::Int(issuer as i64)])
    }

    fn completed(issuer: u32, s: u32, job: &str) -> OperationRecord {
        op(
            issuer,
            s,
            "completed",
            vec![Value::str(job), Value::Int(issuer as i64)],
        )
    }

    #[test]
    fn doall_under_threshold_is_valid() {
        let spec = doall_spec(3);
        let p = seq(vec![do_op(1, 1, "x"), do_op(2, 1, "x")]);
        assert!(spec.valid(&p, &do_op(4, 1, "x"), ProcessId(4)));
    }

    #[test]
    fn doall_over_threshold_is_invalid() {
        let spec = doall_spec(1);
        let p = seq(vec![do_op(1, 1, "x"), do_op(2, 1, "x")]);
        assert!(!spec.valid(&p, &do_op(3, 1, "x"), ProcessId(3)));
    }

    #[test]
    fn doall_completed_reports_own_work() {
        let spec = doall_spec(3);
        let p = seq(vec![do_op(1, 1, "x")]);
        let q = completed(1, 2, "x");
        assert!(spec.valid(&p, &q, ProcessId(1)));
        assert_eq!(spec.execute(&p, &q, ProcessId(1)), Value::Bool(true));
        let other = completed(2, 1, "x");
        assert_eq!(spec.execute(&p, &other, ProcessId(2)), Value::Bool(false));
    }

    #[test]
    fn doall_counts_distinct_performers_per_job() {
        let spec = doall_spec(1);
        let p = seq(vec![do_op(1, 1, "x"), do_op(2, 1, "y")]);
        // Only one performer of `x` so far, the second job does not count.
        assert!(spec.valid(&p, &do_op(3, 1, "x"), ProcessId(3)));
    }

    fn vwrite(issuer: u32, s: u32, ver: i64, v: &str, x: &str) -> OperationRecord {
        op(
            issuer,
            s,
            "write",
            vec![Value::pair(Value::Int(ver), Value::str(v)), Value::str(x)],
        )
    }

    fn vread(issuer: u32, s: u32, x: &str) -> OperationRecord {
        op(issuer, s, "read", vec![Value::str(x)])
    }

    #[test]
    fn versioned_first_write_is_valid() {
        let spec = versioned_spec();
        assert!(spec.valid(&OrderedOps::empty(), &vwrite(1, 1, 1, "a", "x"), ProcessId(1)));
    }

    #[test]
    fn versioned_equal_version_is_invalid() {
        let spec = versioned_spec();
        let p = seq(vec![vwrite(1, 1, 2, "b", "x")]);
        assert!(!spec.valid(&p, &vwrite(2, 1, 2, "c", "x"), ProcessId(2)));
    }

    #[test]
    fn versioned_read_returns_highest_version() {
        let spec = versioned_spec();
        let p = seq(vec![vwrite(1, 1, 1, "a", "x"), vwrite(1, 2, 3, "c", "x")]);
        let r = vread(2, 1, "x");
        assert!(spec.valid(&p, &r, ProcessId(2)));
        assert_eq!(
            spec.execute(&p, &r, ProcessId(2)),
            Value::pair(Value::Int(3), Value::str("c"))
        );
    }

    #[test]
    fn versioned_read_before_any_write_is_null() {
        let spec = versioned_spec();
        let r = vread(1, 1, "x");
        assert_eq!(spec.execute(&OrderedOps::empty(), &r, ProcessId(1)), Value::Null);
    }

    #[test]
    fn versioned_tracks_objects_separately() {
        let spec = versioned_spec();
        let p = seq(vec![vwrite(1, 1, 5, "a", "x")]);
        assert!(spec.valid(&p, &vwrite(2, 1, 1, "b", "y"), ProcessId(2)));
    }

    #[test]
    fn registry_parses_names_and_params() {
        let e = spec_by_name("crypto:n=3,ibalance=10").unwrap();
        assert_eq!(
            e.app,
            AppKind::Crypto {
                ibalance: 10,
                accounts: 3
            }
        );
        let e = spec_by_name("doall:T=3,J=a..e").unwrap();
        assert_eq!(
            e.app,
            AppKind::DoAll {
                t: 3,
                jobs: vec!["a", "b", "c", "d", "e"]
                    .into_iter()
                    .map(String::from)
                    .collect()
            }
        );
        assert_eq!(spec_by_name("punching").unwrap().app, AppKind::Punching);
        assert_eq!(spec_by_name("versioned").unwrap().app, AppKind::Versioned);
        assert!(spec_by_name("mystery").is_err());
        assert!(spec_by_name("punching:T=1").is_err());
        assert!(spec_by_name("doall:T=0").is_err());
    }

    #[test]
    fn universes_are_deterministic_and_valid_initially() {
        for name in ["punching", "crypto:ibalance=2", "doall:T=1", "versioned"] {
            let e = spec_by_name(name).unwrap();
            let u1 = e.app.default_universe(2);
            let u2 = e.app.default_universe(2);
            assert_eq!(u1, u2);
            assert!(!u1.is_empty());
            // Universe elements carry distinct uids.
            let uids: std::collections::BTreeSet<OpUid> = u1.iter().map(|o| o.uid).collect();
            assert_eq!(uids.len(), u1.len());
        }
    }

    #[test]
    fn workload_canonicalization_fills_issuers() {
        let punching = spec_by_name("punching").unwrap().app;
        let args = punching
            .canonicalize_workload_op("punch-in", vec![Value::Int(9)], ProcessId(2))
            .unwrap();
        assert_eq!(args, vec![Value::Int(9), Value::Int(2)]);
        let args = punching
            .canonicalize_workload_op("punch-out", vec![], ProcessId(2))
            .unwrap();
        assert_eq!(args, vec![Value::Int(2)]);

        let crypto = spec_by_name("crypto").unwrap().app;
        let args = crypto
            .canonicalize_workload_op("transfer", vec![Value::Int(2), Value::Int(5)], ProcessId(1))
            .unwrap();
        assert_eq!(args, vec![Value::Int(1), Value::Int(2), Value::Int(5)]);

        let doall = spec_by_name("doall").unwrap().app;
        let args = doall
            .canonicalize_workload_op("do", vec![Value::str("x")], ProcessId(3))
            .unwrap();
        assert_eq!(args, vec![Value::str("x"), Value::Int(3)]);
        assert!(doall
            .canonicalize_workload_op("do", vec![Value::str("zz")], ProcessId(3))
            .is_err());
    }

    #[test]
    fn autofill_adds_now_to_bare_punch_out() {
        let mut o = op(1, 1, "punch-out", vec![Value::Int(1)]);
        autofill_at_invoke("punching", &mut o, 42);
        assert_eq!(o.args, vec![Value::Int(1), Value::Int(42)]);
        // Explicit now survives untouched.
        let mut o = punch_out(1, 2, 17);
        autofill_at_invoke("punching", &mut o, 42);
        assert_eq!(o.args, vec![Value::Int(1), Value::Int(17)]);
    }

    #[test]
    fn centralized_replay_matches_expected_results() {
        // End-to-end: the centralized object accepts the alternating punch
        // workload and reports elapsed hours from the recorded punch-in.
        let spec = punching_spec();
        let mut obj = crate::object::CentralizedObject::new(spec);
        assert_eq!(
            obj.apply(punch_in(1, 1, 9), ProcessId(1)).unwrap(),
            ApplyResult::Ack(Value::Null)
        );
        assert_eq!(
            obj.apply(punch_out(1, 2, 17), ProcessId(1)).unwrap(),
            ApplyResult::Ack(Value::Int(8))
        );
        assert_eq!(
            obj.apply(punch_out(1, 3, 18), ProcessId(1)).unwrap(),
            ApplyResult::Nack
        );
    }
}
