//! Command-line front end: run scenario files (seeded or exhaustively),
//! check recorded traces for regular or total consistency, report an
//! object's persistence properties, and race an invalidation witness
//! through the consensus protocols.
//!
//! Exit codes: 0 = pass, 1 = a property failed, 2 = usage or budget error.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use valobj::apps::{self, AppKind};
use valobj::checkers::{
    check_persistent_execution, check_persistent_validity, check_regular, check_total,
    find_reduction_witness, BlockedOp, CheckBudget, PropertyReport, PropertyWitness,
};
use valobj::history::{EventPayload, HistoryTrace};
use valobj::object::ObjectSpec;
use valobj::sim::consensus::{
    build_consensus_kernel, consensus_verdict, decisions, ConsensusProtocol,
};
use valobj::sim::kernel::Kernel;
use valobj::sim::scenario::{
    assign_proposals, build_kernel, parse_crash_spec, parse_scenario, Built, Scenario,
    ScenarioImpl,
};
use valobj::types::{ApplyResult, OpUid, OperationRecord, ProcessId, Value};
use valobj::wire;

/// Node budget for exhaustive exploration.
const EXPLORE_BUDGET: u64 = 2_000_000;

/// Search budget for trace checks; roomier than the library default so
/// command-line traces of a dozen operations fit.
fn check_budget() -> CheckBudget {
    CheckBudget {
        max_ops: 20,
        max_nodes: 20_000_000,
    }
}
/// Process count the reduction runs at.
const REDUCE_N: usize = 3;

const PASS: u8 = 0;
const FAIL: u8 = 1;
const USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "valobj",
    version,
    about = "Run, check, and classify validated shared objects"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and summarize what every operation returned
    Run(RunArgs),
    /// Check a recorded trace against a consistency definition
    Check(CheckArgs),
    /// Report whether concurrent operations stay valid and keep their results
    Properties(PropArgs),
    /// Race an object's invalidation witness through the consensus wrapper
    Reduce(ReduceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (starts with `valobj-v1 scenario`)
    scenario: PathBuf,
    /// Schedule seed; overrides the scenario's own `seed` line
    #[arg(long, conflicts_with = "exhaustive")]
    seed: Option<u64>,
    /// Explore every schedule instead of sampling one
    #[arg(long)]
    exhaustive: bool,
    /// Extra crash as `p<id>@<step>` or `r<id>@<step>`; repeatable
    #[arg(long = "crash", value_name = "TARGET@STEP", conflicts_with = "exhaustive")]
    crash: Vec<String>,
    /// Write the completed trace to this file
    #[arg(long, value_name = "PATH", conflicts_with = "exhaustive")]
    trace_out: Option<PathBuf>,
    /// Emit the summary as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace file (starts with `valobj-v1 trace`)
    trace: PathBuf,
    /// Object the trace ran against, e.g. `punching` or `crypto:ibalance=2`
    #[arg(long)]
    object: String,
    /// Consistency definition to check the trace against
    #[arg(long, value_enum, default_value_t = Mode::Regular)]
    mode: Mode,
    /// Emit the full report as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Some strict partial order containing real time explains the trace
    Regular,
    /// Some total order containing real time explains the trace
    Total,
}

#[derive(Args)]
struct PropArgs {
    /// Object name, e.g. `punching`, `crypto:ibalance=2`, `doall:T=1`
    object: String,
    /// Processes issuing the probe operations
    #[arg(long, default_value_t = 2)]
    procs: u32,
    /// Maximum operations appended while scanning reachable sequences
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Emit both reports as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReduceArgs {
    /// Object name whose invalidation race drives the protocol
    object: String,
    /// Three comma-separated proposal values, one per process
    #[arg(long, default_value = "v1,v2,v3")]
    proposals: String,
    /// Emit the report as JSON
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Properties(a) => cmd_properties(a),
        Cmd::Reduce(a) => cmd_reduce(a),
    };
    ExitCode::from(code)
}

fn usage(msg: impl AsRef<str>) -> u8 {
    eprintln!("error: {}", msg.as_ref());
    USAGE
}

fn emit_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("reports serialize")
    );
}

fn cmd_run(a: &RunArgs) -> u8 {
    let text = match fs::read_to_string(&a.scenario) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read {}: {e}", a.scenario.display())),
    };
    let mut scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => return usage(format!("{}: {e}", a.scenario.display())),
    };
    for spec in &a.crash {
        match parse_crash_spec(spec) {
            Ok(c) => scenario.crash_plan.push(c),
            Err(e) => return usage(format!("--crash {spec}: {e}")),
        }
    }
    if scenario.crash_plan.len() > scenario.f {
        return usage(format!(
            "{} crashes scheduled but the scenario tolerates f={}",
            scenario.crash_plan.len(),
            scenario.f
        ));
    }
    if a.exhaustive && !scenario.crash_plan.is_empty() {
        return usage("exhaustive runs enumerate crashes themselves; drop the crash plan and set f");
    }
    let built = match build_kernel(&scenario) {
        Ok(b) => b,
        Err(e) => return usage(e),
    };
    if a.exhaustive {
        run_exhaustive(built, &scenario, a)
    } else {
        run_seeded(built, &scenario, a)
    }
}

fn run_seeded(mut built: Built, scenario: &Scenario, a: &RunArgs) -> u8 {
    let seed = a.seed.or(scenario.seed).unwrap_or(0);
    let summary = built.kernel.run(seed);
    if let Some(path) = &a.trace_out {
        let rendered = match built.kernel.render_trace() {
            Ok(t) => t,
            Err(e) => return usage(format!("run produced a malformed history: {e}")),
        };
        if let Err(e) = fs::write(path, rendered) {
            return usage(format!("cannot write {}: {e}", path.display()));
        }
    }
    if let Some(proposals) = &built.proposals {
        return report_consensus_run(&built.kernel, proposals, seed, a.json);
    }
    let trace = match built.kernel.completed_trace() {
        Ok(t) => t,
        Err(e) => return usage(format!("run produced a malformed history: {e}")),
    };
    let results = respond_lines(&trace);
    let acks = results.iter().filter(|(_, _, r)| r.is_ack()).count();
    if a.json {
        emit_json(&serde_json::json!({
            "scenario": scenario.object,
            "seed": seed,
            "ticks": summary.ticks,
            "ops": results.len(),
            "ack": acks,
            "results": results
                .iter()
                .map(|(uid, call, res)| serde_json::json!({
                    "uid": uid.to_string(),
                    "call": call,
                    "result": res.to_string(),
                }))
                .collect::<Vec<_>>(),
            "stuck": summary.deadlocked,
        }));
    } else {
        for (uid, call, res) in &results {
            println!("{uid} {call} -> {res}");
        }
        for s in &summary.deadlocked {
            println!("{s}");
        }
        println!("{} ops, {} ACK", results.len(), acks);
    }
    if summary.deadlocked.is_empty() {
        PASS
    } else {
        FAIL
    }
}

fn report_consensus_run(
    kernel: &Kernel,
    proposals: &BTreeMap<ProcessId, Value>,
    seed: u64,
    json: bool,
) -> u8 {
    let decided = decisions(kernel);
    let verdict = consensus_verdict(kernel, proposals);
    if json {
        emit_json(&serde_json::json!({
            "seed": seed,
            "proposals": render_values(proposals),
            "decisions": render_values(&decided),
            "verdict": match &verdict {
                Ok(()) => "PASS".to_string(),
                Err(e) => format!("FAIL: {e}"),
            },
        }));
    } else {
        for (p, v) in &decided {
            println!("p{p} decides {v}");
        }
        match &verdict {
            Ok(()) => println!("consensus: PASS"),
            Err(e) => println!("consensus: FAIL ({e})"),
        }
    }
    if verdict.is_ok() {
        PASS
    } else {
        FAIL
    }
}

fn run_exhaustive(built: Built, scenario: &Scenario, a: &RunArgs) -> u8 {
    let entry = apps::spec_by_name(&scenario.object).expect("the parser validated the object");
    // Fingerprint deduplication assumes clock-blind actors; the punching
    // workload stamps punch-outs with the current tick, so equal states can
    // still diverge there.
    let dedup = entry.app != AppKind::Punching;
    let spec = entry.spec.clone();
    let total = scenario.impl_kind == ScenarioImpl::Total;
    let proposals = built.proposals.clone();
    let mut outcomes: BTreeMap<String, u64> = BTreeMap::new();
    let report = built.kernel.explore(EXPLORE_BUDGET, dedup, &mut |k| {
        let outcome = terminal_outcome(k, &spec, total, proposals.as_ref())?;
        *outcomes.entry(outcome).or_default() += 1;
        Ok(())
    });
    if a.json {
        emit_json(&serde_json::json!({
            "scenario": scenario.object,
            "branches": report.terminals,
            "nodes": report.nodes,
            "deduplicated": dedup,
            "outcomes": outcomes,
            "violations": report.violations,
            "budget_exhausted": report.budget_exhausted,
        }));
    } else {
        println!("branches: {}", report.terminals);
        let mut rows: Vec<(&String, &u64)> = outcomes.iter().collect();
        rows.sort_by(|x, y| y.1.cmp(x.1).then(x.0.cmp(y.0)));
        for (label, count) in rows {
            println!("  {count:>6}  {label}");
        }
        for v in report.violations.iter().take(5) {
            println!("violation: {v}");
        }
        if report.violations.len() > 5 {
            println!("... and {} more violations", report.violations.len() - 5);
        }
    }
    if report.budget_exhausted {
        return usage(format!(
            "exploration exceeded the budget of {EXPLORE_BUDGET} scheduled states"
        ));
    }
    if report
        .violations
        .iter()
        .any(|v| v.contains("budget") || v.contains("exceed"))
    {
        return usage("a per-branch consistency check ran out of budget");
    }
    if report.violations.is_empty() {
        PASS
    } else {
        FAIL
    }
}

/// Summarize one quiescent state, or report why it violates the scenario's
/// property: every live actor finished, consensus runs decided coherently,
/// and regular or total runs produced a checkable trace.
fn terminal_outcome(
    k: &Kernel,
    spec: &ObjectSpec,
    total: bool,
    proposals: Option<&BTreeMap<ProcessId, Value>>,
) -> Result<String, String> {
    let stuck = k.deadlock_report();
    if !stuck.is_empty() {
        return Err(stuck.join("; "));
    }
    if let Some(props) = proposals {
        consensus_verdict(k, props)?;
        let line = decisions(k)
            .iter()
            .map(|(p, v)| format!("p{p}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        return Ok(if line.is_empty() {
            "no decisions".into()
        } else {
            line
        });
    }
    let trace = k.completed_trace().map_err(|e| e.to_string())?;
    let report = if total {
        check_total(spec, &trace, &check_budget())
    } else {
        check_regular(spec, &trace, &check_budget())
    }
    .map_err(|e| e.to_string())?;
    if let Some(w) = report.witness() {
        return Err(format!(
            "consistency check failed at prefix [{}]",
            uid_list(&w.prefix)
        ));
    }
    let (ops, acks) = count_responses(&trace);
    Ok(format!("{ops} ops, {acks} ACK"))
}

fn cmd_check(a: &CheckArgs) -> u8 {
    let text = match fs::read_to_string(&a.trace) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read {}: {e}", a.trace.display())),
    };
    let trace = match wire::parse_trace(&text) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", a.trace.display())),
    };
    let entry = match apps::spec_by_name(&a.object) {
        Ok(e) => e,
        Err(e) => return usage(e.to_string()),
    };
    let budget = check_budget();
    let report = match a.mode {
        Mode::Regular => check_regular(&entry.spec, &trace, &budget),
        Mode::Total => check_total(&entry.spec, &trace, &budget),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => return usage(e.to_string()),
    };
    let mode_name = match a.mode {
        Mode::Regular => "regular",
        Mode::Total => "total",
    };
    if a.json {
        emit_json(&serde_json::json!({
            "object": a.object,
            "mode": mode_name,
            "report": report,
        }));
    } else if report.passed() {
        println!(
            "check {mode_name}: PASS ({} accepted operations, {} placements tried)",
            report.ops, report.nodes
        );
    } else {
        let w = report.witness().expect("failing reports carry a witness");
        println!("check {mode_name}: FAIL");
        println!("ordered prefix: [{}]", uid_list(&w.prefix));
        for b in &w.blocked {
            println!("  {} {}: {}", b.uid, b.call, blocked_reason(b));
        }
    }
    if report.passed() {
        PASS
    } else {
        FAIL
    }
}

fn cmd_properties(a: &PropArgs) -> u8 {
    if a.depth < 1 {
        return usage("depth must be at least 1");
    }
    if a.procs < 2 {
        return usage("the properties compare operations of at least 2 processes");
    }
    let entry = match apps::spec_by_name(&a.object) {
        Ok(e) => e,
        Err(e) => return usage(e.to_string()),
    };
    let universe = entry.app.default_universe(a.procs);
    let validity = check_persistent_validity(&entry.spec, &universe, a.depth);
    let execution = check_persistent_execution(&entry.spec, &universe, a.depth);
    if a.json {
        emit_json(&serde_json::json!({
            "object": a.object,
            "procs": a.procs,
            "depth": a.depth,
            "persistent_validity": validity,
            "persistent_execution": execution,
        }));
        return PASS;
    }
    print_property("persistent validity", &validity);
    print_property("persistent execution", &execution);
    PASS
}

fn print_property(name: &str, r: &PropertyReport) {
    if r.holds {
        println!("{name}: PASS (sequences scanned: {})", r.sequences);
    } else {
        println!("{name}: FAIL (sequences scanned: {})", r.sequences);
        for line in witness_lines(r.witness.as_ref().expect("failing reports carry a witness")) {
            println!("{line}");
        }
    }
}

fn witness_lines(w: &PropertyWitness) -> Vec<String> {
    match w {
        PropertyWitness::Invalidation(r) => vec![
            format!(
                "  after [{}], {} (p{}) and {} (p{}) are both valid",
                call_list(&r.prefix),
                r.op_i.render_call(),
                r.op_i.uid.issuer,
                r.op_j.render_call(),
                r.op_j.uid.issuer,
            ),
            format!(
                "  appending {} first turns {} invalid{}",
                r.op_j.render_call(),
                r.op_i.render_call(),
                if r.mutual {
                    "; either order invalidates the other"
                } else {
                    ""
                },
            ),
        ],
        PropertyWitness::Divergence {
            prefix,
            op,
            other,
            before,
            after,
        } => vec![
            format!(
                "  after [{}], {} (p{}) returns {before}",
                call_list(prefix),
                op.render_call(),
                op.uid.issuer,
            ),
            format!(
                "  once {} (p{}) lands first it returns {after} instead",
                other.render_call(),
                other.uid.issuer,
            ),
        ],
    }
}

fn cmd_reduce(a: &ReduceArgs) -> u8 {
    let entry = match apps::spec_by_name(&a.object) {
        Ok(e) => e,
        Err(e) => return usage(e.to_string()),
    };
    let mut values = Vec::new();
    for part in a.proposals.split(',') {
        match wire::parse_value(part.trim(), 1, true) {
            Ok(v) => values.push(v),
            Err(e) => return usage(format!("--proposals: {e}")),
        }
    }
    if values.len() != REDUCE_N {
        return usage(format!(
            "--proposals needs exactly {REDUCE_N} comma-separated values"
        ));
    }
    let universe = entry.app.default_universe(REDUCE_N as u32);
    let witness = match find_reduction_witness(&entry.spec, &universe, 3) {
        Some(w) => w,
        None => {
            let msg = format!(
                "no invalidation race in `{}` at depth 3 over {REDUCE_N} processes: \
                 the spec has bounded persistent validity, so the race decides nothing",
                a.object
            );
            if a.json {
                emit_json(&serde_json::json!({
                    "object": a.object,
                    "witness": null,
                    "error": msg,
                }));
            } else {
                println!("{msg}");
            }
            return FAIL;
        }
    };
    let protocol = ConsensusProtocol::Wrapper { n: REDUCE_N };
    let proposals = match assign_proposals(&witness, protocol, REDUCE_N, &values) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    let kernel = match build_consensus_kernel(
        &entry.spec,
        &a.object,
        &witness,
        protocol,
        &proposals,
        1,
    ) {
        Ok(k) => k,
        Err(e) => return usage(e),
    };
    let mut outcomes: BTreeMap<String, u64> = BTreeMap::new();
    let report = kernel.explore(EXPLORE_BUDGET, true, &mut |k| {
        consensus_verdict(k, &proposals)?;
        let line = decisions(k)
            .iter()
            .map(|(p, v)| format!("p{p}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        *outcomes.entry(line).or_default() += 1;
        Ok(())
    });
    let mut agreement = true;
    let mut validity = true;
    let mut termination = true;
    for v in &report.violations {
        if v.contains("never decides") {
            termination = false;
        } else if v.contains("nobody proposed") {
            validity = false;
        } else {
            agreement = false;
        }
    }
    let relation = if witness.mutual {
        "invalidate each other"
    } else {
        "collide one way"
    };
    if a.json {
        emit_json(&serde_json::json!({
            "object": a.object,
            "witness": witness,
            "proposals": render_values(&proposals),
            "branches": report.terminals,
            "nodes": report.nodes,
            "outcomes": outcomes,
            "agreement": agreement,
            "validity": validity,
            "termination": termination,
            "violations": report.violations.iter().take(10).collect::<Vec<_>>(),
            "budget_exhausted": report.budget_exhausted,
        }));
    } else {
        println!(
            "witness: {} (p{}) and {} (p{}) {} after [{}]",
            witness.op_i.render_call(),
            witness.op_i.uid.issuer,
            witness.op_j.render_call(),
            witness.op_j.uid.issuer,
            relation,
            call_list(&witness.prefix),
        );
        println!(
            "proposals: {}",
            proposals
                .iter()
                .map(|(p, v)| format!("p{p}={v}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        println!("branches: {}", report.terminals);
        verdict_line("agreement", agreement);
        verdict_line("validity", validity);
        verdict_line("termination", termination);
        for v in report.violations.iter().take(3) {
            println!("violation: {v}");
        }
    }
    if report.budget_exhausted {
        return usage(format!(
            "exploration exceeded the budget of {EXPLORE_BUDGET} scheduled states"
        ));
    }
    if agreement && validity && termination {
        PASS
    } else {
        FAIL
    }
}

fn verdict_line(name: &str, ok: bool) {
    println!("{name}: {}", if ok { "PASS" } else { "FAIL" });
}

fn respond_lines(trace: &HistoryTrace) -> Vec<(OpUid, String, ApplyResult)> {
    let mut out = Vec::new();
    for ev in trace.events() {
        if let EventPayload::Respond(res) = &ev.payload {
            let call = trace
                .operation(ev.uid)
                .map(|op| op.render_call())
                .unwrap_or_else(|| "?".into());
            out.push((ev.uid, call, res.clone()));
        }
    }
    out
}

fn count_responses(trace: &HistoryTrace) -> (usize, usize) {
    let mut ops = 0;
    let mut acks = 0;
    for ev in trace.events() {
        if let EventPayload::Respond(res) = &ev.payload {
            ops += 1;
            if res.is_ack() {
                acks += 1;
            }
        }
    }
    (ops, acks)
}

fn render_values(map: &BTreeMap<ProcessId, Value>) -> BTreeMap<String, String> {
    map.iter()
        .map(|(p, v)| (format!("p{p}"), v.to_string()))
        .collect()
}

fn blocked_reason(b: &BlockedOp) -> String {
    if let Some(later) = b.rt_conflict {
        return format!("placed before {later}, which responded before this call began");
    }
    match &b.executed {
        None => "rejected against this prefix".into(),
        Some(v) if *v == b.recorded => {
            "fits here, but no completion of the prefix places the rest".into()
        }
        Some(v) => format!("executes to {v} here, but the trace recorded {}", b.recorded),
    }
}

fn call_list(ops: &[OperationRecord]) -> String {
    ops.iter()
        .map(|o| o.render_call())
        .collect::<Vec<_>>()
        .join(", ")
}

fn uid_list(uids: &[OpUid]) -> String {
    uids.iter()
        .map(|u| u.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}
