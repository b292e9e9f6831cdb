//! The simulation kernel. A `World` holds all shared state (ledgers,
//! registers, the broadcast service, the reference object, the observed
//! history); actors advance it one atomic step at a time. The kernel
//! enumerates the enabled actions, and either follows a seeded random
//! schedule or explores every schedule exhaustively.

use super::consensus::{ConsensusActor, ObjectTaskActor};
use super::regular::RegularActor;
use super::total::{AbService, TotalActor};
use crate::dlo::{LedgerFabric, MsgId};
use crate::history::{CompletionPolicy, EventPayload, HistoryEvent, HistoryError, HistoryTrace};
use crate::object::CentralizedObject;
use crate::registers::RegisterBank;
use crate::types::{ApplyResult, OpUid, OperationRecord, ProcessId};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

/// All shared state an actor step may touch.
#[derive(Clone, Debug)]
pub struct World {
    /// Action counter; doubles as the timestamp for history events, debug
    /// lines, and ledger call intervals.
    pub tick: u64,
    pub history: Vec<HistoryEvent>,
    pub fabric: LedgerFabric,
    pub registers: RegisterBank,
    pub ab: AbService,
    pub object: CentralizedObject,
    pub spec_name: String,
    pub debug: Vec<(u64, String)>,
    /// Appends whose completion must produce a response event, even if the
    /// issuing process has crashed meanwhile.
    pub pending_responds: Vec<(crate::dlo::CallId, OpUid, ApplyResult)>,
}

impl World {
    pub fn emit_invoke(&mut self, op: OperationRecord) {
        self.push_event(HistoryEvent {
            time: self.tick,
            uid: op.uid,
            payload: EventPayload::Invoke(op),
        });
    }

    pub fn emit_respond(&mut self, uid: OpUid, result: ApplyResult) {
        self.push_event(HistoryEvent {
            time: self.tick,
            uid,
            payload: EventPayload::Respond(result),
        });
    }

    fn push_event(&mut self, e: HistoryEvent) {
        debug_assert!(
            self.history.last().map_or(true, |last| last.time < e.time),
            "at most one history event per action"
        );
        self.history.push(e);
    }

    pub fn log(&mut self, line: String) {
        self.debug.push((self.tick, line));
    }
}

/// One schedulable unit.
#[derive(Clone, Debug, Hash)]
pub enum Actor {
    Regular(RegularActor),
    Total(TotalActor),
    Consensus(ConsensusActor),
    ObjectTask(ObjectTaskActor),
}

impl Actor {
    pub fn runnable(&self, w: &World) -> bool {
        match self {
            Actor::Regular(a) => a.runnable(w),
            Actor::Total(a) => a.runnable(w),
            Actor::Consensus(a) => a.runnable(w),
            Actor::ObjectTask(a) => a.runnable(w),
        }
    }

    pub fn step(&mut self, w: &mut World) {
        match self {
            Actor::Regular(a) => a.step(w),
            Actor::Total(a) => a.step(w),
            Actor::Consensus(a) => a.step(w),
            Actor::ObjectTask(a) => a.step(w),
        }
    }

    pub fn done(&self) -> bool {
        match self {
            Actor::Regular(a) => a.done(),
            Actor::Total(a) => a.done(),
            Actor::Consensus(a) => a.done(),
            Actor::ObjectTask(_) => false,
        }
    }

    pub fn pid(&self) -> Option<ProcessId> {
        match self {
            Actor::Regular(a) => Some(a.pid()),
            Actor::Total(a) => Some(a.pid()),
            Actor::Consensus(a) => Some(a.pid()),
            Actor::ObjectTask(_) => None,
        }
    }

    /// Service actors belong to the infrastructure: they never crash and are
    /// exempt from deadlock reporting.
    pub fn is_service(&self) -> bool {
        matches!(self, Actor::ObjectTask(_))
    }

    pub fn ab_pid(&self) -> Option<ProcessId> {
        match self {
            Actor::Total(a) => Some(a.pid()),
            _ => None,
        }
    }

    pub fn deliver_ab(&mut self, w: &mut World) {
        match self {
            Actor::Total(a) => a.deliver_ab(w),
            _ => unreachable!("broadcast deliveries target broadcast actors"),
        }
    }

    pub fn describe_wait(&self) -> String {
        match self {
            Actor::Regular(a) => a.describe_wait(),
            Actor::Total(a) => a.describe_wait(),
            Actor::Consensus(a) => a.describe_wait(),
            Actor::ObjectTask(a) => a.describe_wait(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CrashTarget {
    Process(ProcessId),
    Replica(usize),
}

impl std::fmt::Display for CrashTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CrashTarget::Process(p) => write!(f, "p{p}"),
            CrashTarget::Replica(r) => write!(f, "r{}", r + 1),
        }
    }
}

/// A scripted crash: the target's step with this index (0-based) is replaced
/// by its crash. For a process the index counts its own steps; for a storage
/// server it counts the requests the server has processed.
#[derive(Clone, Debug)]
pub struct PlannedCrash {
    pub target: CrashTarget,
    pub at_step: u64,
    fired: bool,
}

impl PlannedCrash {
    pub fn new(target: CrashTarget, at_step: u64) -> Self {
        PlannedCrash {
            target,
            at_step,
            fired: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImplKind {
    Regular,
    Total,
    Consensus,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Step(usize),
    DeliverLedger(MsgId),
    DeliverAb(usize),
    Crash(CrashTarget),
}

#[derive(Clone, Debug)]
pub struct Kernel {
    pub world: World,
    pub actors: Vec<Actor>,
    pub crashed: Vec<bool>,
    pub impl_kind: ImplKind,
    pub max_crashes: usize,
    crashes_used: usize,
    crash_plan: Vec<PlannedCrash>,
    steps_taken: Vec<u64>,
    replica_steps: Vec<u64>,
    /// Exhaustive mode flag: enumerate crash actions instead of following a
    /// script.
    enumerate_crashes: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub ticks: u64,
    /// Live actors left waiting at quiescence (empty on a clean finish).
    pub deadlocked: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ExploreReport {
    pub terminals: u64,
    pub nodes: u64,
    pub budget_exhausted: bool,
    pub violations: Vec<String>,
}

impl Kernel {
    pub fn new(
        world: World,
        actors: Vec<Actor>,
        impl_kind: ImplKind,
        max_crashes: usize,
        crash_plan: Vec<PlannedCrash>,
    ) -> Result<Self, String> {
        if crash_plan.len() > max_crashes {
            return Err(format!(
                "crash plan schedules {} crashes but at most {} are allowed",
                crash_plan.len(),
                max_crashes
            ));
        }
        let mut targets = BTreeSet::new();
        for c in &crash_plan {
            if !targets.insert(c.target) {
                return Err(format!("crash plan names {} twice", c.target));
            }
            match c.target {
                CrashTarget::Process(p) => {
                    if !actors.iter().any(|a| a.pid() == Some(p)) {
                        return Err(format!("crash plan names unknown process p{p}"));
                    }
                }
                CrashTarget::Replica(r) => {
                    if r >= world.fabric.replica_count() {
                        return Err(format!("crash plan names unknown server r{}", r + 1));
                    }
                }
            }
        }
        let n_actors = actors.len();
        let n_replicas = world.fabric.replica_count();
        Ok(Kernel {
            world,
            actors,
            crashed: vec![false; n_actors],
            impl_kind,
            max_crashes,
            crashes_used: 0,
            crash_plan,
            steps_taken: vec![0; n_actors],
            replica_steps: vec![0; n_replicas],
            enumerate_crashes: false,
        })
    }

    /// Enabled actions in canonical order: actor steps, ledger deliveries,
    /// broadcast deliveries, then (in exhaustive mode) crashes.
    pub fn enabled_actions(&self) -> Vec<Action> {
        let mut out = Vec::new();
        for (a, actor) in self.actors.iter().enumerate() {
            if !self.crashed[a] && !actor.done() && actor.runnable(&self.world) {
                out.push(Action::Step(a));
            }
        }
        for m in self.world.fabric.pending_messages() {
            out.push(Action::DeliverLedger(m));
        }
        for (a, actor) in self.actors.iter().enumerate() {
            if let Some(pid) = actor.ab_pid() {
                if !self.crashed[a] && self.world.ab.pending_for(pid) {
                    out.push(Action::DeliverAb(a));
                }
            }
        }
        if self.enumerate_crashes && self.crashes_used < self.max_crashes {
            for (a, actor) in self.actors.iter().enumerate() {
                // Crashing an actor that would never act again changes
                // nothing; crashing one that waits for a wake-up step is
                // indistinguishable from crashing it at that step. The one
                // distinct waiting state is a broadcast still in flight,
                // where the crash decides whether the caller answers.
                let in_flight = matches!(actor, Actor::Total(t) if t.in_flight());
                if !self.crashed[a]
                    && !actor.is_service()
                    && !actor.done()
                    && (actor.runnable(&self.world) || in_flight)
                {
                    out.push(Action::Crash(CrashTarget::Process(
                        actor.pid().expect("protocol actors have a process id"),
                    )));
                }
            }
            for r in 0..self.world.fabric.replica_count() {
                if self.world.fabric.replica_alive(r) {
                    out.push(Action::Crash(CrashTarget::Replica(r)));
                }
            }
        }
        out
    }

    fn planned_crash(&mut self, target: CrashTarget, step_index: u64) -> bool {
        for c in &mut self.crash_plan {
            if !c.fired && c.target == target && c.at_step == step_index {
                c.fired = true;
                return true;
            }
        }
        false
    }

    fn apply_crash(&mut self, target: CrashTarget) {
        self.crashes_used += 1;
        match target {
            CrashTarget::Process(p) => {
                let idx = self
                    .actors
                    .iter()
                    .position(|a| a.pid() == Some(p))
                    .expect("crash target exists");
                assert!(!self.crashed[idx], "{target} crashed twice");
                self.crashed[idx] = true;
                self.world.log(format!("#crash p{p}"));
            }
            CrashTarget::Replica(r) => {
                let tick = self.world.tick;
                self.world.fabric.crash_replica(r, tick);
            }
        }
    }

    pub fn execute(&mut self, action: Action) {
        self.world.tick += 1;
        match action {
            Action::Step(a) => {
                let pid = self.actors[a].pid();
                let fires = pid.map_or(false, |p| {
                    self.planned_crash(CrashTarget::Process(p), self.steps_taken[a])
                });
                if fires {
                    self.apply_crash(CrashTarget::Process(pid.unwrap()));
                } else {
                    self.steps_taken[a] += 1;
                    let Kernel { world, actors, .. } = self;
                    actors[a].step(world);
                }
            }
            Action::DeliverLedger(m) => {
                let target = self.world.fabric.message_replica_target(m);
                let fires = target.map_or(false, |r| {
                    self.planned_crash(CrashTarget::Replica(r), self.replica_steps[r])
                });
                if fires {
                    self.apply_crash(CrashTarget::Replica(target.unwrap()));
                } else {
                    if let Some(r) = target {
                        self.replica_steps[r] += 1;
                    }
                    let tick = self.world.tick;
                    self.world.fabric.deliver(m, tick);
                }
            }
            Action::DeliverAb(a) => {
                let Kernel { world, actors, .. } = self;
                actors[a].deliver_ab(world);
            }
            Action::Crash(target) => self.apply_crash(target),
        }
        self.post_scan();
    }

    /// Emit the response for any append that just completed; this fires even
    /// when the appending process crashed after issuing the append.
    fn post_scan(&mut self) {
        let ready: Vec<usize> = self
            .world
            .pending_responds
            .iter()
            .enumerate()
            .filter(|(_, (call, _, _))| self.world.fabric.outcome(*call).is_some())
            .map(|(k, _)| k)
            .collect();
        assert!(ready.len() <= 1, "one append completion per action");
        if let Some(&k) = ready.first() {
            let (_, uid, result) = self.world.pending_responds.remove(k);
            self.world.emit_respond(uid, result);
        }
    }

    /// Crash a target immediately, outside any plan or enumeration. For
    /// targeted tests of specific crash points.
    pub fn crash_now(&mut self, target: CrashTarget) {
        self.world.tick += 1;
        self.apply_crash(target);
        self.post_scan();
    }

    /// Seeded run: pick uniformly among enabled actions until quiescence.
    pub fn run(&mut self, seed: u64) -> RunSummary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let actions = self.enabled_actions();
            if actions.is_empty() {
                break;
            }
            let pick = rng.gen_range(0..actions.len());
            self.execute(actions[pick].clone());
        }
        RunSummary {
            ticks: self.world.tick,
            deadlocked: self.deadlock_report(),
        }
    }

    /// Live protocol actors still waiting at quiescence.
    pub fn deadlock_report(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (a, actor) in self.actors.iter().enumerate() {
            if !self.crashed[a] && !actor.is_service() && !actor.done() {
                let pid = actor.pid().expect("protocol actors have a process id");
                out.push(format!("p{pid} stuck: {}", actor.describe_wait()));
            }
        }
        out
    }

    /// The raw observed history (no completion applied).
    pub fn raw_trace(&self) -> Result<HistoryTrace, HistoryError> {
        HistoryTrace::new(self.world.history.clone())
    }

    /// The history after the implementation's completion policy: ledger runs
    /// drop calls that never reached an append; broadcast runs complete every
    /// accepted call with its canonical result.
    pub fn completed_trace(&self) -> Result<HistoryTrace, HistoryError> {
        let raw = self.raw_trace()?;
        match self.impl_kind {
            ImplKind::Regular | ImplKind::Consensus => raw.complete(&CompletionPolicy::Drop),
            ImplKind::Total => {
                let mut map = BTreeMap::new();
                for uid in raw.dangling() {
                    if let Some(res) = self.world.ab.result_of(uid) {
                        map.insert(uid, res.clone());
                    }
                }
                // A crash at the broadcast step leaves neither an invocation
                // nor an accepted message, so every dangling call is in the
                // map.
                raw.complete(&CompletionPolicy::CompleteWith(map))
            }
        }
    }

    /// Wire rendering of the completed trace with debug lines interleaved.
    pub fn render_trace(&self) -> Result<String, HistoryError> {
        let trace = self.completed_trace()?;
        let mut debug = self.world.debug.clone();
        debug.extend(self.world.fabric.debug.iter().cloned());
        debug.sort_by_key(|(t, _)| *t);
        Ok(crate::wire::render_trace(&trace, &debug))
    }

    /// State fingerprint for exploration deduplication. Clocks, histories,
    /// and audit logs are excluded, so two states with equal fingerprints
    /// behave identically from here on only when no actor consults the
    /// clock; callers opt in accordingly.
    pub fn fingerprint(&self) -> u128 {
        let mut lo = DefaultHasher::new();
        lo.write_u64(0x517c_c1b7_2722_0a95);
        self.hash_state(&mut lo);
        let mut hi = DefaultHasher::new();
        hi.write_u64(0x6c62_272e_07bb_0142);
        self.hash_state(&mut hi);
        ((hi.finish() as u128) << 64) | lo.finish() as u128
    }

    fn hash_state<H: Hasher>(&self, h: &mut H) {
        self.actors.hash(h);
        self.crashed.hash(h);
        self.crashes_used.hash(h);
        self.world.registers.hash_state(h);
        self.world.fabric.hash_state(h);
        self.world.ab.hash(h);
        self.world.object.hash_state(h);
        self.world.pending_responds.hash(h);
    }

    /// Exhaustive schedule exploration by cloning at each branch. `check`
    /// runs on every quiescent state; its errors are collected together with
    /// the action path that produced them. With `dedup`, states already seen
    /// (by fingerprint) are not re-expanded.
    pub fn explore(
        &self,
        max_nodes: u64,
        dedup: bool,
        check: &mut dyn FnMut(&Kernel) -> Result<(), String>,
    ) -> ExploreReport {
        assert!(
            self.crash_plan.is_empty(),
            "exploration enumerates crashes; scripted crashes would be ignored"
        );
        let mut start = self.clone();
        start.enumerate_crashes = true;
        let mut report = ExploreReport {
            terminals: 0,
            nodes: 0,
            budget_exhausted: false,
            violations: Vec::new(),
        };
        let mut seen = BTreeSet::new();
        if dedup {
            seen.insert(start.fingerprint());
        }
        let mut path = Vec::new();
        explore_rec(&start, max_nodes, dedup, check, &mut report, &mut seen, &mut path);
        report
    }
}

fn render_action(k: &Kernel, a: &Action) -> String {
    match a {
        Action::Step(i) => match k.actors[*i].pid() {
            Some(p) => format!("s{p}"),
            None => format!("t{i}"),
        },
        Action::DeliverLedger(m) => format!("L{m}"),
        Action::DeliverAb(i) => format!("b{}", k.actors[*i].pid().expect("broadcast actor")),
        Action::Crash(t) => format!("x{t}"),
    }
}

fn explore_rec(
    k: &Kernel,
    max_nodes: u64,
    dedup: bool,
    check: &mut dyn FnMut(&Kernel) -> Result<(), String>,
    report: &mut ExploreReport,
    seen: &mut BTreeSet<u128>,
    path: &mut Vec<String>,
) {
    if report.budget_exhausted {
        return;
    }
    report.nodes += 1;
    if report.nodes > max_nodes {
        report.budget_exhausted = true;
        return;
    }
    let actions = k.enabled_actions();
    if actions.is_empty() {
        report.terminals += 1;
        if let Err(e) = check(k) {
            report.violations
                .push(format!("schedule [{}]: {e}", path.join(" ")));
        }
        return;
    }
    for a in actions {
        let mut next = k.clone();
        next.execute(a.clone());
        if dedup && !seen.insert(next.fingerprint()) {
            continue;
        }
        path.push(render_action(k, &a));
        explore_rec(&next, max_nodes, dedup, check, report, seen, path);
        path.pop();
        if report.budget_exhausted {
            return;
        }
    }
}
