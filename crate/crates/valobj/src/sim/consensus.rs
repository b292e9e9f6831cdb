//! Consensus protocols built on a totally-ordered validated object that
//! admits a pair of invalidating operations. Two processes race their
//! operations through the object; which one the object accepts picks the
//! winner. An n-process wrapper lifts the two-process core to any n with at
//! most one crash.

use super::kernel::World;
use crate::checkers::ReductionWitness;
use crate::object::CentralizedObject;
use crate::registers::{Accessor, RegContent, RegName};
use crate::types::{ApplyResult, OperationRecord, ProcessId, Value};
use std::collections::BTreeMap;

fn write_plain(w: &mut World, pid: ProcessId, name: RegName, v: Value) {
    let tick = w.tick;
    w.registers
        .write(Accessor::Process(pid), name, RegContent::Plain(v), tick);
}

fn read_plain(w: &World, name: RegName) -> Option<Value> {
    match w.registers.read(name) {
        Some(RegContent::Plain(v)) => Some(v.clone()),
        Some(other) => panic!("{name} holds {other:?}, expected a plain value"),
        None => None,
    }
}

fn logged_result(w: &World, owner: ProcessId, slot: usize) -> Option<ApplyResult> {
    match w.registers.read(RegName::ResList(owner, slot)) {
        Some(RegContent::Res(r)) => Some(r.clone()),
        Some(other) => panic!("result slot holds {other:?}"),
        None => None,
    }
}

/// Direct-apply protocol for a mutually invalidating pair: write the
/// proposal, apply the own operation, decide own value on ACK; on NACK the
/// peer's operation won, so its proposal register is already set.
#[derive(Clone, Debug, Hash)]
pub struct MutualActor {
    pid: ProcessId,
    peer: ProcessId,
    input: Value,
    own_op: OperationRecord,
    phase: MutualPhase,
}

#[derive(Clone, Debug, Hash, PartialEq, Eq)]
enum MutualPhase {
    WriteCons,
    Apply,
    ReadPeer,
    Done { decision: Value },
}

impl MutualActor {
    pub fn new(pid: ProcessId, peer: ProcessId, input: Value, own_op: OperationRecord) -> Self {
        assert_eq!(own_op.uid.issuer, pid, "a process races its own operation");
        MutualActor {
            pid,
            peer,
            input,
            own_op,
            phase: MutualPhase::WriteCons,
        }
    }

    fn decision(&self) -> Option<&Value> {
        match &self.phase {
            MutualPhase::Done { decision } => Some(decision),
            _ => None,
        }
    }

    fn done(&self) -> bool {
        matches!(self.phase, MutualPhase::Done { .. })
    }

    fn runnable(&self, _w: &World) -> bool {
        !self.done()
    }

    fn describe_wait(&self) -> String {
        "runnable".into()
    }

    fn step(&mut self, w: &mut World) {
        match &self.phase {
            MutualPhase::WriteCons => {
                write_plain(w, self.pid, RegName::Cons(self.pid), self.input.clone());
                self.phase = MutualPhase::Apply;
            }
            MutualPhase::Apply => {
                let res = w
                    .object
                    .apply(self.own_op.clone(), self.pid)
                    .expect("each racing operation is applied once");
                w.log(format!(
                    "#p{} applies {}: {res}",
                    self.pid,
                    self.own_op.render_call()
                ));
                self.phase = if res.is_ack() {
                    w.log(format!("#p{} decides own value", self.pid));
                    MutualPhase::Done {
                        decision: self.input.clone(),
                    }
                } else {
                    MutualPhase::ReadPeer
                };
            }
            MutualPhase::ReadPeer => {
                // A rejection means the peer's operation is already in the
                // object's order, and the peer wrote its proposal before
                // applying, so the register must be set.
                let v = read_plain(w, RegName::Cons(self.peer))
                    .expect("rejected implies the winner's proposal is readable");
                w.log(format!("#p{} decides p{}'s value", self.pid, self.peer));
                self.phase = MutualPhase::Done { decision: v };
            }
            MutualPhase::Done { .. } => unreachable!("done actors are never scheduled"),
        }
    }
}

/// Logged-apply protocol, invalidated side: the operation goes through the
/// write-ahead slot so a crash after submission still produces a result for
/// the peer to observe.
#[derive(Clone, Debug, Hash)]
pub struct FragileActor {
    pid: ProcessId,
    peer: ProcessId,
    input: Value,
    own_op: OperationRecord,
    phase: FragilePhase,
}

#[derive(Clone, Debug, Hash, PartialEq, Eq)]
enum FragilePhase {
    WriteCons,
    LogOp,
    AwaitRes,
    ReadPeer,
    Done { decision: Value },
}

impl FragileActor {
    pub fn new(pid: ProcessId, peer: ProcessId, input: Value, own_op: OperationRecord) -> Self {
        assert_eq!(own_op.uid.issuer, pid, "a process races its own operation");
        FragileActor {
            pid,
            peer,
            input,
            own_op,
            phase: FragilePhase::WriteCons,
        }
    }

    fn decision(&self) -> Option<&Value> {
        match &self.phase {
            FragilePhase::Done { decision } => Some(decision),
            _ => None,
        }
    }

    fn done(&self) -> bool {
        matches!(self.phase, FragilePhase::Done { .. })
    }

    fn runnable(&self, w: &World) -> bool {
        match &self.phase {
            FragilePhase::AwaitRes => logged_result(w, self.pid, 0).is_some(),
            FragilePhase::Done { .. } => false,
            _ => true,
        }
    }

    fn describe_wait(&self) -> String {
        match &self.phase {
            FragilePhase::AwaitRes => "waiting for own logged result".into(),
            _ => "runnable".into(),
        }
    }

    fn step(&mut self, w: &mut World) {
        match &self.phase {
            FragilePhase::WriteCons => {
                write_plain(w, self.pid, RegName::Cons(self.pid), self.input.clone());
                self.phase = FragilePhase::LogOp;
            }
            FragilePhase::LogOp => {
                let tick = w.tick;
                w.registers.write(
                    Accessor::Process(self.pid),
                    RegName::OpList(self.pid, 0),
                    RegContent::Op(self.own_op.clone()),
                    tick,
                );
                w.log(format!(
                    "#p{} logs {}",
                    self.pid,
                    self.own_op.render_call()
                ));
                self.phase = FragilePhase::AwaitRes;
            }
            FragilePhase::AwaitRes => {
                let res = logged_result(w, self.pid, 0).expect("runnable implies result posted");
                self.phase = if res.is_ack() {
                    w.log(format!("#p{} decides own value", self.pid));
                    FragilePhase::Done {
                        decision: self.input.clone(),
                    }
                } else {
                    FragilePhase::ReadPeer
                };
            }
            FragilePhase::ReadPeer => {
                let v = read_plain(w, RegName::Cons(self.peer))
                    .expect("rejected implies the winner's proposal is readable");
                w.log(format!("#p{} decides p{}'s value", self.pid, self.peer));
                self.phase = FragilePhase::Done { decision: v };
            }
            FragilePhase::Done { .. } => unreachable!("done actors are never scheduled"),
        }
    }
}

/// Logged-apply protocol, never-invalidated side: its own operation always
/// lands, so it inspects the peer's submission slot to learn who won.
#[derive(Clone, Debug, Hash)]
pub struct RobustActor {
    pid: ProcessId,
    peer: ProcessId,
    input: Value,
    own_op: OperationRecord,
    /// The peer's racing operation, needed to certify that a late submission
    /// would be rejected.
    peer_op: OperationRecord,
    phase: RobustPhase,
}

#[derive(Clone, Debug, Hash, PartialEq, Eq)]
enum RobustPhase {
    WriteCons,
    LogOp,
    AwaitRes,
    CheckPeer,
    AwaitPeerRes,
    Done { decision: Value },
}

impl RobustActor {
    pub fn new(
        pid: ProcessId,
        peer: ProcessId,
        input: Value,
        own_op: OperationRecord,
        peer_op: OperationRecord,
    ) -> Self {
        assert_eq!(own_op.uid.issuer, pid, "a process races its own operation");
        assert_eq!(peer_op.uid.issuer, peer, "peer operation belongs to the peer");
        RobustActor {
            pid,
            peer,
            input,
            own_op,
            peer_op,
            phase: RobustPhase::WriteCons,
        }
    }

    fn decision(&self) -> Option<&Value> {
        match &self.phase {
            RobustPhase::Done { decision } => Some(decision),
            _ => None,
        }
    }

    fn done(&self) -> bool {
        matches!(self.phase, RobustPhase::Done { .. })
    }

    fn runnable(&self, w: &World) -> bool {
        match &self.phase {
            RobustPhase::AwaitRes => logged_result(w, self.pid, 0).is_some(),
            RobustPhase::AwaitPeerRes => logged_result(w, self.peer, 0).is_some(),
            RobustPhase::Done { .. } => false,
            _ => true,
        }
    }

    fn describe_wait(&self) -> String {
        match &self.phase {
            RobustPhase::AwaitRes => "waiting for own logged result".into(),
            RobustPhase::AwaitPeerRes => {
                format!("waiting for p{}'s logged result", self.peer)
            }
            _ => "runnable".into(),
        }
    }

    fn step(&mut self, w: &mut World) {
        match &self.phase {
            RobustPhase::WriteCons => {
                write_plain(w, self.pid, RegName::Cons(self.pid), self.input.clone());
                self.phase = RobustPhase::LogOp;
            }
            RobustPhase::LogOp => {
                let tick = w.tick;
                w.registers.write(
                    Accessor::Process(self.pid),
                    RegName::OpList(self.pid, 0),
                    RegContent::Op(self.own_op.clone()),
                    tick,
                );
                w.log(format!(
                    "#p{} logs {}",
                    self.pid,
                    self.own_op.render_call()
                ));
                self.phase = RobustPhase::AwaitRes;
            }
            RobustPhase::AwaitRes => {
                let res = logged_result(w, self.pid, 0).expect("runnable implies result posted");
                assert!(
                    res.is_ack(),
                    "the non-invalidated operation is accepted in every order"
                );
                self.phase = RobustPhase::CheckPeer;
            }
            RobustPhase::CheckPeer => {
                if w.registers.is_set(RegName::OpList(self.peer, 0)) {
                    w.log(format!(
                        "#p{} sees p{}'s submission, awaits its result",
                        self.pid, self.peer
                    ));
                    self.phase = RobustPhase::AwaitPeerRes;
                } else {
                    // The peer has not submitted. Its operation, if submitted
                    // from now on, runs against an order that already holds
                    // this process's operation and is rejected.
                    assert!(
                        !w.object
                            .spec()
                            .valid(w.object.state(), &self.peer_op, self.peer),
                        "a late peer submission must be invalid"
                    );
                    w.log(format!("#p{} decides own value", self.pid));
                    self.phase = RobustPhase::Done {
                        decision: self.input.clone(),
                    };
                }
            }
            RobustPhase::AwaitPeerRes => {
                let res =
                    logged_result(w, self.peer, 0).expect("runnable implies result posted");
                self.phase = if res.is_ack() {
                    // The peer's operation beat ours to the object; defer.
                    let v = read_plain(w, RegName::Cons(self.peer))
                        .expect("a submitted operation follows the proposal write");
                    w.log(format!("#p{} decides p{}'s value", self.pid, self.peer));
                    RobustPhase::Done { decision: v }
                } else {
                    w.log(format!("#p{} decides own value", self.pid));
                    RobustPhase::Done {
                        decision: self.input.clone(),
                    }
                };
            }
            RobustPhase::Done { .. } => unreachable!("done actors are never scheduled"),
        }
    }
}

/// The object-side worker that services one process's logged submissions:
/// applies each submitted operation and posts the result. It belongs to the
/// reliable object, so it never crashes.
#[derive(Clone, Debug, Hash)]
pub struct ObjectTaskActor {
    serves: ProcessId,
    slot: usize,
}

impl ObjectTaskActor {
    pub fn new(serves: ProcessId) -> Self {
        ObjectTaskActor { serves, slot: 0 }
    }

    pub fn serves(&self) -> ProcessId {
        self.serves
    }

    pub fn runnable(&self, w: &World) -> bool {
        w.registers.is_set(RegName::OpList(self.serves, self.slot))
            && !w.registers.is_set(RegName::ResList(self.serves, self.slot))
    }

    pub fn describe_wait(&self) -> String {
        format!("waiting for p{} slot {}", self.serves, self.slot)
    }

    pub fn step(&mut self, w: &mut World) {
        let op = match w.registers.read(RegName::OpList(self.serves, self.slot)) {
            Some(RegContent::Op(op)) => op.clone(),
            other => panic!("submission slot holds {other:?}"),
        };
        let res = w
            .object
            .apply(op.clone(), self.serves)
            .expect("each submission is applied once");
        w.log(format!(
            "#task for p{} applies {}: {res}",
            self.serves,
            op.render_call()
        ));
        let tick = w.tick;
        w.registers.write(
            Accessor::ObjectTask,
            RegName::ResList(self.serves, self.slot),
            RegContent::Res(res),
            tick,
        );
        self.slot += 1;
    }
}

/// Role a wrapper participant plays in the embedded two-process protocol.
#[derive(Clone, Copy, Debug, Hash, PartialEq, Eq)]
enum InnerRole {
    Mutual,
    Fragile,
    Robust,
}

/// A distinguished process in the n-process protocol: proposes, waits for
/// n-1 proposals, feeds the deterministically chosen one into the embedded
/// two-process protocol, and publishes the outcome.
#[derive(Clone, Debug, Hash)]
pub struct ParticipantActor {
    pid: ProcessId,
    n: usize,
    input: Value,
    role: InnerRole,
    peer: ProcessId,
    own_op: OperationRecord,
    peer_op: OperationRecord,
    phase: ParticipantPhase,
}

#[derive(Clone, Debug, Hash)]
enum ParticipantPhase {
    WriteProp,
    ScanProps,
    Inner(Box<ConsensusActor>),
    Publish { decision: Value },
    Done { decision: Value },
}

impl ParticipantActor {
    #[allow(clippy::too_many_arguments)]
    fn new(
        pid: ProcessId,
        n: usize,
        input: Value,
        role: InnerRole,
        peer: ProcessId,
        own_op: OperationRecord,
        peer_op: OperationRecord,
    ) -> Self {
        ParticipantActor {
            pid,
            n,
            input,
            role,
            peer,
            own_op,
            peer_op,
            phase: ParticipantPhase::WriteProp,
        }
    }

    fn filled_props(&self, w: &World) -> Vec<(ProcessId, Value)> {
        (1..=self.n as u32)
            .map(ProcessId)
            .filter_map(|k| read_plain(w, RegName::Prop(k)).map(|v| (k, v)))
            .collect()
    }

    fn decision(&self) -> Option<&Value> {
        match &self.phase {
            ParticipantPhase::Done { decision } => Some(decision),
            _ => None,
        }
    }

    fn done(&self) -> bool {
        matches!(self.phase, ParticipantPhase::Done { .. })
    }

    fn runnable(&self, w: &World) -> bool {
        match &self.phase {
            ParticipantPhase::WriteProp | ParticipantPhase::Publish { .. } => true,
            ParticipantPhase::ScanProps => self.filled_props(w).len() >= self.n - 1,
            ParticipantPhase::Inner(inner) => inner.runnable(w),
            ParticipantPhase::Done { .. } => false,
        }
    }

    fn describe_wait(&self) -> String {
        match &self.phase {
            ParticipantPhase::ScanProps => format!("waiting for {} proposals", self.n - 1),
            ParticipantPhase::Inner(inner) => inner.describe_wait(),
            _ => "runnable".into(),
        }
    }

    fn step(&mut self, w: &mut World) {
        match &mut self.phase {
            ParticipantPhase::WriteProp => {
                write_plain(w, self.pid, RegName::Prop(self.pid), self.input.clone());
                self.phase = ParticipantPhase::ScanProps;
            }
            ParticipantPhase::ScanProps => {
                let filled = self.filled_props(w);
                assert!(filled.len() >= self.n - 1, "runnable implies enough proposals");
                // Deterministic choice: the filled proposal with the lowest
                // writer id.
                let (from, chosen) = filled
                    .into_iter()
                    .min_by_key(|(k, _)| *k)
                    .expect("at least n-1 >= 1 proposals");
                w.log(format!("#p{} adopts p{from}'s proposal for the race", self.pid));
                let inner = match self.role {
                    InnerRole::Mutual => ConsensusActor::Mutual(MutualActor::new(
                        self.pid,
                        self.peer,
                        chosen,
                        self.own_op.clone(),
                    )),
                    InnerRole::Fragile => ConsensusActor::Fragile(FragileActor::new(
                        self.pid,
                        self.peer,
                        chosen,
                        self.own_op.clone(),
                    )),
                    InnerRole::Robust => ConsensusActor::Robust(RobustActor::new(
                        self.pid,
                        self.peer,
                        chosen,
                        self.own_op.clone(),
                        self.peer_op.clone(),
                    )),
                };
                self.phase = ParticipantPhase::Inner(Box::new(inner));
            }
            ParticipantPhase::Inner(inner) => {
                inner.step(w);
                if inner.done() {
                    let decision = inner
                        .decision()
                        .expect("a finished race carries its decision")
                        .clone();
                    self.phase = ParticipantPhase::Publish { decision };
                }
            }
            ParticipantPhase::Publish { decision } => {
                let d = decision.clone();
                write_plain(w, self.pid, RegName::Decision(self.pid), d.clone());
                w.log(format!("#p{} publishes the decision", self.pid));
                self.phase = ParticipantPhase::Done { decision: d };
            }
            ParticipantPhase::Done { .. } => unreachable!("done actors are never scheduled"),
        }
    }
}

/// A non-participant in the n-process protocol: proposes, then adopts the
/// first published decision.
#[derive(Clone, Debug, Hash)]
pub struct ProposerActor {
    pid: ProcessId,
    input: Value,
    participants: (ProcessId, ProcessId),
    phase: ProposerPhase,
}

#[derive(Clone, Debug, Hash)]
enum ProposerPhase {
    WriteProp,
    AwaitDecision,
    Done { decision: Value },
}

impl ProposerActor {
    fn new(pid: ProcessId, input: Value, participants: (ProcessId, ProcessId)) -> Self {
        ProposerActor {
            pid,
            input,
            participants,
            phase: ProposerPhase::WriteProp,
        }
    }

    fn published(&self, w: &World) -> Option<Value> {
        let (i, j) = self.participants;
        // Published decisions agree, so reading the lower id first is just a
        // deterministic convention.
        read_plain(w, RegName::Decision(i.min(j)))
            .or_else(|| read_plain(w, RegName::Decision(i.max(j))))
    }

    fn decision(&self) -> Option<&Value> {
        match &self.phase {
            ProposerPhase::Done { decision } => Some(decision),
            _ => None,
        }
    }

    fn done(&self) -> bool {
        matches!(self.phase, ProposerPhase::Done { .. })
    }

    fn runnable(&self, w: &World) -> bool {
        match &self.phase {
            ProposerPhase::WriteProp => true,
            ProposerPhase::AwaitDecision => self.published(w).is_some(),
            ProposerPhase::Done { .. } => false,
        }
    }

    fn describe_wait(&self) -> String {
        match &self.phase {
            ProposerPhase::AwaitDecision => "waiting for a published decision".into(),
            _ => "runnable".into(),
        }
    }

    fn step(&mut self, w: &mut World) {
        match &self.phase {
            ProposerPhase::WriteProp => {
                write_plain(w, self.pid, RegName::Prop(self.pid), self.input.clone());
                self.phase = ProposerPhase::AwaitDecision;
            }
            ProposerPhase::AwaitDecision => {
                let decision = self.published(w).expect("runnable implies published");
                w.log(format!("#p{} adopts the published decision", self.pid));
                self.phase = ProposerPhase::Done { decision };
            }
            ProposerPhase::Done { .. } => unreachable!("done actors are never scheduled"),
        }
    }
}

#[derive(Clone, Debug, Hash)]
pub enum ConsensusActor {
    Mutual(MutualActor),
    Fragile(FragileActor),
    Robust(RobustActor),
    Participant(ParticipantActor),
    Proposer(ProposerActor),
}

impl ConsensusActor {
    pub fn pid(&self) -> ProcessId {
        match self {
            ConsensusActor::Mutual(a) => a.pid,
            ConsensusActor::Fragile(a) => a.pid,
            ConsensusActor::Robust(a) => a.pid,
            ConsensusActor::Participant(a) => a.pid,
            ConsensusActor::Proposer(a) => a.pid,
        }
    }

    pub fn done(&self) -> bool {
        match self {
            ConsensusActor::Mutual(a) => a.done(),
            ConsensusActor::Fragile(a) => a.done(),
            ConsensusActor::Robust(a) => a.done(),
            ConsensusActor::Participant(a) => a.done(),
            ConsensusActor::Proposer(a) => a.done(),
        }
    }

    pub fn decision(&self) -> Option<&Value> {
        match self {
            ConsensusActor::Mutual(a) => a.decision(),
            ConsensusActor::Fragile(a) => a.decision(),
            ConsensusActor::Robust(a) => a.decision(),
            ConsensusActor::Participant(a) => a.decision(),
            ConsensusActor::Proposer(a) => a.decision(),
        }
    }

    pub fn runnable(&self, w: &World) -> bool {
        match self {
            ConsensusActor::Mutual(a) => a.runnable(w),
            ConsensusActor::Fragile(a) => a.runnable(w),
            ConsensusActor::Robust(a) => a.runnable(w),
            ConsensusActor::Participant(a) => a.runnable(w),
            ConsensusActor::Proposer(a) => a.runnable(w),
        }
    }

    pub fn describe_wait(&self) -> String {
        match self {
            ConsensusActor::Mutual(a) => a.describe_wait(),
            ConsensusActor::Fragile(a) => a.describe_wait(),
            ConsensusActor::Robust(a) => a.describe_wait(),
            ConsensusActor::Participant(a) => a.describe_wait(),
            ConsensusActor::Proposer(a) => a.describe_wait(),
        }
    }

    pub fn step(&mut self, w: &mut World) {
        match self {
            ConsensusActor::Mutual(a) => a.step(w),
            ConsensusActor::Fragile(a) => a.step(w),
            ConsensusActor::Robust(a) => a.step(w),
            ConsensusActor::Participant(a) => a.step(w),
            ConsensusActor::Proposer(a) => a.step(w),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsensusProtocol {
    /// Two-process direct-apply race; requires mutual invalidation.
    Mutual,
    /// Two-process logged-apply race; requires one-way invalidation.
    Oneway,
    /// n-process wrapper around whichever two-process race the witness
    /// supports.
    Wrapper { n: usize },
}

fn check_witness(
    spec: &crate::object::ObjectSpec,
    witness: &ReductionWitness,
) -> Result<(ProcessId, ProcessId), String> {
    let (i, j) = (witness.op_i.uid.issuer, witness.op_j.uid.issuer);
    if i == j {
        return Err("the racing operations must come from distinct processes".into());
    }
    let base = crate::ordered::OrderedOps::from_sequence(witness.prefix.iter().cloned())
        .map_err(|e| format!("witness prefix is not a sequence: {e}"))?;
    if !spec.valid(&base, &witness.op_i, i) || !spec.valid(&base, &witness.op_j, j) {
        return Err("both racing operations must be valid on the witness prefix".into());
    }
    let mut with_j = base.clone();
    with_j
        .append_to_sequence(witness.op_j.clone())
        .map_err(|e| format!("witness prefix rejects op_j: {e}"))?;
    if spec.valid(&with_j, &witness.op_i, i) {
        return Err("op_j must invalidate op_i".into());
    }
    let mut with_i = base;
    with_i
        .append_to_sequence(witness.op_i.clone())
        .map_err(|e| format!("witness prefix rejects op_i: {e}"))?;
    let mutual = !spec.valid(&with_i, &witness.op_j, j);
    if mutual != witness.mutual {
        return Err(format!(
            "witness says mutual={} but the validity functions say {mutual}",
            witness.mutual
        ));
    }
    Ok((i, j))
}

/// Build a kernel whose actors run the chosen consensus protocol against an
/// object preloaded with the witness prefix. `proposals` maps each process
/// to its input; two-process protocols take exactly the racing pair, the
/// wrapper takes contiguous ids 1..=n covering the pair.
pub fn build_consensus_kernel(
    spec: &crate::object::ObjectSpec,
    spec_name: &str,
    witness: &ReductionWitness,
    protocol: ConsensusProtocol,
    proposals: &BTreeMap<ProcessId, Value>,
    max_crashes: usize,
) -> Result<super::kernel::Kernel, String> {
    let (i, j) = check_witness(spec, witness)?;
    let mut object = CentralizedObject::new(spec.clone());
    for op in &witness.prefix {
        let issuer = op.uid.issuer;
        let res = object
            .apply(op.clone(), issuer)
            .map_err(|e| format!("preloading the witness prefix failed: {e}"))?;
        if !res.is_ack() {
            return Err(format!(
                "witness prefix operation {} is rejected during preload",
                op.render_call()
            ));
        }
    }

    let input = |k: ProcessId| -> Result<Value, String> {
        proposals
            .get(&k)
            .cloned()
            .ok_or_else(|| format!("no proposal for p{k}"))
    };

    let mut actors: Vec<super::kernel::Actor> = Vec::new();
    let mut needs_tasks = false;
    match protocol {
        ConsensusProtocol::Mutual => {
            if !witness.mutual {
                return Err("the direct race needs mutual invalidation".into());
            }
            if proposals.len() != 2 {
                return Err("the two-process race takes exactly two proposals".into());
            }
            actors.push(super::kernel::Actor::Consensus(ConsensusActor::Mutual(
                MutualActor::new(i, j, input(i)?, witness.op_i.clone()),
            )));
            actors.push(super::kernel::Actor::Consensus(ConsensusActor::Mutual(
                MutualActor::new(j, i, input(j)?, witness.op_j.clone()),
            )));
        }
        ConsensusProtocol::Oneway => {
            if witness.mutual {
                return Err("the logged race needs one-way invalidation".into());
            }
            if proposals.len() != 2 {
                return Err("the two-process race takes exactly two proposals".into());
            }
            actors.push(super::kernel::Actor::Consensus(ConsensusActor::Fragile(
                FragileActor::new(i, j, input(i)?, witness.op_i.clone()),
            )));
            actors.push(super::kernel::Actor::Consensus(ConsensusActor::Robust(
                RobustActor::new(j, i, input(j)?, witness.op_j.clone(), witness.op_i.clone()),
            )));
            needs_tasks = true;
        }
        ConsensusProtocol::Wrapper { n } => {
            if n < 3 {
                return Err("the wrapper needs at least three processes".into());
            }
            let ids: Vec<ProcessId> = (1..=n as u32).map(ProcessId).collect();
            if proposals.len() != n || ids.iter().any(|k| !proposals.contains_key(k)) {
                return Err(format!("the wrapper takes proposals for exactly p1..p{n}"));
            }
            if !ids.contains(&i) || !ids.contains(&j) {
                return Err("the racing pair must be among the n processes".into());
            }
            let (role_i, role_j) = if witness.mutual {
                (InnerRole::Mutual, InnerRole::Mutual)
            } else {
                needs_tasks = true;
                (InnerRole::Fragile, InnerRole::Robust)
            };
            for &k in &ids {
                let actor = if k == i {
                    ConsensusActor::Participant(ParticipantActor::new(
                        i,
                        n,
                        input(i)?,
                        role_i,
                        j,
                        witness.op_i.clone(),
                        witness.op_j.clone(),
                    ))
                } else if k == j {
                    ConsensusActor::Participant(ParticipantActor::new(
                        j,
                        n,
                        input(j)?,
                        role_j,
                        i,
                        witness.op_j.clone(),
                        witness.op_i.clone(),
                    ))
                } else {
                    ConsensusActor::Proposer(ProposerActor::new(k, input(k)?, (i, j)))
                };
                actors.push(super::kernel::Actor::Consensus(actor));
            }
        }
    }
    if needs_tasks {
        actors.push(super::kernel::Actor::ObjectTask(ObjectTaskActor::new(i)));
        actors.push(super::kernel::Actor::ObjectTask(ObjectTaskActor::new(j)));
    }

    let world = World {
        tick: 0,
        history: Vec::new(),
        fabric: crate::dlo::LedgerFabric::new(crate::dlo::Backend::Oracle, 0)
            .expect("the oracle backend always validates"),
        registers: crate::registers::RegisterBank::new(),
        ab: super::total::AbService::default(),
        object,
        spec_name: spec_name.to_string(),
        debug: Vec::new(),
        pending_responds: Vec::new(),
    };
    super::kernel::Kernel::new(
        world,
        actors,
        super::kernel::ImplKind::Consensus,
        max_crashes,
        Vec::new(),
    )
}

/// Terminal-state verdict: every live process decided, decisions agree, and
/// each decided value was proposed. A decision made before a crash still
/// counts for agreement; only the termination demand is waived for the dead.
pub fn consensus_verdict(
    kernel: &super::kernel::Kernel,
    proposals: &BTreeMap<ProcessId, Value>,
) -> Result<(), String> {
    let mut decided: Vec<(ProcessId, Value)> = Vec::new();
    for (idx, actor) in kernel.actors.iter().enumerate() {
        if actor.is_service() {
            continue;
        }
        let pid = actor.pid().expect("protocol actors have a process id");
        if !actor.done() {
            if kernel.crashed[idx] {
                continue;
            }
            return Err(format!(
                "p{pid} never decides: {}",
                actor.describe_wait()
            ));
        }
        let d = match actor {
            super::kernel::Actor::Consensus(c) => c.decision(),
            _ => None,
        };
        match d {
            Some(v) => decided.push((pid, v.clone())),
            None => return Err(format!("p{pid} finished without a decision")),
        }
    }
    for window in decided.windows(2) {
        if window[0].1 != window[1].1 {
            return Err(format!(
                "p{} decides {} but p{} decides {}",
                window[0].0, window[0].1, window[1].0, window[1].1
            ));
        }
    }
    let inputs: Vec<&Value> = proposals.values().collect();
    for (pid, v) in &decided {
        if !inputs.contains(&v) {
            return Err(format!("p{pid} decides {v}, which nobody proposed"));
        }
    }
    Ok(())
}

/// Decisions reached so far, keyed by process. Crashed deciders included.
pub fn decisions(kernel: &super::kernel::Kernel) -> BTreeMap<ProcessId, Value> {
    let mut out = BTreeMap::new();
    for actor in &kernel.actors {
        if let super::kernel::Actor::Consensus(c) = actor {
            if let (Some(pid), Some(v)) = (actor.pid(), c.decision()) {
                out.insert(pid, v.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::kernel::{Action, Actor, CrashTarget, Kernel};
    use super::super::scenario::reduction_witness_for;
    use super::*;
    use crate::apps::spec_by_name;

    fn proposals(pairs: &[(u32, &str)]) -> BTreeMap<ProcessId, Value> {
        pairs
            .iter()
            .map(|(p, v)| (ProcessId(*p), Value::Str(v.to_string())))
            .collect()
    }

    fn versioned_kernel(
        protocol: ConsensusProtocol,
        props: &BTreeMap<ProcessId, Value>,
        max_crashes: usize,
    ) -> Kernel {
        let entry = spec_by_name("versioned").unwrap();
        let oneway = matches!(protocol, ConsensusProtocol::Oneway);
        let witness = reduction_witness_for(&entry, oneway).unwrap();
        build_consensus_kernel(&entry.spec, "versioned", &witness, protocol, props, max_crashes)
            .unwrap()
    }

    fn drive(k: &mut Kernel, idx: usize) {
        assert!(
            k.enabled_actions().contains(&Action::Step(idx)),
            "actor {idx} must be runnable, enabled: {:?}",
            k.enabled_actions()
        );
        k.execute(Action::Step(idx));
    }

    fn decision_of(k: &Kernel, idx: usize) -> Value {
        match &k.actors[idx] {
            Actor::Consensus(c) => c.decision().cloned().expect("actor decided"),
            other => panic!("actor {idx} is {other:?}"),
        }
    }

    fn s(v: &str) -> Value {
        Value::Str(v.to_string())
    }

    #[test]
    fn direct_race_agrees_in_every_schedule_and_both_values_can_win() {
        let props = proposals(&[(1, "a"), (2, "b")]);
        let k = versioned_kernel(ConsensusProtocol::Mutual, &props, 0);
        let mut winners = std::collections::BTreeSet::new();
        let mut check = |t: &Kernel| {
            consensus_verdict(t, &props)?;
            winners.insert(decision_of(t, 0));
            Ok(())
        };
        let report = k.explore(100_000, true, &mut check);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(!report.budget_exhausted);
        assert_eq!(
            winners.into_iter().collect::<Vec<_>>(),
            vec![s("a"), s("b")],
            "either side can win the race"
        );
    }

    #[test]
    fn direct_race_loser_adopts_a_crashed_winners_value() {
        let props = proposals(&[(1, "a"), (2, "b")]);
        let mut k = versioned_kernel(ConsensusProtocol::Mutual, &props, 1);
        // p2 writes its proposal, applies its operation first, and dies.
        drive(&mut k, 1);
        drive(&mut k, 1);
        assert_eq!(decision_of(&k, 1), s("b"));
        k.crash_now(CrashTarget::Process(ProcessId(2)));
        let summary = k.run(3);
        assert!(summary.deadlocked.is_empty(), "{:?}", summary.deadlocked);
        // p1's apply is rejected, so it reads the dead winner's register.
        assert_eq!(decision_of(&k, 0), s("b"));
        consensus_verdict(&k, &props).unwrap();
    }

    // Actor layout for the logged race: 0 = invalidated side (p1),
    // 1 = surviving side (p2), 2 = object task for p1, 3 = for p2.

    #[test]
    fn logged_race_first_mover_wins_and_the_peer_defers() {
        let props = proposals(&[(1, "a"), (2, "b")]);
        let mut k = versioned_kernel(ConsensusProtocol::Oneway, &props, 0);
        drive(&mut k, 0); // p1 writes proposal
        drive(&mut k, 0); // p1 logs its operation
        drive(&mut k, 2); // task applies it: accepted
        drive(&mut k, 0); // p1 sees the ACK, decides own
        assert_eq!(decision_of(&k, 0), s("a"));
        drive(&mut k, 1); // p2 writes proposal
        drive(&mut k, 1); // p2 logs its operation
        drive(&mut k, 3); // task applies it: still accepted
        drive(&mut k, 1); // p2 sees the ACK
        drive(&mut k, 1); // p2 finds p1's logged op
        drive(&mut k, 1); // p1's result is an ACK, so p2 adopts p1's value
        assert_eq!(decision_of(&k, 1), s("a"));
        consensus_verdict(&k, &props).unwrap();
    }

    #[test]
    fn logged_race_late_submission_is_rejected_by_the_winners_trace() {
        let props = proposals(&[(1, "a"), (2, "b")]);
        let mut k = versioned_kernel(ConsensusProtocol::Oneway, &props, 0);
        drive(&mut k, 1); // p2 writes proposal
        drive(&mut k, 1); // p2 logs its operation
        drive(&mut k, 3); // task applies it: accepted
        drive(&mut k, 1); // p2 sees the ACK
        drive(&mut k, 1); // p1 never logged anything, so p2 decides own
        assert_eq!(decision_of(&k, 1), s("b"));
        drive(&mut k, 0); // p1 writes proposal
        drive(&mut k, 0); // p1 logs its operation
        drive(&mut k, 2); // task applies it: rejected, p2's write invalidated it
        drive(&mut k, 0); // p1 sees the NACK
        drive(&mut k, 0); // p1 reads the winner's proposal
        assert_eq!(decision_of(&k, 0), s("b"));
        consensus_verdict(&k, &props).unwrap();
    }

    #[test]
    fn logged_race_with_both_accepted_defers_to_the_earlier_log() {
        let props = proposals(&[(1, "a"), (2, "b")]);
        let mut k = versioned_kernel(ConsensusProtocol::Oneway, &props, 0);
        drive(&mut k, 0); // p1 writes proposal
        drive(&mut k, 0); // p1 logs its operation
        drive(&mut k, 2); // task applies it: accepted
        drive(&mut k, 1); // p2 writes proposal
        drive(&mut k, 1); // p2 logs its operation
        drive(&mut k, 3); // task applies it: accepted, the race is one-way
        drive(&mut k, 1); // p2 sees the ACK
        drive(&mut k, 1); // p2 finds p1's logged op
        drive(&mut k, 1); // p1's result is an ACK, so p2 adopts p1's value
        assert_eq!(decision_of(&k, 1), s("a"));
        drive(&mut k, 0); // p1 sees the ACK, decides own
        assert_eq!(decision_of(&k, 0), s("a"));
        consensus_verdict(&k, &props).unwrap();
    }

    #[test]
    fn logged_race_agrees_in_every_schedule() {
        let props = proposals(&[(1, "a"), (2, "b")]);
        let k = versioned_kernel(ConsensusProtocol::Oneway, &props, 0);
        let mut check = |t: &Kernel| consensus_verdict(t, &props);
        let report = k.explore(100_000, true, &mut check);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(!report.budget_exhausted);
    }

    #[test]
    fn wrapper_lifts_the_race_to_three_processes() {
        let props = proposals(&[(1, "a"), (2, "b"), (3, "c")]);
        let k = versioned_kernel(ConsensusProtocol::Wrapper { n: 3 }, &props, 0);
        let mut check = |t: &Kernel| consensus_verdict(t, &props);
        let report = k.explore(400_000, true, &mut check);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(!report.budget_exhausted);
        assert!(report.terminals > 0);
    }

    #[test]
    fn witness_sanity_is_enforced_at_build_time() {
        let entry = spec_by_name("versioned").unwrap();
        let mut witness = reduction_witness_for(&entry, false).unwrap();
        assert!(witness.mutual);
        witness.mutual = false;
        assert!(check_witness(&entry.spec, &witness).is_err());
    }
}
