//! Identifiers, simulated time and the envelope model shared by every protocol.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::rst::MatrixClock;

/// Index of a process in `[0, n)`. Ordering is index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// All process ids of an `n`-process system, in order.
    pub fn all(n: u32) -> impl Iterator<Item = ProcessId> {
        (0..n).map(ProcessId)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A point in simulated time, in ticks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

/// A non-negative span of simulated time, in ticks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimDuration(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Elapsed time since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn ticks(self) -> u64 {
        self.0
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        self.since(rhs)
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_add(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The `k`-th application message sent on the ordered pair `sender -> receiver`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairSeq {
    pub sender: ProcessId,
    pub receiver: ProcessId,
    pub k: u64,
}

/// The `n`-th application send event of `sender`. A multicast is a single
/// send event, so all of its copies share one `MsgId`. Control messages name
/// the application message they announce by this id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgId {
    pub sender: ProcessId,
    pub n: u64,
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sender, self.n)
    }
}

/// Non-empty set of multicast destinations.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupSet(BTreeSet<ProcessId>);

impl GroupSet {
    /// Returns `None` for an empty member list.
    pub fn new(members: impl IntoIterator<Item = ProcessId>) -> Option<Self> {
        let set: BTreeSet<_> = members.into_iter().collect();
        (!set.is_empty()).then_some(GroupSet(set))
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        self.0.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_set(&self) -> &BTreeSet<ProcessId> {
        &self.0
    }
}

/// Where an application send request goes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Destination {
    One(ProcessId),
    Group(GroupSet),
}

impl Destination {
    pub fn members(&self) -> Vec<ProcessId> {
        match self {
            Destination::One(p) => vec![*p],
            Destination::Group(g) => g.iter().collect(),
        }
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        match self {
            Destination::One(q) => *q == p,
            Destination::Group(g) => g.contains(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvelopeId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimerId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlTag {
    Sent,
    Delivered,
}

/// Second component of a control tuple: the receiver (or group) for a
/// sent-control, the original sender for a delivered-control.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subject {
    Process(ProcessId),
    Group(GroupSet),
}

impl Subject {
    pub fn contains(&self, p: ProcessId) -> bool {
        match self {
            Subject::Process(q) => *q == p,
            Subject::Group(g) => g.contains(p),
        }
    }
}

/// `<actor, subject, tag>` announcement about application message `msg`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlBody {
    pub tag: ControlTag,
    pub actor: ProcessId,
    pub subject: Subject,
    pub msg: MsgId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppBody {
    pub msg: MsgId,
    pub seq: PairSeq,
    pub payload: u64,
    /// RST piggyback, absent for the timeout-based protocols.
    pub clock: Option<MatrixClock>,
    /// Full destination set of a multicast.
    pub group: Option<GroupSet>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckBody {
    pub msg: MsgId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    App,
    Control,
    Ack,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    App(AppBody),
    Control(ControlBody),
    Ack(AckBody),
}

impl Body {
    pub fn kind(&self) -> EnvelopeKind {
        match self {
            Body::App(_) => EnvelopeKind::App,
            Body::Control(_) => EnvelopeKind::Control,
            Body::Ack(_) => EnvelopeKind::Ack,
        }
    }
}

/// An outgoing message as written by a handler, before the network stamps
/// it. The simulator fills in the per-pair sequence of application messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Draft {
    App {
        msg: MsgId,
        payload: u64,
        clock: Option<MatrixClock>,
        group: Option<GroupSet>,
    },
    Control(ControlBody),
    Ack(AckBody),
}

impl Draft {
    pub fn kind(&self) -> EnvelopeKind {
        match self {
            Draft::App { .. } => EnvelopeKind::App,
            Draft::Control(_) => EnvelopeKind::Control,
            Draft::Ack(_) => EnvelopeKind::Ack,
        }
    }
}

/// A unit in flight. `origin` is set by the simulator and cannot be forged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub id: EnvelopeId,
    pub origin: ProcessId,
    pub dest: ProcessId,
    pub body: Body,
    pub sent_at: SimTime,
    pub arrive_at: SimTime,
}

impl Envelope {
    pub fn kind(&self) -> EnvelopeKind {
        self.body.kind()
    }

    pub fn app(&self) -> Option<&AppBody> {
        match &self.body {
            Body::App(a) => Some(a),
            _ => None,
        }
    }

    pub fn control(&self) -> Option<&ControlBody> {
        match &self.body {
            Body::Control(c) => Some(c),
            _ => None,
        }
    }

    pub fn ack(&self) -> Option<&AckBody> {
        match &self.body {
            Body::Ack(a) => Some(a),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_rejects_empty() {
        assert!(GroupSet::new([]).is_none());
        let g = GroupSet::new([ProcessId(2), ProcessId(1), ProcessId(2)]).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.iter().collect::<Vec<_>>(), vec![ProcessId(1), ProcessId(2)]);
    }

    #[test]
    fn destination_serde_is_int_or_list() {
        let one: Destination = serde_json::from_str("3").unwrap();
        assert_eq!(one, Destination::One(ProcessId(3)));
        let many: Destination = serde_json::from_str("[1,2]").unwrap();
        assert_eq!(many.members(), vec![ProcessId(1), ProcessId(2)]);
    }

    #[test]
    fn time_arithmetic_saturates() {
        assert_eq!(SimTime(3) - SimTime(5), SimDuration(0));
        assert_eq!(SimTime(3) + SimDuration(4), SimTime(7));
    }
}
