//! Scenario configuration: loading from TOML, layering, and validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::adversary::AdversaryScript;
use crate::types::{Destination, EnvelopeKind, ProcessId, SimDuration, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Rst,
    SenderInhibition,
    ChannelSync,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Rst => "rst",
            Protocol::SenderInhibition => "sender_inhibition",
            Protocol::ChannelSync => "channel_sync",
        })
    }
}

/// One per-pair override of an adversarial delay schedule. `kind` restricts
/// the rule to one envelope kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayRule {
    pub from: ProcessId,
    pub to: ProcessId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EnvelopeKind>,
    pub delay: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    Fixed {
        delay: u64,
    },
    /// Uniform over `[min_delay, delta]`.
    UniformRandom,
    AdversarialSchedule {
        default: u64,
        #[serde(default)]
        rules: Vec<DelayRule>,
    },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::UniformRandom
    }
}

/// What a run is expected to show. Attack scenarios expect a violation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Clean,
    LivenessViolation,
    SafetyViolation,
}

/// Which message order the safety checker uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// Classical happens-before over all processes.
    Hb,
    /// Byzantine happens-before: chains through correct processes only.
    Bhb,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadItem {
    pub time: SimTime,
    pub sender: ProcessId,
    pub dest: Destination,
    #[serde(default)]
    pub payload: u64,
}

fn default_min_delay() -> SimDuration {
    SimDuration(1)
}

fn default_bounded() -> bool {
    true
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: u32,
    pub protocol: Protocol,
    #[serde(default)]
    pub multicast: bool,
    pub delta: SimDuration,
    #[serde(default)]
    pub delta_s: SimDuration,
    /// Delivered-control timer; `delta` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_r: Option<SimDuration>,
    pub horizon: SimTime,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay_model: DelayModel,
    /// Smallest transmission delay the network produces.
    #[serde(default = "default_min_delay")]
    pub min_delay: SimDuration,
    /// When set, every delay is clamped to at most `delta`.
    #[serde(default = "default_bounded")]
    pub bounded: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub mcast_hide_group: bool,
    /// With `delta_s = 0`, track sent-control matches with a flag instead of
    /// a zero-length timer.
    #[serde(default, skip_serializing_if = "is_false")]
    pub sent_timer_flag: bool,
    /// Sender-Inhibition: ticks between queueing and delivery.
    #[serde(default)]
    pub deliver_delay: SimDuration,
    #[serde(default)]
    pub expect: Expectation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<RelationKind>,
    #[serde(default)]
    pub workload: Vec<WorkloadItem>,
    #[serde(
        default,
        serialize_with = "serialize_byzantine",
        deserialize_with = "deserialize_byzantine"
    )]
    pub byzantine: BTreeMap<ProcessId, AdversaryScript>,
}

// TOML tables only have string keys.
fn serialize_byzantine<S: Serializer>(
    map: &BTreeMap<ProcessId, AdversaryScript>,
    s: S,
) -> Result<S::Ok, S::Error> {
    let keyed: BTreeMap<String, &AdversaryScript> =
        map.iter().map(|(p, a)| (p.0.to_string(), a)).collect();
    keyed.serialize(s)
}

fn deserialize_byzantine<'de, D: Deserializer<'de>>(
    d: D,
) -> Result<BTreeMap<ProcessId, AdversaryScript>, D::Error> {
    let keyed = BTreeMap::<String, AdversaryScript>::deserialize(d)?;
    keyed
        .into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<u32>()
                .map(|p| (ProcessId(p), v))
                .map_err(|_| serde::de::Error::custom(format!("byzantine key {k:?} is not a process index")))
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot encode configuration: {0}")]
    Encode(#[from] toml::ser::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    fn error(message: impl Into<String>) -> Self {
        Violation { severity: Severity::Error, message: message.into() }
    }

    fn warning(message: impl Into<String>) -> Self {
        Violation { severity: Severity::Warning, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level}: {}", self.message)
    }
}

impl ScenarioConfig {
    /// A config with no workload and library defaults for every optional knob.
    pub fn new(n: u32, protocol: Protocol, delta: u64, horizon: u64) -> Self {
        ScenarioConfig {
            n,
            protocol,
            multicast: false,
            delta: SimDuration(delta),
            delta_s: SimDuration::ZERO,
            delta_r: None,
            horizon: SimTime(horizon),
            seed: 0,
            delay_model: DelayModel::default(),
            min_delay: default_min_delay(),
            bounded: true,
            mcast_hide_group: false,
            sent_timer_flag: false,
            deliver_delay: SimDuration::ZERO,
            expect: Expectation::Clean,
            relation: None,
            workload: Vec::new(),
            byzantine: BTreeMap::new(),
        }
    }

    pub fn delta_r(&self) -> SimDuration {
        self.delta_r.unwrap_or(self.delta)
    }

    pub fn relation(&self) -> RelationKind {
        self.relation.unwrap_or(match self.protocol {
            Protocol::Rst => RelationKind::Hb,
            _ => RelationKind::Bhb,
        })
    }

    pub fn is_byzantine(&self, p: ProcessId) -> bool {
        self.byzantine.contains_key(&p)
    }

    pub fn correct(&self) -> BTreeSet<ProcessId> {
        ProcessId::all(self.n).filter(|p| !self.is_byzantine(*p)).collect()
    }

    pub fn workload_end(&self) -> SimTime {
        self.workload.iter().map(|w| w.time).max().unwrap_or(SimTime::ZERO)
    }

    pub fn send(&mut self, time: u64, sender: u32, dest: Destination) -> &mut Self {
        let payload = self.workload.len() as u64;
        self.workload.push(WorkloadItem {
            time: SimTime(time),
            sender: ProcessId(sender),
            dest,
            payload,
        });
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Applies the keys present in `overlay` on top of `self`. Tables merge
    /// key by key; every other value is replaced.
    pub fn overlay_toml(&self, overlay: &str) -> Result<Self, ConfigError> {
        let mut base = toml::Table::try_from(self)?;
        let top: toml::Table = toml::from_str(overlay)?;
        merge_tables(&mut base, top);
        Ok(base.try_into()?)
    }

    /// Every invariant breach, errors and warnings alike. An empty list
    /// means the scenario is runnable as is.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n;
        let valid = |p: ProcessId| p.0 < n;

        if n < 2 {
            out.push(Violation::error(format!("n = {n}: at least two processes are needed")));
        }
        if self.delta.0 < 1 {
            out.push(Violation::error("delta must be at least 1"));
        }
        if self.min_delay > self.delta {
            out.push(Violation::error(format!(
                "min_delay {} exceeds delta {}",
                self.min_delay, self.delta
            )));
        }
        if self.delta_r() < self.delta {
            out.push(Violation::warning(format!(
                "delta_r {} < delta {} violates the receive-timer premise: a delivered-control can time out before its sent-control arrives",
                self.delta_r(),
                self.delta
            )));
        }
        if self.byzantine.len() > n as usize {
            out.push(Violation::error("more Byzantine processes than processes"));
        }
        if self.sent_timer_flag && self.delta_s.0 != 0 {
            out.push(Violation::error("sent_timer_flag requires delta_s = 0"));
        }
        if self.protocol == Protocol::Rst && self.multicast {
            out.push(Violation::error("rst supports point-to-point sends only"));
        }
        if self.mcast_hide_group && !self.multicast {
            out.push(Violation::warning("mcast_hide_group has no effect without multicast"));
        }
        if let DelayModel::Fixed { delay } = self.delay_model {
            if self.bounded && delay > self.delta.0 {
                out.push(Violation::warning(format!(
                    "fixed delay {delay} exceeds delta and will be clamped"
                )));
            }
        }
        if let DelayModel::AdversarialSchedule { rules, .. } = &self.delay_model {
            for r in rules {
                if !valid(r.from) || !valid(r.to) {
                    out.push(Violation::error(format!(
                        "delay rule {} -> {} names an unknown process",
                        r.from, r.to
                    )));
                }
            }
        }

        for (i, w) in self.workload.iter().enumerate() {
            if !valid(w.sender) {
                out.push(Violation::error(format!("workload[{i}]: unknown sender {}", w.sender)));
            }
            match &w.dest {
                Destination::One(d) => {
                    if !valid(*d) {
                        out.push(Violation::error(format!("workload[{i}]: unknown destination {d}")));
                    }
                    if *d == w.sender {
                        out.push(Violation::error(format!("workload[{i}]: self-send by {d}")));
                    }
                }
                Destination::Group(g) => {
                    if !self.multicast {
                        out.push(Violation::error(format!(
                            "workload[{i}]: group destination needs multicast = true"
                        )));
                    }
                    if g.contains(w.sender) {
                        out.push(Violation::error(format!(
                            "workload[{i}]: sender {} is a member of its own group",
                            w.sender
                        )));
                    }
                    if g.iter().any(|p| !valid(p)) {
                        out.push(Violation::error(format!("workload[{i}]: group names an unknown process")));
                    }
                }
            }
        }

        if !self.workload.is_empty() {
            let needed = self.workload_end() + SimDuration(4 * self.delta.0);
            if self.horizon <= needed {
                out.push(Violation::error(format!(
                    "horizon {} must exceed last workload send + 4*delta ({})",
                    self.horizon.0, needed.0
                )));
            }
        }

        for (p, script) in &self.byzantine {
            if !valid(*p) {
                out.push(Violation::error(format!("byzantine entry for unknown process {p}")));
            }
            for problem in script.problems(n, self.protocol) {
                out.push(Violation::error(format!("byzantine {p}: {problem}")));
            }
        }
        out
    }

    pub fn errors(&self) -> Vec<Violation> {
        self.validate().into_iter().filter(Violation::is_error).collect()
    }
}

fn merge_tables(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_tables(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
