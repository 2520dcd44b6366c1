//! Ground-truth checking of traces.
//!
//! Every check reads the simulator's trace, never a protocol's own state,
//! so a Byzantine process cannot influence a verdict by lying internally.

mod relation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use relation::{build_bhb, build_hb, CausalRelation};

use crate::config::{Protocol, RelationKind, ScenarioConfig};
use crate::trace::{EventKind, Trace, TraceError};
use crate::types::{ControlTag, EnvelopeKind, MsgId, ProcessId, SimDuration, SimTime};

/// `m` should have been delivered before `later` at `dest`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyViolation {
    pub earlier: MsgId,
    pub later: MsgId,
    pub dest: ProcessId,
    /// Position of `earlier` in `dest`'s delivery sequence, if delivered.
    pub earlier_position: Option<usize>,
    pub later_position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessViolation {
    pub sender: ProcessId,
    pub dest: ProcessId,
    /// Absent when the request never became a send.
    pub msg: Option<MsgId>,
    pub requested_or_sent_at: SimTime,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub msg: MsgId,
    pub process: ProcessId,
    pub delay: SimDuration,
    pub bound: SimDuration,
}

/// A delivered-control from a correct deliverer about a correct sender's
/// message, deleted before the matching sent-control was processed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrematureDelete {
    pub process: ProcessId,
    pub msg: MsgId,
    pub deliverer: ProcessId,
    pub at: SimTime,
}

/// Which delay bound held for a Channel Sync run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundHeld {
    /// `max(ds, dr + max(ds, dr))`.
    #[default]
    Statement,
    /// Only the looser `dr + dr + ds`.
    Looser,
    Neither,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub safety_violations: Vec<SafetyViolation>,
    pub liveness_violations: Vec<LivenessViolation>,
    pub bound_violations: Vec<BoundViolation>,
    pub premature_deletes: Vec<PrematureDelete>,
    pub max_observed_delay: Option<SimDuration>,
    pub bound: Option<SimDuration>,
    pub bound_held: Option<BoundHeld>,
    pub relation: Option<RelationKind>,
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        self.safety_violations.is_empty()
            && self.liveness_violations.is_empty()
            && self.bound_violations.is_empty()
            && self.premature_deletes.is_empty()
    }

    /// One JSON object per finding, then a summary object.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        #[serde(tag = "finding", rename_all = "snake_case")]
        enum Line<'a> {
            Safety(&'a SafetyViolation),
            Liveness(&'a LivenessViolation),
            Bound(&'a BoundViolation),
            PrematureDelete(&'a PrematureDelete),
            Summary {
                clean: bool,
                safety: usize,
                liveness: usize,
                bound: usize,
                premature_deletes: usize,
                max_observed_delay: Option<SimDuration>,
                delay_bound: Option<SimDuration>,
                bound_held: Option<BoundHeld>,
                relation: Option<RelationKind>,
                notes: &'a [String],
            },
        }
        let mut lines: Vec<Line<'_>> = Vec::new();
        lines.extend(self.safety_violations.iter().map(Line::Safety));
        lines.extend(self.liveness_violations.iter().map(Line::Liveness));
        lines.extend(self.bound_violations.iter().map(Line::Bound));
        lines.extend(self.premature_deletes.iter().map(Line::PrematureDelete));
        lines.push(Line::Summary {
            clean: self.is_clean(),
            safety: self.safety_violations.len(),
            liveness: self.liveness_violations.len(),
            bound: self.bound_violations.len(),
            premature_deletes: self.premature_deletes.len(),
            max_observed_delay: self.max_observed_delay,
            delay_bound: self.bound,
            bound_held: self.bound_held,
            relation: self.relation,
            notes: &self.notes,
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("verdicts serialize"));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.is_clean() { "clean" } else { "VIOLATIONS" };
        writeln!(f, "verdict: {status}")?;
        writeln!(f, "  safety violations:   {}", self.safety_violations.len())?;
        for v in self.safety_violations.iter().take(5) {
            let at = v.earlier_position.map_or("never".to_string(), |p| format!("#{p}"));
            writeln!(
                f,
                "    at {}: {} delivered #{} but its predecessor {} delivered {}",
                v.dest, v.later, v.later_position, v.earlier, at
            )?;
        }
        writeln!(f, "  liveness violations: {}", self.liveness_violations.len())?;
        for v in self.liveness_violations.iter().take(5) {
            let what = v.msg.map_or("request".to_string(), |m| m.to_string());
            writeln!(f, "    {what} {} -> {}: {}", v.sender, v.dest, v.reason)?;
        }
        if let Some(bound) = self.bound {
            let max = self.max_observed_delay.map_or(0, |d| d.0);
            writeln!(f, "  queue delay: max {max}, bound {bound}, violations {}", self.bound_violations.len())?;
        }
        if !self.premature_deletes.is_empty() {
            writeln!(f, "  delivered-controls deleted early: {}", self.premature_deletes.len())?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}

/// Every pair `m -> m'` with a common correct destination where `m'` was
/// delivered there without `m` having been delivered first.
pub fn check_safety(trace: &Trace, relation: &CausalRelation, correct: &BTreeSet<ProcessId>) -> Vec<SafetyViolation> {
    let f = relation::facts(trace);
    let mut out = Vec::new();
    for &dest in correct {
        let sequence: Vec<MsgId> = trace
            .of_kind(EventKind::Deliver)
            .filter(|e| e.process == dest)
            .filter_map(|e| e.envelope.as_ref().and_then(|env| env.msg))
            .collect();
        let position: BTreeMap<MsgId, usize> = sequence.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        for (later_position, later) in sequence.iter().enumerate() {
            for earlier in relation.past(*later) {
                let addressed = f.dests.get(&earlier).is_some_and(|d| d.contains(&dest));
                if !addressed {
                    continue;
                }
                let earlier_position = position.get(&earlier).copied();
                if earlier_position.is_none_or(|p| p > later_position) {
                    out.push(SafetyViolation { earlier, later: *later, dest, earlier_position, later_position });
                }
            }
        }
    }
    out
}

/// Copies sent between correct processes and never delivered, and
/// application requests of correct processes that never became sends.
pub fn check_liveness(trace: &Trace, cfg: &ScenarioConfig) -> Vec<LivenessViolation> {
    let correct = cfg.correct();
    let mut out = Vec::new();
    let delivered: BTreeSet<(ProcessId, MsgId)> = trace
        .of_kind(EventKind::Deliver)
        .filter_map(|e| e.envelope.as_ref().and_then(|env| env.msg).map(|m| (e.process, m)))
        .collect();
    let mut sends_by: BTreeMap<ProcessId, BTreeSet<MsgId>> = BTreeMap::new();
    for e in trace.of_kind(EventKind::Send) {
        let Some(env) = &e.envelope else { continue };
        if env.kind != EnvelopeKind::App {
            continue;
        }
        let Some(msg) = env.msg else { continue };
        sends_by.entry(e.process).or_default().insert(msg);
        if correct.contains(&env.origin) && correct.contains(&env.dest) && !delivered.contains(&(env.dest, msg)) {
            out.push(LivenessViolation {
                sender: env.origin,
                dest: env.dest,
                msg: Some(msg),
                requested_or_sent_at: e.time,
                reason: "not delivered by the horizon".into(),
            });
        }
    }
    for p in &correct {
        let mut requests: Vec<_> = cfg.workload.iter().filter(|w| w.sender == *p && w.time <= cfg.horizon).collect();
        requests.sort_by_key(|w| w.time);
        let sent = sends_by.get(p).map_or(0, BTreeSet::len);
        for w in requests.iter().skip(sent) {
            for dest in w.dest.members() {
                out.push(LivenessViolation {
                    sender: *p,
                    dest,
                    msg: None,
                    requested_or_sent_at: w.time,
                    reason: "requested but never sent by the horizon".into(),
                });
            }
        }
    }
    out
}

/// The queue-delay bound for Channel Sync, `max(ds, dr + max(ds, dr))`.
pub fn cs_bound(delta_s: SimDuration, delta_r: SimDuration) -> SimDuration {
    SimDuration(delta_s.0.max(delta_r.0 + delta_s.0.max(delta_r.0)))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DelayReport {
    pub violations: Vec<BoundViolation>,
    /// Push-to-delivery delay of every application message at a correct
    /// process.
    pub delays: Vec<(ProcessId, MsgId, SimDuration)>,
    pub max: Option<SimDuration>,
    pub bound: SimDuration,
    pub held: BoundHeld,
}

/// Push-to-delivery delay of application messages at correct processes,
/// against the Channel Sync bound. Messages still queued at `horizon` count
/// with their wait up to it.
pub fn check_cs_bound(
    trace: &Trace,
    correct: &BTreeSet<ProcessId>,
    delta_s: SimDuration,
    delta_r: SimDuration,
    horizon: SimTime,
) -> DelayReport {
    let bound = cs_bound(delta_s, delta_r);
    let looser = SimDuration(delta_r.0 + delta_r.0 + delta_s.0);
    let mut pushed: BTreeMap<(ProcessId, MsgId), SimTime> = BTreeMap::new();
    let mut report = DelayReport { bound, held: BoundHeld::Statement, ..Default::default() };
    for e in trace.iter().filter(|e| correct.contains(&e.process)) {
        let Some(env) = &e.envelope else { continue };
        let Some(msg) = env.msg else { continue };
        if env.kind != EnvelopeKind::App {
            continue;
        }
        match e.kind {
            EventKind::Push => {
                pushed.insert((e.process, msg), e.time);
            }
            EventKind::Deliver => {
                let Some(at) = pushed.remove(&(e.process, msg)) else { continue };
                let delay = e.time - at;
                report.delays.push((e.process, msg, delay));
                report.max = report.max.max(Some(delay));
                if delay > bound {
                    report.violations.push(BoundViolation { msg, process: e.process, delay, bound });
                }
            }
            _ => {}
        }
    }
    for ((process, msg), at) in pushed {
        let delay = horizon - at;
        if delay > bound {
            report.max = report.max.max(Some(delay));
            report.violations.push(BoundViolation { msg, process, delay, bound });
        }
    }
    if let Some(max) = report.max {
        report.held = if max <= bound {
            BoundHeld::Statement
        } else if max <= looser {
            BoundHeld::Looser
        } else {
            BoundHeld::Neither
        };
    }
    report
}

/// Delivered-controls deleted at a correct process before the matching
/// sent-control was popped there, restricted to correct senders and
/// deliverers.
pub fn check_control_order(trace: &Trace, correct: &BTreeSet<ProcessId>) -> Vec<PrematureDelete> {
    let mut popped: BTreeSet<(ProcessId, MsgId)> = BTreeSet::new();
    let mut out = Vec::new();
    for e in trace.iter().filter(|e| correct.contains(&e.process)) {
        let Some(env) = &e.envelope else { continue };
        let (Some(tag), Some(msg), Some(actor)) = (env.tag, env.msg, env.actor) else { continue };
        match (e.kind, tag) {
            (EventKind::Pop, ControlTag::Sent) => {
                popped.insert((e.process, msg));
            }
            (EventKind::Delete, ControlTag::Delivered) => {
                let relevant = correct.contains(&actor) && correct.contains(&msg.sender);
                if relevant && !popped.contains(&(e.process, msg)) {
                    out.push(PrematureDelete { process: e.process, msg, deliverer: actor, at: e.time });
                }
            }
            _ => {}
        }
    }
    out
}

/// The relation a configuration is judged by.
pub fn relation_for(cfg: &ScenarioConfig, trace: &Trace) -> Result<CausalRelation, TraceError> {
    match cfg.relation() {
        RelationKind::Hb => build_hb(trace),
        RelationKind::Bhb => build_bhb(trace, &cfg.byzantine.keys().copied().collect()),
    }
}

/// Runs every check that applies to the configuration's protocol.
pub fn check(cfg: &ScenarioConfig, trace: &Trace) -> Result<Verdict, TraceError> {
    let correct = cfg.correct();
    let relation = relation_for(cfg, trace)?;
    let mut v = Verdict {
        safety_violations: check_safety(trace, &relation, &correct),
        liveness_violations: check_liveness(trace, cfg),
        relation: Some(cfg.relation()),
        ..Default::default()
    };
    if cfg.relation() == RelationKind::Bhb && !cfg.byzantine.is_empty() {
        v.notes.push("messages from a Byzantine source are ordered by its recorded send events".into());
    }
    if cfg.protocol == Protocol::ChannelSync {
        let d = check_cs_bound(trace, &correct, cfg.delta_s, cfg.delta_r(), cfg.horizon);
        v.bound_violations = d.violations;
        v.max_observed_delay = d.max;
        v.bound = Some(d.bound);
        v.bound_held = Some(d.held);
        if d.held != BoundHeld::Statement {
            v.notes.push(format!("queue delay exceeded the bound; held: {:?}", d.held));
        }
        if cfg.delta_r() >= cfg.delta {
            v.premature_deletes = check_control_order(trace, &correct);
        }
    }
    Ok(v)
}

/// Swaps two causally ordered deliveries at one correct destination, with
/// no send by that destination in between, so the relation rebuilt from
/// the mutated trace is unchanged. `None` when no such pair exists.
pub fn plant_inversion<R: Rng>(
    trace: &Trace,
    relation: &CausalRelation,
    correct: &BTreeSet<ProcessId>,
    rng: &mut R,
) -> Option<Trace> {
    let f = relation::facts(trace);
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for &dest in correct {
        let events: Vec<usize> = trace
            .iter()
            .enumerate()
            .filter(|(_, e)| e.process == dest && e.envelope_kind() == Some(EnvelopeKind::App))
            .filter(|(_, e)| matches!(e.kind, EventKind::Deliver | EventKind::Send))
            .map(|(i, _)| i)
            .collect();
        for (x, &i) in events.iter().enumerate() {
            if !trace.events[i].is(EventKind::Deliver) {
                continue;
            }
            for &j in &events[x + 1..] {
                if trace.events[j].is(EventKind::Send) {
                    break;
                }
                let a = trace.events[i].envelope.as_ref().and_then(|e| e.msg).expect("deliveries name a message");
                let b = trace.events[j].envelope.as_ref().and_then(|e| e.msg).expect("deliveries name a message");
                let both_here = [a, b].iter().all(|m| f.dests.get(m).is_some_and(|d| d.contains(&dest)));
                if both_here && relation.precedes(a, b) {
                    candidates.push((i, j));
                }
            }
        }
    }
    let &(i, j) = candidates.choose(rng)?;
    let mut mutated = trace.clone();
    let a = mutated.events[i].envelope.take();
    let b = mutated.events[j].envelope.take();
    mutated.events[i].envelope = b;
    mutated.events[j].envelope = a;
    Some(mutated)
}
