//! Byzantine behaviours.
//!
//! A Byzantine process here is a correct protocol instance whose emissions
//! pass through a script: the script may rewrite timestamps, drop chosen
//! kinds of messages, go silent, or send hand-written messages at given
//! times. It can never forge the origin of an envelope or touch another
//! process's channels or timers; the network enforces that.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Protocol;
use crate::rst::MatrixClock;
use crate::simnet::{Ctx, EmissionFilter, Process};
use crate::types::{
    AckBody, ControlBody, ControlTag, Destination, Draft, Envelope, MsgId, ProcessId, SimTime,
    Subject, TimerId,
};

fn one() -> u64 {
    1
}

/// Kinds of emission a custom schedule can suppress.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionClass {
    App,
    Sent,
    Delivered,
    Ack,
}

impl EmissionClass {
    fn of(draft: &Draft) -> Self {
        match draft {
            Draft::App { .. } => EmissionClass::App,
            Draft::Control(c) if c.tag == ControlTag::Sent => EmissionClass::Sent,
            Draft::Control(_) => EmissionClass::Delivered,
            Draft::Ack(_) => EmissionClass::Ack,
        }
    }
}

/// Content of a hand-scheduled Byzantine message. `actor` defaults to the
/// Byzantine process itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForgedBody {
    App {
        #[serde(default)]
        payload: u64,
        /// RST timestamp, as rows.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clock: Option<Vec<Vec<u64>>>,
    },
    Sent {
        subject: Subject,
        msg: MsgId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        actor: Option<ProcessId>,
    },
    Delivered {
        subject: ProcessId,
        msg: MsgId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        actor: Option<ProcessId>,
    },
    Ack {
        msg: MsgId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledAction {
    pub at: SimTime,
    pub to: ProcessId,
    /// Claimed origin. Anything but the Byzantine process itself is refused
    /// by the network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<ProcessId>,
    pub body: ForgedBody,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "script", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryScript {
    /// Inflate `M[i][l]` by `d` on every outgoing timestamp, except in the
    /// receiver's own column.
    Boost {
        pairs: Vec<(ProcessId, ProcessId)>,
        #[serde(default = "one")]
        d: u64,
    },
    /// Deflate `M[i][k]` by `by` on every outgoing timestamp where the entry
    /// is large enough.
    Shrink {
        entries: Vec<(ProcessId, ProcessId)>,
        #[serde(default = "one")]
        by: u64,
    },
    /// Never acknowledge.
    SilentAck,
    /// Announce sends with sent-controls but never send the application
    /// message.
    PhantomSent,
    /// Deliver normally but never announce deliveries.
    WithholdDelivered,
    /// Stop all activity at `at`.
    CrashAt { at: SimTime },
    /// Never do anything.
    Silent,
    CustomSchedule {
        #[serde(default)]
        actions: Vec<ScheduledAction>,
        #[serde(default)]
        suppress: Vec<EmissionClass>,
    },
}

impl AdversaryScript {
    pub fn name(&self) -> &'static str {
        match self {
            AdversaryScript::Boost { .. } => "boost",
            AdversaryScript::Shrink { .. } => "shrink",
            AdversaryScript::SilentAck => "silent_ack",
            AdversaryScript::PhantomSent => "phantom_sent",
            AdversaryScript::WithholdDelivered => "withhold_delivered",
            AdversaryScript::CrashAt { .. } => "crash_at",
            AdversaryScript::Silent => "silent",
            AdversaryScript::CustomSchedule { .. } => "custom_schedule",
        }
    }

    /// Parameter problems, for configuration validation.
    pub fn problems(&self, n: u32, protocol: Protocol) -> Vec<String> {
        let mut out = Vec::new();
        let bad = |p: &ProcessId| p.0 >= n;
        match self {
            AdversaryScript::Boost { pairs, d } => {
                if *d == 0 {
                    out.push("boost amount must be positive".into());
                }
                if pairs.iter().any(|(i, l)| bad(i) || bad(l)) {
                    out.push("boost names an unknown process".into());
                }
                if protocol != Protocol::Rst {
                    out.push("boost only applies to rst timestamps".into());
                }
            }
            AdversaryScript::Shrink { entries, by } => {
                if *by == 0 {
                    out.push("shrink amount must be positive".into());
                }
                if entries.iter().any(|(i, k)| bad(i) || bad(k)) {
                    out.push("shrink names an unknown process".into());
                }
                if protocol != Protocol::Rst {
                    out.push("shrink only applies to rst timestamps".into());
                }
            }
            AdversaryScript::CustomSchedule { actions, .. } => {
                for a in actions {
                    if bad(&a.to) || a.origin.as_ref().is_some_and(bad) {
                        out.push(format!("action at {} names an unknown process", a.at));
                    }
                    if let ForgedBody::App { clock: Some(rows), .. } = &a.body {
                        if rows.len() != n as usize || rows.iter().any(|r| r.len() != n as usize) {
                            out.push(format!("action at {}: clock must be {n}x{n}", a.at));
                        }
                    }
                }
            }
            _ => {}
        }
        out
    }
}

impl fmt::Display for AdversaryScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdversaryScript::Boost { pairs, d } => write!(f, "boost {pairs:?} by {d}"),
            AdversaryScript::Shrink { entries, by } => write!(f, "shrink {entries:?} by {by}"),
            AdversaryScript::CrashAt { at } => write!(f, "crash_at {}", at.0),
            AdversaryScript::CustomSchedule { actions, suppress } => {
                write!(f, "custom_schedule ({} actions, suppress {suppress:?})", actions.len())
            }
            other => f.write_str(other.name()),
        }
    }
}

/// Returns `clock` with `M[i][l]` raised by `d`.
pub fn boost_attack(clock: &MatrixClock, (i, l): (ProcessId, ProcessId), d: u64) -> MatrixClock {
    assert!(d > 0, "a boost must be positive");
    let mut forged = clock.clone();
    forged.set(i, l, clock.get(i, l).saturating_add(d));
    forged
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("entry ({}, {}) is {value}, cannot lower it by {by}", .entry.0, .entry.1)]
pub struct ShrinkRefused {
    pub entry: (ProcessId, ProcessId),
    pub value: u64,
    pub by: u64,
}

/// Returns `clock` with `M[i][k]` lowered by `by`. Refuses when that would
/// go below zero.
pub fn shrink_attack(
    clock: &MatrixClock,
    (i, k): (ProcessId, ProcessId),
    by: u64,
) -> Result<MatrixClock, ShrinkRefused> {
    let value = clock.get(i, k);
    if by == 0 || value < by {
        return Err(ShrinkRefused { entry: (i, k), value, by });
    }
    let mut forged = clock.clone();
    forged.set(i, k, value - by);
    Ok(forged)
}

struct ScriptFilter {
    script: AdversaryScript,
}

impl EmissionFilter for ScriptFilter {
    fn filter(&mut self, _now: SimTime, dest: ProcessId, draft: &mut Draft) -> bool {
        match (&self.script, draft) {
            (AdversaryScript::Boost { pairs, d }, Draft::App { clock: Some(c), .. }) => {
                for &(i, l) in pairs {
                    if l != dest {
                        *c = boost_attack(c, (i, l), *d);
                    }
                }
                true
            }
            (AdversaryScript::Shrink { entries, by }, Draft::App { clock: Some(c), .. }) => {
                for &e in entries {
                    if let Ok(forged) = shrink_attack(c, e, *by) {
                        *c = forged;
                    }
                }
                true
            }
            (AdversaryScript::SilentAck, Draft::Ack(_)) => false,
            (AdversaryScript::PhantomSent, Draft::App { .. }) => false,
            (AdversaryScript::WithholdDelivered, Draft::Control(c)) => c.tag != ControlTag::Delivered,
            (AdversaryScript::Silent, _) => false,
            (AdversaryScript::CustomSchedule { suppress, .. }, d) => !suppress.contains(&EmissionClass::of(d)),
            _ => true,
        }
    }
}

// Wake tokens of scheduled actions live above those of the wrapped protocol.
const ACTION_TOKEN: u64 = 1 << 63;

/// A protocol instance running under an adversary script.
pub struct Byzantine {
    inner: Box<dyn Process>,
    filter: ScriptFilter,
    silent_from: Option<SimTime>,
}

impl Byzantine {
    pub fn new(inner: Box<dyn Process>, script: AdversaryScript) -> Self {
        let silent_from = match script {
            AdversaryScript::CrashAt { at } => Some(at),
            AdversaryScript::Silent => Some(SimTime::ZERO),
            _ => None,
        };
        Byzantine { inner, filter: ScriptFilter { script }, silent_from }
    }

    fn halted(&self, now: SimTime) -> bool {
        self.silent_from.is_some_and(|at| now >= at)
    }

    fn fire(&mut self, ctx: &mut Ctx<'_>, index: usize) {
        let AdversaryScript::CustomSchedule { actions, .. } = &self.filter.script else {
            return;
        };
        let a = actions[index].clone();
        let me = ctx.me();
        let draft = match a.body {
            ForgedBody::App { payload, clock } => Draft::App {
                msg: ctx.next_msg_id(),
                payload,
                clock: clock.map(|rows| MatrixClock::from_rows(&rows)),
                group: None,
            },
            ForgedBody::Sent { subject, msg, actor } => Draft::Control(ControlBody {
                tag: ControlTag::Sent,
                actor: actor.unwrap_or(me),
                subject,
                msg,
            }),
            ForgedBody::Delivered { subject, msg, actor } => Draft::Control(ControlBody {
                tag: ControlTag::Delivered,
                actor: actor.unwrap_or(me),
                subject: Subject::Process(subject),
                msg,
            }),
            ForgedBody::Ack { msg } => Draft::Ack(AckBody { msg }),
        };
        // Scheduled actions bypass the suppression list.
        ctx.send_as(a.origin.unwrap_or(me), a.to, draft);
    }
}

impl Process for Byzantine {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        if let AdversaryScript::CustomSchedule { actions, .. } = &self.filter.script {
            for (i, a) in actions.iter().enumerate() {
                ctx.wake_at(a.at, ACTION_TOKEN | i as u64);
            }
        }
        if self.halted(ctx.now()) {
            return;
        }
        let mut sub = ctx.with_filter(&mut self.filter);
        self.inner.on_start(&mut sub);
    }

    fn on_request(&mut self, ctx: &mut Ctx<'_>, dest: &Destination, payload: u64) {
        if self.halted(ctx.now()) {
            return;
        }
        let mut sub = ctx.with_filter(&mut self.filter);
        self.inner.on_request(&mut sub, dest, payload);
    }

    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, env: &Envelope) {
        if self.halted(ctx.now()) {
            return;
        }
        let mut sub = ctx.with_filter(&mut self.filter);
        self.inner.on_arrival(&mut sub, env);
    }

    fn on_timeout(&mut self, ctx: &mut Ctx<'_>, timer: TimerId) {
        if self.halted(ctx.now()) {
            return;
        }
        let mut sub = ctx.with_filter(&mut self.filter);
        self.inner.on_timeout(&mut sub, timer);
    }

    fn on_wake(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        if token & ACTION_TOKEN != 0 {
            return self.fire(ctx, (token & !ACTION_TOKEN) as usize);
        }
        if self.halted(ctx.now()) {
            return;
        }
        let mut sub = ctx.with_filter(&mut self.filter);
        self.inner.on_wake(&mut sub, token);
    }
}
