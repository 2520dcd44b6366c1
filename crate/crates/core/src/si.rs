//! Sender-Inhibition.
//!
//! A process sends one message (or one multicast) at a time and holds a
//! lock until every destination has acknowledged it or `2 * delta` has
//! passed, whichever is first. Requests made while the lock is held wait in
//! a backlog. Receipt is independent of sending: every application message
//! is queued, acknowledged and delivered in arrival order.

use std::collections::{BTreeSet, VecDeque};

use crate::simnet::{Ctx, Process};
use crate::trace::EventKind;
use crate::types::{AckBody, Destination, Draft, Envelope, GroupSet, MsgId, ProcessId, SimDuration, TimerId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InFlight {
    pub msg: MsgId,
    pub awaiting: BTreeSet<ProcessId>,
    pub timer: TimerId,
}

pub struct SiProcess {
    timeout: SimDuration,
    deliver_delay: SimDuration,
    pub queue: VecDeque<Envelope>,
    pub in_flight: Option<InFlight>,
    pub backlog: VecDeque<(Destination, u64)>,
}

impl SiProcess {
    /// `delta` is the network bound; the lock timeout is twice that.
    pub fn new(delta: SimDuration, deliver_delay: SimDuration) -> Self {
        SiProcess {
            timeout: SimDuration(2 * delta.0),
            deliver_delay,
            queue: VecDeque::new(),
            in_flight: None,
            backlog: VecDeque::new(),
        }
    }

    pub fn lock_held(&self) -> bool {
        self.in_flight.is_some()
    }

    fn start_send(&mut self, ctx: &mut Ctx<'_>, dest: &Destination, payload: u64) {
        let msg = ctx.next_msg_id();
        let group = match dest {
            Destination::Group(g) => Some(g.clone()),
            Destination::One(_) => None,
        };
        let mut first = None;
        for d in dest.members() {
            let sent = ctx.send(d, Draft::App { msg, payload, clock: None, group: group.clone() });
            first = first.or(sent);
        }
        let timer = ctx.start_timer(first.as_ref(), self.timeout);
        self.in_flight = Some(InFlight { msg, awaiting: dest.members().into_iter().collect(), timer });
    }

    fn release(&mut self, ctx: &mut Ctx<'_>) {
        self.in_flight = None;
        if let Some((dest, payload)) = self.backlog.pop_front() {
            self.start_send(ctx, &dest, payload);
        }
    }

    fn deliver_next(&mut self, ctx: &mut Ctx<'_>) {
        if let Some(env) = self.queue.pop_front() {
            ctx.record(EventKind::Pop, Some(&env), "");
            ctx.deliver(&env);
        }
    }

    fn on_ack(&mut self, ctx: &mut Ctx<'_>, env: &Envelope, ack: &AckBody) {
        let Some(f) = self.in_flight.as_mut() else {
            ctx.record(EventKind::Drop, Some(env), "ack with no send in flight");
            return;
        };
        if f.msg != ack.msg || !f.awaiting.remove(&env.origin) {
            ctx.record(EventKind::Drop, Some(env), "stale or duplicate ack");
            return;
        }
        if f.awaiting.is_empty() {
            let timer = f.timer;
            ctx.stop_timer(timer);
            self.release(ctx);
        }
    }
}

impl Process for SiProcess {
    fn on_request(&mut self, ctx: &mut Ctx<'_>, dest: &Destination, payload: u64) {
        if self.lock_held() {
            self.backlog.push_back((dest.clone(), payload));
        } else {
            self.start_send(ctx, dest, payload);
        }
    }

    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, env: &Envelope) {
        if let Some(ack) = env.ack() {
            return self.on_ack(ctx, env, ack);
        }
        let Some(app) = env.app() else {
            ctx.record(EventKind::Drop, Some(env), "unexpected control message");
            return;
        };
        self.queue.push_back(env.clone());
        ctx.record(EventKind::Push, Some(env), "");
        ctx.send(env.origin, Draft::Ack(AckBody { msg: app.msg }));
        if self.deliver_delay == SimDuration::ZERO {
            self.deliver_next(ctx);
        } else {
            let at = ctx.now() + self.deliver_delay;
            ctx.wake_at(at, 0);
        }
    }

    fn on_timeout(&mut self, ctx: &mut Ctx<'_>, timer: TimerId) {
        if self.in_flight.as_ref().is_some_and(|f| f.timer == timer) {
            self.release(ctx);
        }
    }

    fn on_wake(&mut self, ctx: &mut Ctx<'_>, _token: u64) {
        self.deliver_next(ctx);
    }
}

/// Group destinations for a multicast request, excluding the sender.
pub fn group_of(members: impl IntoIterator<Item = ProcessId>) -> Option<Destination> {
    GroupSet::new(members).map(Destination::Group)
}
