//! Channel Sync.
//!
//! Every process keeps one FIFO queue per source. A send is announced to the
//! other processes with a sent-control; a delivery is announced with a
//! delivered-control. When a delivered-control for message `m` reaches the
//! head of its queue it holds that queue until the sent-control for `m` has
//! reached the head of the sender's queue, or until its own timer
//! (`delta_r`) runs out. Because the sent-control sits behind everything
//! the sender sent earlier, anything that causally depends on `m` through
//! the deliverer waits for `m`'s predecessors.
//!
//! Controls are matched by the id of the application message they announce.
//! For multicasts the sent-control names the whole group and tracks which
//! members have not yet been heard from; once all have, its timer stops and
//! processing it deletes the matched delivered-controls. With
//! `hide_group`, each sent-control names only its recipient, has no timer
//! and deletes nothing; delivered-controls still wait for it to be
//! processed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::simnet::{Ctx, Process};
use crate::trace::EventKind;
use crate::types::{
    ControlBody, ControlTag, Destination, Draft, Envelope, GroupSet, MsgId, ProcessId,
    SimDuration, Subject, TimerId,
};

#[derive(Clone, Debug)]
pub struct CsConfig {
    pub delta_s: SimDuration,
    pub delta_r: SimDuration,
    pub hide_group: bool,
    /// With `delta_s = 0`, keep no timer for sent-controls at all.
    pub sent_timer_flag: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerSlot {
    None,
    Running(TimerId),
    Stopped,
    Expired,
}

#[derive(Clone, Debug)]
pub enum EntryKind {
    App,
    Sent {
        /// Members not yet matched with a delivered-control.
        remaining: BTreeSet<ProcessId>,
        /// Delivered-controls this sent-control deletes once processed.
        matched: BTreeSet<u64>,
    },
    Delivered {
        /// Set once a sent-control accounted for this entry.
        matched: bool,
    },
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub env: Envelope,
    pub msg: MsgId,
    pub kind: EntryKind,
    pub timer: TimerSlot,
}

pub struct CsProcess {
    me: ProcessId,
    cfg: CsConfig,
    next_entry: u64,
    entries: BTreeMap<u64, Entry>,
    queues: Vec<VecDeque<u64>>,
    /// The control popped from each queue and still waiting.
    popped: Vec<Option<u64>>,
    sent_by_msg: BTreeMap<MsgId, Vec<u64>>,
    delivered_by_msg: BTreeMap<MsgId, Vec<u64>>,
    timers: BTreeMap<TimerId, u64>,
    /// Messages whose sent-control has reached the head of its queue here.
    sent_popped: BTreeSet<MsgId>,
    delivered_here: BTreeSet<MsgId>,
}

impl CsProcess {
    pub fn new(me: ProcessId, n: u32, cfg: CsConfig) -> Self {
        let n = n as usize;
        CsProcess {
            me,
            cfg,
            next_entry: 0,
            entries: BTreeMap::new(),
            queues: vec![VecDeque::new(); n],
            popped: vec![None; n],
            sent_by_msg: BTreeMap::new(),
            delivered_by_msg: BTreeMap::new(),
            timers: BTreeMap::new(),
            sent_popped: BTreeSet::new(),
            delivered_here: BTreeSet::new(),
        }
    }

    /// Entries still queued or popped, per source, head first.
    pub fn queue_lengths(&self) -> Vec<usize> {
        self.queues
            .iter()
            .zip(&self.popped)
            .map(|(q, p)| q.len() + usize::from(p.is_some()))
            .collect()
    }

    fn send_app(&mut self, ctx: &mut Ctx<'_>, dest: &Destination, payload: u64) {
        let msg = ctx.next_msg_id();
        let me = self.me;
        let n = ctx.n();
        match dest {
            Destination::One(j) => {
                ctx.send(*j, Draft::App { msg, payload, clock: None, group: None });
                for x in ProcessId::all(n).filter(|x| *x != me && x != j) {
                    let body = ControlBody { tag: ControlTag::Sent, actor: me, subject: Subject::Process(*j), msg };
                    ctx.send(x, Draft::Control(body));
                }
            }
            Destination::Group(g) => {
                for j in g.iter() {
                    ctx.send(j, Draft::App { msg, payload, clock: None, group: Some(g.clone()) });
                }
                for x in ProcessId::all(n).filter(|x| *x != me) {
                    let subject = if self.cfg.hide_group { Subject::Process(x) } else { Subject::Group(g.clone()) };
                    let body = ControlBody { tag: ControlTag::Sent, actor: me, subject, msg };
                    ctx.send(x, Draft::Control(body));
                }
            }
        }
    }

    fn add_entry(&mut self, entry: Entry) -> u64 {
        let id = self.next_entry;
        self.next_entry += 1;
        let src = entry.env.origin.index();
        match entry.kind {
            EntryKind::Sent { .. } => self.sent_by_msg.entry(entry.msg).or_default().push(id),
            EntryKind::Delivered { .. } => self.delivered_by_msg.entry(entry.msg).or_default().push(id),
            EntryKind::App => {}
        }
        self.entries.insert(id, entry);
        self.queues[src].push_back(id);
        id
    }

    fn start_timer(&mut self, ctx: &mut Ctx<'_>, id: u64, dur: SimDuration) {
        let env = self.entries[&id].env.clone();
        let slot = if dur == SimDuration::ZERO {
            ctx.start_expired_timer(Some(&env));
            TimerSlot::Expired
        } else {
            let t = ctx.start_timer(Some(&env), dur);
            self.timers.insert(t, id);
            TimerSlot::Running(t)
        };
        self.entries.get_mut(&id).expect("live entry").timer = slot;
    }

    fn stop_timer(&mut self, ctx: &mut Ctx<'_>, id: u64) {
        let e = self.entries.get_mut(&id).expect("live entry");
        if let TimerSlot::Running(t) = e.timer {
            e.timer = TimerSlot::Stopped;
            ctx.stop_timer(t);
        }
    }

    fn live_sent(&self, msg: MsgId) -> Option<u64> {
        self.sent_by_msg.get(&msg).and_then(|v| v.first().copied())
    }

    fn on_control(&mut self, ctx: &mut Ctx<'_>, env: &Envelope, c: &ControlBody) {
        // A correct process only announces its own actions.
        let malformed = match c.tag {
            ControlTag::Sent => c.msg.sender != c.actor,
            ControlTag::Delivered => !matches!(c.subject, Subject::Process(s) if s == c.msg.sender),
        };
        if c.actor != env.origin {
            ctx.record(EventKind::Drop, Some(env), "control names an actor other than its origin");
            return;
        }
        if malformed {
            ctx.record(EventKind::Drop, Some(env), "malformed control");
            return;
        }
        ctx.record(EventKind::Push, Some(env), "");
        match c.tag {
            ControlTag::Sent => self.on_sent_control(ctx, env, c),
            ControlTag::Delivered => self.on_delivered_control(ctx, env, c),
        }
    }

    fn on_sent_control(&mut self, ctx: &mut Ctx<'_>, env: &Envelope, c: &ControlBody) {
        let hide = self.cfg.hide_group;
        let remaining: BTreeSet<ProcessId> = match &c.subject {
            _ if hide => BTreeSet::new(),
            Subject::Process(p) => [*p].into(),
            Subject::Group(g) => g.as_set().clone(),
        };
        let id = self.add_entry(Entry {
            env: env.clone(),
            msg: c.msg,
            kind: EntryKind::Sent { remaining: remaining.clone(), matched: BTreeSet::new() },
            timer: TimerSlot::None,
        });
        if hide {
            self.entries.get_mut(&id).expect("just added").timer = TimerSlot::Expired;
            // No group to account for; just hold every delivered-control
            // already here until this control is processed.
            for d in self.delivered_by_msg.get(&c.msg).cloned().unwrap_or_default() {
                self.stop_timer(ctx, d);
            }
            return;
        }
        if self.cfg.delta_s == SimDuration::ZERO && self.cfg.sent_timer_flag {
            self.entries.get_mut(&id).expect("just added").timer = TimerSlot::Expired;
        } else {
            self.start_timer(ctx, id, self.cfg.delta_s);
        }
        for x in remaining {
            if x == self.me {
                if self.delivered_here.contains(&c.msg) {
                    self.account(ctx, id, x, None);
                }
                continue;
            }
            let found = self.delivered_by_msg.get(&c.msg).and_then(|v| {
                v.iter().copied().find(|d| {
                    let e = &self.entries[d];
                    e.env.origin == x && matches!(e.kind, EntryKind::Delivered { matched: false })
                })
            });
            if let Some(d) = found {
                self.stop_timer(ctx, d);
                self.account(ctx, id, x, Some(d));
            }
        }
    }

    fn on_delivered_control(&mut self, ctx: &mut Ctx<'_>, env: &Envelope, c: &ControlBody) {
        let id = self.add_entry(Entry {
            env: env.clone(),
            msg: c.msg,
            kind: EntryKind::Delivered { matched: false },
            timer: TimerSlot::None,
        });
        self.start_timer(ctx, id, self.cfg.delta_r);
        let Some(s) = self.live_sent(c.msg) else { return };
        if self.cfg.hide_group {
            self.stop_timer(ctx, id);
            return;
        }
        let waiting = match &self.entries[&s].kind {
            EntryKind::Sent { remaining, .. } => remaining.contains(&c.actor),
            _ => false,
        };
        if waiting {
            self.stop_timer(ctx, id);
            self.account(ctx, s, c.actor, Some(id));
        }
    }

    /// Records that member `x` of sent-control `s` has been heard from.
    fn account(&mut self, ctx: &mut Ctx<'_>, s: u64, x: ProcessId, delivered: Option<u64>) {
        if let Some(d) = delivered {
            if let Some(EntryKind::Delivered { matched }) = self.entries.get_mut(&d).map(|e| &mut e.kind) {
                *matched = true;
            }
        }
        let EntryKind::Sent { remaining, matched } = &mut self.entries.get_mut(&s).expect("live entry").kind else {
            unreachable!("accounting against a sent-control");
        };
        remaining.remove(&x);
        matched.extend(delivered);
        if remaining.is_empty() {
            self.stop_timer(ctx, s);
        }
    }

    fn delete(&mut self, ctx: &mut Ctx<'_>, id: u64, why: &str) {
        let Some(e) = self.entries.remove(&id) else { return };
        let src = e.env.origin.index();
        if self.popped[src] == Some(id) {
            self.popped[src] = None;
        } else if let Some(pos) = self.queues[src].iter().position(|x| *x == id) {
            self.queues[src].remove(pos);
        }
        let index = match e.kind {
            EntryKind::Sent { .. } => &mut self.sent_by_msg,
            EntryKind::Delivered { .. } => &mut self.delivered_by_msg,
            EntryKind::App => unreachable!("application entries are delivered, not deleted"),
        };
        if let Some(v) = index.get_mut(&e.msg) {
            v.retain(|x| *x != id);
            if v.is_empty() {
                index.remove(&e.msg);
            }
        }
        if let TimerSlot::Running(t) = e.timer {
            ctx.stop_timer(t);
        }
        ctx.record(EventKind::Delete, Some(&e.env), why);
    }

    fn deliver(&mut self, ctx: &mut Ctx<'_>, env: &Envelope) {
        let app = env.app().expect("application entry");
        let msg = app.msg;
        let j = env.origin;
        ctx.deliver(env);
        self.delivered_here.insert(msg);
        let me = self.me;
        for x in ProcessId::all(ctx.n()).filter(|x| *x != me && *x != j) {
            let body = ControlBody { tag: ControlTag::Delivered, actor: me, subject: Subject::Process(j), msg };
            ctx.send(x, Draft::Control(body));
        }
        // A group member's own delivery counts toward a sent-control it
        // holds for the same multicast.
        if self.cfg.hide_group {
            return;
        }
        if let Some(s) = self.live_sent(msg) {
            if matches!(&self.entries[&s].kind, EntryKind::Sent { remaining, .. } if remaining.contains(&me)) {
                self.account(ctx, s, me, None);
            }
        }
    }

    /// Tries to finish the popped control `id`; true when it was deleted.
    fn try_finish(&mut self, ctx: &mut Ctx<'_>, id: u64) -> bool {
        let Some(e) = self.entries.get(&id) else { return true };
        match (&e.kind, e.timer) {
            (_, TimerSlot::Running(_)) => false,
            (EntryKind::Delivered { .. }, TimerSlot::Stopped) => {
                if self.sent_popped.contains(&e.msg) {
                    self.delete(ctx, id, "sent-control processed");
                    true
                } else {
                    false
                }
            }
            (EntryKind::Delivered { .. }, _) => {
                self.delete(ctx, id, "timed out");
                true
            }
            (EntryKind::Sent { matched, .. }, _) => {
                for d in matched.clone() {
                    self.delete(ctx, d, "matched by processed sent-control");
                }
                self.delete(ctx, id, "processed");
                true
            }
            (EntryKind::App, _) => unreachable!("application entries are never parked"),
        }
    }

    fn step_queue(&mut self, ctx: &mut Ctx<'_>, j: usize) -> bool {
        let mut progress = false;
        loop {
            if let Some(id) = self.popped[j] {
                if !self.try_finish(ctx, id) {
                    return progress;
                }
                self.popped[j] = None;
                progress = true;
                continue;
            }
            let Some(id) = self.queues[j].pop_front() else { return progress };
            progress = true;
            let e = &self.entries[&id];
            ctx.record(EventKind::Pop, Some(&e.env), "");
            match e.kind {
                EntryKind::App => {
                    let e = self.entries.remove(&id).expect("live entry");
                    self.deliver(ctx, &e.env);
                }
                EntryKind::Sent { .. } => {
                    self.sent_popped.insert(e.msg);
                    self.popped[j] = Some(id);
                }
                EntryKind::Delivered { .. } => self.popped[j] = Some(id),
            }
        }
    }

    /// Processes every queue, in process order, until none can advance.
    fn pump(&mut self, ctx: &mut Ctx<'_>) {
        loop {
            let mut progress = false;
            for j in 0..self.queues.len() {
                progress |= self.step_queue(ctx, j);
            }
            if !progress {
                break;
            }
        }
    }
}

impl Process for CsProcess {
    fn on_request(&mut self, ctx: &mut Ctx<'_>, dest: &Destination, payload: u64) {
        self.send_app(ctx, dest, payload);
    }

    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, env: &Envelope) {
        if let Some(c) = env.control() {
            self.on_control(ctx, env, &c.clone());
        } else if let Some(app) = env.app() {
            ctx.record(EventKind::Push, Some(env), "");
            let msg = app.msg;
            self.add_entry(Entry { env: env.clone(), msg, kind: EntryKind::App, timer: TimerSlot::None });
        } else {
            ctx.record(EventKind::Drop, Some(env), "unexpected ack");
            return;
        }
        self.pump(ctx);
    }

    fn on_timeout(&mut self, ctx: &mut Ctx<'_>, timer: TimerId) {
        if let Some(id) = self.timers.remove(&timer) {
            if let Some(e) = self.entries.get_mut(&id) {
                if e.timer == TimerSlot::Running(timer) {
                    e.timer = TimerSlot::Expired;
                }
            }
        }
        self.pump(ctx);
    }
}

/// Destination set helper for callers building multicasts.
pub fn group(members: impl IntoIterator<Item = u32>) -> Destination {
    Destination::Group(GroupSet::new(members.into_iter().map(ProcessId)).expect("non-empty group"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DelayModel, DelayRule, Protocol, ScenarioConfig};
    use crate::trace::Trace;
    use crate::types::{EnvelopeKind, SimTime};

    fn run(c: &ScenarioConfig) -> Trace {
        crate::scenario::run(c).unwrap()
    }

    fn base(n: u32, default: u64, rules: Vec<DelayRule>) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(n, Protocol::ChannelSync, 5, 300);
        c.delay_model = DelayModel::AdversarialSchedule { default, rules };
        c
    }

    fn rule(from: u32, to: u32, delay: u64) -> DelayRule {
        DelayRule { from: ProcessId(from), to: ProcessId(to), kind: None, delay }
    }

    fn deliveries(t: &Trace) -> Vec<(u64, u32, MsgId)> {
        t.of_kind(EventKind::Deliver)
            .map(|e| (e.time.0, e.process.0, e.envelope.as_ref().unwrap().msg.unwrap()))
            .collect()
    }

    fn sends(t: &Trace) -> Vec<(u32, EnvelopeKind, Option<ControlTag>)> {
        t.of_kind(EventKind::Send)
            .map(|e| {
                let env = e.envelope.as_ref().unwrap();
                (env.dest.0, env.kind, env.tag)
            })
            .collect()
    }

    fn mid(s: u32, n: u64) -> MsgId {
        MsgId { sender: ProcessId(s), n }
    }

    #[test]
    fn two_processes_single_message() {
        let mut c = base(2, 2, vec![]);
        c.send(0, 0, Destination::One(ProcessId(1)));
        let t = run(&c);
        let kinds: Vec<_> = t.iter().map(|e| (e.time.0, e.process.0, e.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (0, 0, EventKind::Send),
                (2, 1, EventKind::Arrive),
                (2, 1, EventKind::Push),
                (2, 1, EventKind::Pop),
                (2, 1, EventKind::Deliver),
            ]
        );
    }

    #[test]
    fn point_to_point_fan_out() {
        let mut c = base(3, 1, vec![]);
        c.send(0, 0, Destination::One(ProcessId(1)));
        let t = run(&c);
        assert_eq!(
            sends(&t),
            vec![
                (1, EnvelopeKind::App, None),
                (2, EnvelopeKind::Control, Some(ControlTag::Sent)),
                (2, EnvelopeKind::Control, Some(ControlTag::Delivered)),
            ]
        );
    }

    #[test]
    fn multicast_fan_out_counts() {
        let mut c = base(4, 1, vec![]);
        c.multicast = true;
        c.send(0, 0, group([1, 2]));
        let t = run(&c);
        let s = sends(&t);
        let by_p0: Vec<_> = s.iter().take(5).collect();
        assert_eq!(by_p0.iter().filter(|x| x.1 == EnvelopeKind::App).count(), 2);
        assert_eq!(by_p0.iter().filter(|x| x.2 == Some(ControlTag::Sent)).count(), 3);
        // Each member tells the two processes other than itself and p0.
        assert_eq!(s.iter().filter(|x| x.2 == Some(ControlTag::Delivered)).count(), 4);
        assert_eq!(deliveries(&t).len(), 2);
    }

    /// p0 -> p2 (slow), p0 -> p1, p1 delivers and sends m' to p2 (fast).
    /// Without the delivered-control from p1, p2 would deliver m' first.
    /// With delta_s > 0, p1 delivers m2 only once the sent-control queued
    /// ahead of it expires, so p1 sends right after that.
    fn relay(delta_s: u64) -> ScenarioConfig {
        let mut c = base(3, 1, vec![rule(0, 2, 10)]);
        c.delta = SimDuration(10);
        c.delta_s = SimDuration(delta_s);
        c.send(0, 0, Destination::One(ProcessId(2)));
        c.send(0, 0, Destination::One(ProcessId(1)));
        c.send(delta_s + 2, 1, Destination::One(ProcessId(2)));
        c
    }

    #[test]
    fn relayed_message_waits_for_its_predecessor() {
        for ds in [0, 2, 5] {
            let t = run(&relay(ds));
            let arrivals: Vec<_> = t
                .of_kind(EventKind::Arrive)
                .filter(|e| e.process == ProcessId(2) && e.envelope_kind() == Some(EnvelopeKind::App))
                .map(|e| e.envelope.as_ref().unwrap().msg.unwrap())
                .collect();
            assert_eq!(arrivals, vec![mid(1, 1), mid(0, 1)], "delta_s = {ds}");
            let at_p2: Vec<_> = deliveries(&t).into_iter().filter(|d| d.1 == 2).map(|d| d.2).collect();
            assert_eq!(at_p2, vec![mid(0, 1), mid(1, 1)], "delta_s = {ds}");
        }
    }

    #[test]
    fn orphan_delivered_control_times_out() {
        // p1 claims to have delivered a message p0 never sent.
        let mut c = base(3, 1, vec![]);
        c.byzantine.insert(
            ProcessId(1),
            crate::adversary::AdversaryScript::CustomSchedule {
                actions: vec![crate::adversary::ScheduledAction {
                    at: SimTime(0),
                    to: ProcessId(2),
                    origin: None,
                    body: crate::adversary::ForgedBody::Delivered { subject: ProcessId(0), msg: mid(0, 9), actor: None },
                }],
                suppress: vec![],
            },
        );
        c.send(1, 1, Destination::One(ProcessId(2)));
        let t = run(&c);
        // Control arrives at 1, times out at 6; the app behind it waits.
        let del = t.of_kind(EventKind::Delete).find(|e| e.process == ProcessId(2)).unwrap();
        assert_eq!((del.time.0, del.detail.as_str()), (6, "timed out"));
        assert_eq!(deliveries(&t), vec![(6, 2, mid(1, 1))]);
    }

    #[test]
    fn zero_sent_timer_flag_matches_zero_timer() {
        let mut a = relay(0);
        a.n = 4;
        a.seed = 3;
        a.delay_model = DelayModel::UniformRandom;
        for i in 0..30u64 {
            let s = (i % 4) as u32;
            a.send(i, s, Destination::One(ProcessId((s + 1 + (i as u32 % 3)) % 4)));
        }
        let mut b = a.clone();
        b.sent_timer_flag = true;
        let ta = run(&a);
        let tb = run(&b);
        assert_eq!(deliveries(&ta), deliveries(&tb));
        assert!(ta.of_kind(EventKind::Timeout).count() > tb.of_kind(EventKind::Timeout).count());
    }

    #[test]
    fn group_sent_control_stops_on_last_member() {
        // p0 multicasts to {1,2}; p3 hears the sent-control quickly and the
        // two delivered-controls at 2 and 5.
        let mut c = base(4, 1, vec![rule(2, 3, 4)]);
        c.multicast = true;
        c.delta_s = SimDuration(5);
        c.send(0, 0, group([1, 2]));
        let t = run(&c);
        let stops: Vec<_> = t
            .of_kind(EventKind::TimerStop)
            .filter(|e| e.process == ProcessId(3) && e.control_tag() == Some(ControlTag::Sent))
            .map(|e| e.time.0)
            .collect();
        assert_eq!(stops, vec![5]);
    }

    #[test]
    fn hidden_group_mode_has_no_sent_timers() {
        let mut c = base(4, 1, vec![]);
        c.multicast = true;
        c.mcast_hide_group = true;
        c.send(0, 0, group([1, 2]));
        let t = run(&c);
        assert!(t
            .of_kind(EventKind::TimerStart)
            .all(|e| e.control_tag() == Some(ControlTag::Delivered)));
        let subjects: Vec<_> = t
            .of_kind(EventKind::Send)
            .filter(|e| e.control_tag() == Some(ControlTag::Sent))
            .map(|e| e.envelope.as_ref().unwrap().subject.clone().unwrap())
            .collect();
        assert_eq!(subjects, (1..4).map(|x| Subject::Process(ProcessId(x))).collect::<Vec<_>>());
        assert_eq!(deliveries(&t).len(), 2);
    }

    #[test]
    fn forged_actor_is_dropped() {
        let mut c = base(3, 1, vec![]);
        let action = crate::adversary::ScheduledAction {
            at: SimTime(1),
            to: ProcessId(2),
            origin: None,
            body: crate::adversary::ForgedBody::Delivered { subject: ProcessId(1), msg: mid(1, 1), actor: Some(ProcessId(0)) },
        };
        let script = crate::adversary::AdversaryScript::CustomSchedule { actions: vec![action], suppress: vec![] };
        c.byzantine.insert(ProcessId(1), script);
        let t = run(&c);
        let drop = t.of_kind(EventKind::Drop).next().unwrap();
        assert_eq!(drop.process, ProcessId(2));
        assert!(drop.detail.contains("actor"));
    }
}
