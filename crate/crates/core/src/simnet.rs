//! Deterministic discrete-event engine.
//!
//! The engine owns the event queue, the per-pair FIFO channels, the timer
//! service and the trace. Protocol code sees it only through [`Ctx`], which
//! stamps every emission with the authenticated origin of the running
//! process.
//!
//! Events that fall on the same tick run in `(phase, counter)` order:
//! requests, arrivals and wake-ups share phase 0 and run in the order they
//! were scheduled; timeouts run in phase 1, after everything else on that
//! tick. An acknowledgement that arrives exactly when its timer expires is
//! therefore seen first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::panic::{self, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{DelayModel, ScenarioConfig, Violation};
use crate::trace::{EnvelopeInfo, EventKind, Trace, TraceEvent};
use crate::types::{
    AppBody, Body, Destination, Draft, Envelope, EnvelopeId, MsgId, PairSeq, ProcessId,
    SimDuration, SimTime, TimerId,
};

/// Per-process protocol logic. Handlers run to completion one at a time.
pub trait Process {
    /// Runs once at time zero, before any other event.
    fn on_start(&mut self, _ctx: &mut Ctx<'_>) {}

    /// The application asks to send `payload`.
    fn on_request(&mut self, ctx: &mut Ctx<'_>, dest: &Destination, payload: u64);

    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, env: &Envelope);

    fn on_timeout(&mut self, _ctx: &mut Ctx<'_>, _timer: TimerId) {}

    fn on_wake(&mut self, _ctx: &mut Ctx<'_>, _token: u64) {}
}

/// Rewrites or suppresses the emissions of a process. Used to turn a correct
/// protocol into a Byzantine one; returning `false` drops the draft without
/// a trace entry, as if it had never been sent.
pub trait EmissionFilter {
    fn filter(&mut self, now: SimTime, dest: ProcessId, draft: &mut Draft) -> bool;
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration rejected: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("run aborted at {at}: {reason}")]
    Aborted {
        at: SimTime,
        reason: String,
        trace: Trace,
    },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug)]
enum Event {
    Request { process: ProcessId, dest: Destination, payload: u64 },
    Arrival(Envelope),
    Timeout { owner: ProcessId, timer: TimerId },
    Wake { owner: ProcessId, token: u64 },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    phase: u8,
    counter: u64,
    event: Event,
}

impl Scheduled {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.time, self.phase, self.counter)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerState {
    Active,
    Stopped,
    Fired,
}

#[derive(Clone, Debug)]
struct TimerRecord {
    owner: ProcessId,
    subject: Option<EnvelopeInfo>,
    state: TimerState,
}

/// Channel and timer state for one run.
pub struct Network {
    n: u32,
    delta: SimDuration,
    min_delay: SimDuration,
    bounded: bool,
    horizon: SimTime,
    delay_model: DelayModel,
    rng: ChaCha8Rng,
    now: SimTime,
    queue: BinaryHeap<Scheduled>,
    counter: u64,
    next_envelope: u64,
    next_timer: u64,
    msg_counts: Vec<u64>,
    pair_seq: BTreeMap<(ProcessId, ProcessId), u64>,
    last_arrival: BTreeMap<(ProcessId, ProcessId), SimTime>,
    timers: BTreeMap<TimerId, TimerRecord>,
    /// Application envelopes that reached their destination and are not yet
    /// delivered.
    undelivered: BTreeMap<EnvelopeId, ProcessId>,
    trace: Vec<TraceEvent>,
}

impl Network {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Network {
            n: cfg.n,
            delta: cfg.delta,
            min_delay: cfg.min_delay,
            bounded: cfg.bounded,
            horizon: cfg.horizon,
            delay_model: cfg.delay_model.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: SimTime::ZERO,
            queue: BinaryHeap::new(),
            counter: 0,
            next_envelope: 0,
            next_timer: 0,
            msg_counts: vec![0; cfg.n as usize],
            pair_seq: BTreeMap::new(),
            last_arrival: BTreeMap::new(),
            timers: BTreeMap::new(),
            undelivered: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn timer_state(&self, id: TimerId) -> Option<TimerState> {
        self.timers.get(&id).map(|t| t.state)
    }

    fn schedule(&mut self, time: SimTime, phase: u8, event: Event) {
        self.counter += 1;
        self.queue.push(Scheduled { time, phase, counter: self.counter, event });
    }

    fn record(&mut self, process: ProcessId, kind: EventKind, env: Option<EnvelopeInfo>, detail: String) {
        self.trace.push(TraceEvent { time: self.now, process, kind, envelope: env, detail });
    }

    fn draw_delay(&mut self, from: ProcessId, to: ProcessId, draft: &Draft) -> SimDuration {
        let raw = match &self.delay_model {
            DelayModel::Fixed { delay } => *delay,
            DelayModel::UniformRandom => {
                let hi = self.delta.0.max(self.min_delay.0);
                self.rng.random_range(self.min_delay.0..=hi)
            }
            DelayModel::AdversarialSchedule { default, rules } => rules
                .iter()
                .find(|r| r.from == from && r.to == to && r.kind.is_none_or(|k| k == draft.kind()))
                .map_or(*default, |r| r.delay),
        };
        let mut d = raw.max(self.min_delay.0);
        if self.bounded {
            d = d.min(self.delta.0);
        }
        SimDuration(d)
    }

    fn emit(&mut self, from: ProcessId, dest: ProcessId, draft: Draft) -> Option<Envelope> {
        let info_kind = draft.kind();
        if dest.0 >= self.n || dest == from {
            self.record(from, EventKind::Drop, None, format!("{info_kind:?} to invalid destination {dest}"));
            return None;
        }
        let delay = self.draw_delay(from, dest, &draft);
        let body = match draft {
            Draft::App { msg, payload, clock, group } => {
                if msg.sender != from {
                    self.record(from, EventKind::Drop, None, format!("application message {msg} claims another sender"));
                    return None;
                }
                let k = self.pair_seq.entry((from, dest)).or_insert(0);
                *k += 1;
                let seq = PairSeq { sender: from, receiver: dest, k: *k };
                Body::App(AppBody { msg, seq, payload, clock, group })
            }
            Draft::Control(c) => Body::Control(c),
            Draft::Ack(a) => Body::Ack(a),
        };
        let earliest = self.last_arrival.get(&(from, dest)).copied().unwrap_or(SimTime::ZERO);
        let arrive_at = (self.now + delay).max(earliest);
        self.last_arrival.insert((from, dest), arrive_at);
        let env = Envelope {
            id: EnvelopeId(self.next_envelope),
            origin: from,
            dest,
            body,
            sent_at: self.now,
            arrive_at,
        };
        self.next_envelope += 1;
        let kind = if matches!(env.body, Body::Ack(_)) { EventKind::AckSent } else { EventKind::Send };
        let detail = format!("arrives t={}", arrive_at.0);
        self.record(from, kind, Some(EnvelopeInfo::from(&env)), detail);
        self.schedule(arrive_at, 0, Event::Arrival(env.clone()));
        Some(env)
    }
}

/// A process's handle on the network while one of its handlers runs.
pub struct Ctx<'a> {
    net: &'a mut Network,
    me: ProcessId,
    filter: Option<&'a mut (dyn EmissionFilter + 'a)>,
}

impl<'a> Ctx<'a> {
    pub fn new(net: &'a mut Network, me: ProcessId) -> Self {
        Ctx { net, me, filter: None }
    }

    /// Reborrows this context with every emission routed through `filter`.
    pub fn with_filter<'b>(&'b mut self, filter: &'b mut (dyn EmissionFilter + 'b)) -> Ctx<'b> {
        Ctx { net: &mut *self.net, me: self.me, filter: Some(filter) }
    }

    pub fn now(&self) -> SimTime {
        self.net.now
    }

    pub fn me(&self) -> ProcessId {
        self.me
    }

    pub fn n(&self) -> u32 {
        self.net.n
    }

    /// Ground truth so far. Only adversaries are expected to look.
    pub fn trace(&self) -> &[TraceEvent] {
        &self.net.trace
    }

    /// Allocates the id of this process's next application send event.
    pub fn next_msg_id(&mut self) -> MsgId {
        let c = &mut self.net.msg_counts[self.me.index()];
        *c += 1;
        MsgId { sender: self.me, n: *c }
    }

    pub fn send(&mut self, dest: ProcessId, mut draft: Draft) -> Option<Envelope> {
        if let Some(f) = self.filter.as_deref_mut() {
            if !f.filter(self.net.now, dest, &mut draft) {
                return None;
            }
        }
        self.net.emit(self.me, dest, draft)
    }

    /// An attempt to send under another process's name. Channels are
    /// authenticated, so the network refuses and records the attempt.
    pub fn send_as(&mut self, claimed: ProcessId, dest: ProcessId, draft: Draft) -> Option<Envelope> {
        if claimed == self.me {
            return self.send(dest, draft);
        }
        let me = self.me;
        self.net.record(
            me,
            EventKind::Drop,
            None,
            format!("{me} tried to send {:?} to {dest} as {claimed}", draft.kind()),
        );
        None
    }

    /// Hands an arrived application envelope to the application.
    pub fn deliver(&mut self, env: &Envelope) {
        match self.net.undelivered.get(&env.id) {
            Some(&p) if p == self.me && env.app().is_some() => {
                self.net.undelivered.remove(&env.id);
                self.record(EventKind::Deliver, Some(env), String::new());
            }
            _ => self.fail(format!(
                "{} delivered envelope {} which is not an undelivered arrival here",
                self.me, env.id.0
            )),
        }
    }

    pub fn record(&mut self, kind: EventKind, env: Option<&Envelope>, detail: impl Into<String>) {
        let me = self.me;
        self.net.record(me, kind, env.map(EnvelopeInfo::from), detail.into());
    }

    /// Starts a timer that fires `dur` ticks from now unless stopped.
    pub fn start_timer(&mut self, subject: Option<&Envelope>, dur: SimDuration) -> TimerId {
        let id = self.new_timer(subject, TimerState::Active);
        let at = self.net.now + dur;
        self.record_timer(id, EventKind::TimerStart, format!("timer {} fires t={}", id.0, at.0));
        let owner = self.me;
        self.net.schedule(at, 1, Event::Timeout { owner, timer: id });
        id
    }

    /// Starts and immediately expires a zero-length timer, without a
    /// callback. The trace shows both the start and the timeout.
    pub fn start_expired_timer(&mut self, subject: Option<&Envelope>) -> TimerId {
        let id = self.new_timer(subject, TimerState::Fired);
        let now = self.net.now.0;
        self.record_timer(id, EventKind::TimerStart, format!("timer {} fires t={now}", id.0));
        self.record_timer(id, EventKind::Timeout, format!("timer {}", id.0));
        id
    }

    /// Idempotent. Stopping a timer that already fired changes nothing but
    /// is noted in the trace.
    pub fn stop_timer(&mut self, id: TimerId) {
        let Some(t) = self.net.timers.get(&id) else {
            self.fail(format!("unknown timer {}", id.0));
        };
        if t.owner != self.me {
            self.fail(format!("{} stopped a timer owned by {}", self.me, t.owner));
        }
        match t.state {
            TimerState::Active => {
                self.net.timers.get_mut(&id).expect("checked above").state = TimerState::Stopped;
                self.record_timer(id, EventKind::TimerStop, format!("timer {}", id.0));
            }
            TimerState::Stopped => {}
            TimerState::Fired => {
                self.record_timer(id, EventKind::TimerStop, format!("timer {} already fired", id.0));
            }
        }
    }

    pub fn timer_state(&self, id: TimerId) -> TimerState {
        self.net.timers.get(&id).map_or(TimerState::Fired, |t| t.state)
    }

    /// Schedules `on_wake(token)` for this process at `at` (not before now).
    pub fn wake_at(&mut self, at: SimTime, token: u64) {
        let at = at.max(self.net.now);
        let owner = self.me;
        self.net.schedule(at, 0, Event::Wake { owner, token });
    }

    /// Aborts the run. Reserved for broken invariants.
    pub fn fail(&self, reason: impl Into<String>) -> ! {
        panic!("{}", reason.into())
    }

    fn new_timer(&mut self, subject: Option<&Envelope>, state: TimerState) -> TimerId {
        let id = TimerId(self.net.next_timer);
        self.net.next_timer += 1;
        self.net.timers.insert(
            id,
            TimerRecord { owner: self.me, subject: subject.map(EnvelopeInfo::from), state },
        );
        id
    }

    fn record_timer(&mut self, id: TimerId, kind: EventKind, detail: String) {
        let subject = self.net.timers[&id].subject.clone();
        let me = self.me;
        self.net.record(me, kind, subject, detail);
    }
}

/// Runs `processes` (indexed by process id) over the scenario's workload
/// until the horizon.
pub fn simulate(cfg: &ScenarioConfig, processes: Vec<Box<dyn Process>>) -> Result<Trace, SimError> {
    let errors: Vec<_> = cfg.errors();
    if !errors.is_empty() {
        return Err(SimError::Invalid(errors));
    }
    assert_eq!(processes.len(), cfg.n as usize, "one process per id");
    let mut net = Network::new(cfg);
    let mut procs = processes;
    let mut order: Vec<_> = cfg.workload.iter().collect();
    order.sort_by_key(|w| w.time);
    for w in order {
        net.schedule(
            w.time,
            0,
            Event::Request { process: w.sender, dest: w.dest.clone(), payload: w.payload },
        );
    }

    let result = panic::catch_unwind(AssertUnwindSafe(|| drive(&mut net, &mut procs)));

    match result {
        Ok(()) => Ok(Trace::new(net.trace)),
        Err(payload) => {
            let reason = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "handler panicked".into());
            Err(SimError::Aborted { at: net.now, reason, trace: Trace::new(net.trace) })
        }
    }
}

fn drive(net: &mut Network, procs: &mut [Box<dyn Process>]) {
    for (i, p) in procs.iter_mut().enumerate() {
        let mut ctx = Ctx::new(net, ProcessId(i as u32));
        p.on_start(&mut ctx);
    }
    while let Some(next) = net.queue.pop() {
        if next.time > net.horizon {
            break;
        }
        net.now = next.time;
        match next.event {
            Event::Request { process, dest, payload } => {
                let mut ctx = Ctx::new(net, process);
                procs[process.index()].on_request(&mut ctx, &dest, payload);
            }
            Event::Arrival(env) => {
                let dest = env.dest;
                net.record(dest, EventKind::Arrive, Some(EnvelopeInfo::from(&env)), String::new());
                if env.app().is_some() {
                    net.undelivered.insert(env.id, dest);
                }
                let mut ctx = Ctx::new(net, dest);
                procs[dest.index()].on_arrival(&mut ctx, &env);
            }
            Event::Timeout { owner, timer } => {
                let t = net.timers.get_mut(&timer).expect("scheduled timers are registered");
                if t.state != TimerState::Active {
                    continue;
                }
                t.state = TimerState::Fired;
                let subject = t.subject.clone();
                net.record(owner, EventKind::Timeout, subject, format!("timer {}", timer.0));
                let mut ctx = Ctx::new(net, owner);
                procs[owner.index()].on_timeout(&mut ctx, timer);
            }
            Event::Wake { owner, token } => {
                let mut ctx = Ctx::new(net, owner);
                procs[owner.index()].on_wake(&mut ctx, token);
            }
        }
    }
}
