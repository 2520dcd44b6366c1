//! Matrix-clock causal ordering (the RST scheme).
//!
//! Each process keeps `M[j][k]`, the number of messages it knows `p_j` sent
//! to `p_k`, and a vector of per-source delivery counts. A message carries
//! a copy of the sender's matrix taken before the send is counted, and may
//! be delivered at `p_i` once every message `M[k][i]` it depends on has been
//! delivered. The scheme trusts every piggybacked entry, which is what the
//! attacks in [`crate::adversary`] exploit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::simnet::{Ctx, Process};
use crate::trace::EventKind;
use crate::types::{Destination, Draft, Envelope, ProcessId};

/// `n x n` matrix of send counts, row = sender, column = receiver.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatrixClock {
    n: usize,
    cells: Vec<u64>,
}

impl MatrixClock {
    pub fn new(n: usize) -> Self {
        MatrixClock { n, cells: vec![0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        MatrixClock { n, cells: rows.concat() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: ProcessId, col: ProcessId) -> u64 {
        self.cells[row.index() * self.n + col.index()]
    }

    pub fn set(&mut self, row: ProcessId, col: ProcessId, value: u64) {
        self.cells[row.index() * self.n + col.index()] = value;
    }

    /// Elementwise maximum with `other`.
    pub fn merge(&mut self, other: &MatrixClock) {
        assert_eq!(self.n, other.n, "clock dimensions differ");
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a = (*a).max(*b);
        }
    }

    /// True when no entry of `self` exceeds the matching entry of `other`.
    pub fn le(&self, other: &MatrixClock) -> bool {
        self.n == other.n && self.cells.iter().zip(&other.cells).all(|(a, b)| a <= b)
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.cells.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }
}

impl fmt::Display for MatrixClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<String> = self
            .rows()
            .iter()
            .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))
            .collect();
        write!(f, "[{}]", rows.join(" | "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RstState {
    pub me: ProcessId,
    pub clock: MatrixClock,
    /// Messages delivered here, per source.
    pub delivered: Vec<u64>,
    /// Arrived but not yet deliverable, in arrival order.
    pub pending: Vec<Envelope>,
}

impl RstState {
    pub fn new(me: ProcessId, n: usize) -> Self {
        RstState { me, clock: MatrixClock::new(n), delivered: vec![0; n], pending: Vec::new() }
    }

    /// Returns the timestamp to piggyback on a message to `dest`, then
    /// counts the send.
    pub fn send(&mut self, dest: ProcessId) -> MatrixClock {
        assert_ne!(dest, self.me, "self-sends are not part of the model");
        let stamp = self.clock.clone();
        let cur = self.clock.get(self.me, dest);
        self.clock.set(self.me, dest, cur + 1);
        stamp
    }

    /// Delivery condition: every message the stamp says was sent to this
    /// process has been delivered here.
    pub fn deliverable(&self, stamp: &MatrixClock) -> bool {
        stamp.n() == self.clock.n()
            && (0..self.delivered.len()).all(|k| stamp.get(ProcessId(k as u32), self.me) <= self.delivered[k])
    }

    /// Applies the delivery of a message from `origin` carrying `stamp`.
    pub fn apply_delivery(&mut self, origin: ProcessId, stamp: &MatrixClock) {
        self.delivered[origin.index()] += 1;
        self.clock.merge(stamp);
    }

    /// Queues `env` and returns every envelope that became deliverable, in
    /// delivery order. Blocked envelopes are rescanned in arrival order
    /// after each delivery.
    pub fn on_app(&mut self, env: Envelope) -> Vec<Envelope> {
        self.pending.push(env);
        let mut out = Vec::new();
        loop {
            let pos = self.pending.iter().position(|e| {
                e.app()
                    .and_then(|a| a.clock.as_ref())
                    .is_some_and(|stamp| self.deliverable(stamp))
            });
            let Some(pos) = pos else { break };
            let env = self.pending.remove(pos);
            let stamp = env.app().and_then(|a| a.clock.clone()).expect("checked above");
            self.apply_delivery(env.origin, &stamp);
            out.push(env);
        }
        out
    }
}

/// A correct RST process.
pub struct RstProcess {
    pub state: RstState,
}

impl RstProcess {
    pub fn new(me: ProcessId, n: u32) -> Self {
        RstProcess { state: RstState::new(me, n as usize) }
    }
}

impl Process for RstProcess {
    fn on_request(&mut self, ctx: &mut Ctx<'_>, dest: &Destination, payload: u64) {
        let Destination::One(dest) = *dest else {
            ctx.fail("rst supports point-to-point sends only");
        };
        let stamp = self.state.send(dest);
        let msg = ctx.next_msg_id();
        ctx.send(dest, Draft::App { msg, payload, clock: Some(stamp), group: None });
    }

    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, env: &Envelope) {
        let well_formed = env
            .app()
            .and_then(|a| a.clock.as_ref())
            .is_some_and(|c| c.n() == self.state.clock.n());
        if !well_formed {
            ctx.record(EventKind::Drop, Some(env), "not an application message with a valid timestamp");
            return;
        }
        for ready in self.state.on_app(env.clone()) {
            ctx.deliver(&ready);
        }
    }
}
