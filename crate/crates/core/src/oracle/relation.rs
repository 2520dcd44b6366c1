//! Message orders reconstructed from a trace.
//!
//! Both relations are built the same way: first the direct edges each rule
//! contributes, then the transitive closure. Every direct edge points from
//! an earlier to a later position in the message order used for indexing,
//! so the closure is a single forward pass; [`CausalRelation::brute_force`]
//! recomputes it by plain reachability for cross-checking.

use std::collections::{BTreeMap, BTreeSet};

use fixedbitset::FixedBitSet;

use crate::trace::{EventKind, Trace, TraceError};
use crate::types::{EnvelopeKind, MsgId, ProcessId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalRelation {
    /// Messages in index order. Every edge goes from a lower to a higher
    /// index.
    messages: Vec<MsgId>,
    index: BTreeMap<MsgId, usize>,
    /// `direct[b]` holds `a` when a rule relates `a` to `b` directly.
    direct: Vec<FixedBitSet>,
    /// `closure[b]` holds every `a` with `a` before `b`.
    closure: Vec<FixedBitSet>,
}

impl CausalRelation {
    fn from_direct(messages: Vec<MsgId>, direct: Vec<FixedBitSet>) -> Self {
        let index = messages.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let n = messages.len();
        let mut closure: Vec<FixedBitSet> = Vec::with_capacity(n);
        for b in 0..n {
            let mut set = FixedBitSet::with_capacity(n);
            for a in direct[b].ones() {
                assert!(a < b, "edges must follow index order");
                set.insert(a);
                set.union_with(&closure[a]);
            }
            closure.push(set);
        }
        CausalRelation { messages, index, direct, closure }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn messages(&self) -> &[MsgId] {
        &self.messages
    }

    pub fn contains(&self, m: MsgId) -> bool {
        self.index.contains_key(&m)
    }

    /// True when `a` precedes `b`.
    pub fn precedes(&self, a: MsgId, b: MsgId) -> bool {
        match (self.index.get(&a), self.index.get(&b)) {
            (Some(&a), Some(&b)) => self.closure[b].contains(a),
            _ => false,
        }
    }

    /// Everything that precedes `m`.
    pub fn past(&self, m: MsgId) -> Vec<MsgId> {
        self.index
            .get(&m)
            .map(|&b| self.closure[b].ones().map(|a| self.messages[a]).collect())
            .unwrap_or_default()
    }

    /// All related pairs `(a, b)` with `a` before `b`.
    pub fn pairs(&self) -> impl Iterator<Item = (MsgId, MsgId)> + '_ {
        self.closure
            .iter()
            .enumerate()
            .flat_map(move |(b, set)| set.ones().map(move |a| (self.messages[a], self.messages[b])))
    }

    pub fn direct_edge_count(&self) -> usize {
        self.direct.iter().map(|s| s.count_ones(..)).sum()
    }

    /// Closure by repeated reachability over the direct edges, without
    /// relying on index order.
    pub fn brute_force(&self) -> Vec<FixedBitSet> {
        let n = self.len();
        // reach[a][b]: a before b.
        let mut reach = vec![vec![false; n]; n];
        for (b, preds) in self.direct.iter().enumerate() {
            for a in preds.ones() {
                reach[a][b] = true;
            }
        }
        for k in 0..n {
            for a in 0..n {
                if reach[a][k] {
                    for b in 0..n {
                        if reach[k][b] {
                            reach[a][b] = true;
                        }
                    }
                }
            }
        }
        (0..n)
            .map(|b| {
                let mut s = FixedBitSet::with_capacity(n);
                for (a, row) in reach.iter().enumerate() {
                    if row[b] {
                        s.insert(a);
                    }
                }
                s
            })
            .collect()
    }

    pub fn closure(&self) -> &[FixedBitSet] {
        &self.closure
    }

    /// Checks that the closure is a strict partial order.
    pub fn check_laws(&self) -> Result<(), String> {
        for (b, set) in self.closure.iter().enumerate() {
            if set.contains(b) {
                return Err(format!("{} precedes itself", self.messages[b]));
            }
            for a in set.ones() {
                if self.closure[a].contains(b) {
                    return Err(format!("{} and {} precede each other", self.messages[a], self.messages[b]));
                }
                if !self.closure[a].is_subset(set) {
                    return Err(format!("closure at {} is not transitive", self.messages[b]));
                }
            }
        }
        Ok(())
    }
}

/// Per-message facts gathered from a trace.
#[derive(Clone, Debug, Default)]
pub(crate) struct MessageFacts {
    /// Trace index of the first send of each message, in send order.
    pub first_send: BTreeMap<MsgId, usize>,
    pub dests: BTreeMap<MsgId, BTreeSet<ProcessId>>,
    /// `(process, trace index)` of every delivery.
    pub deliveries: BTreeMap<MsgId, Vec<(ProcessId, usize)>>,
}

pub(crate) fn facts(trace: &Trace) -> MessageFacts {
    let mut f = MessageFacts::default();
    for (i, e) in trace.iter().enumerate() {
        let Some(env) = &e.envelope else { continue };
        if env.kind != EnvelopeKind::App {
            continue;
        }
        let Some(msg) = env.msg else { continue };
        match e.kind {
            EventKind::Send => {
                f.first_send.entry(msg).or_insert(i);
                f.dests.entry(msg).or_default().insert(env.dest);
            }
            EventKind::Deliver => f.deliveries.entry(msg).or_default().push((e.process, i)),
            _ => {}
        }
    }
    f
}

/// Classical happens-before on application messages: `m` precedes `m'`
/// when some process sent or delivered `m` before sending `m'`, closed
/// transitively. Messages from one sender are ordered by its send order.
pub fn build_hb(trace: &Trace) -> Result<CausalRelation, TraceError> {
    trace.check_well_formed()?;
    let f = facts(trace);
    let mut order: Vec<(usize, MsgId)> = f.first_send.iter().map(|(m, i)| (*i, *m)).collect();
    order.sort();
    let messages: Vec<MsgId> = order.iter().map(|(_, m)| *m).collect();
    let idx: BTreeMap<MsgId, usize> = messages.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let n = messages.len();
    let mut direct = vec![FixedBitSet::with_capacity(n); n];
    let mut local: BTreeMap<ProcessId, FixedBitSet> = BTreeMap::new();
    for e in trace.iter() {
        let Some(env) = &e.envelope else { continue };
        if env.kind != EnvelopeKind::App {
            continue;
        }
        let Some(&m) = env.msg.as_ref().and_then(|m| idx.get(m)) else { continue };
        let seen = local.entry(e.process).or_insert_with(|| FixedBitSet::with_capacity(n));
        match e.kind {
            EventKind::Send if !seen.contains(m) => {
                direct[m] = seen.clone();
                seen.insert(m);
            }
            EventKind::Deliver => seen.insert(m),
            _ => {}
        }
    }
    Ok(CausalRelation::from_direct(messages, direct))
}

/// Byzantine happens-before over the messages delivered at correct
/// processes. Chains pass through correct processes only: a correct process
/// relates what it sent to, or delivered from, another correct process to
/// its later sends. Messages from one source are totally ordered by the
/// source's send events as the network recorded them, which holds for a
/// Byzantine source too: it cannot hide the order in which it emitted.
pub fn build_bhb(trace: &Trace, byzantine: &BTreeSet<ProcessId>) -> Result<CausalRelation, TraceError> {
    trace.check_well_formed()?;
    let f = facts(trace);
    let correct = |p: &ProcessId| !byzantine.contains(p);

    let mut order: Vec<(usize, MsgId)> = Vec::new();
    for (m, ds) in &f.deliveries {
        if let (true, Some(&sent)) = (ds.iter().any(|(p, _)| correct(p)), f.first_send.get(m)) {
            order.push((sent, *m));
        }
    }
    order.sort();
    let messages: Vec<MsgId> = order.iter().map(|(_, m)| *m).collect();
    let idx: BTreeMap<MsgId, usize> = messages.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let n = messages.len();
    let mut direct = vec![FixedBitSet::with_capacity(n); n];

    // Per-source chains.
    let mut last_from: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for (b, m) in messages.iter().enumerate() {
        if let Some(a) = last_from.insert(m.sender, b) {
            direct[b].insert(a);
        }
    }

    // Sends and deliveries at correct processes.
    let mut local: BTreeMap<ProcessId, FixedBitSet> = BTreeMap::new();
    for e in trace.iter().filter(|e| correct(&e.process)) {
        let Some(env) = &e.envelope else { continue };
        if env.kind != EnvelopeKind::App {
            continue;
        }
        let Some(&m) = env.msg.as_ref().and_then(|m| idx.get(m)) else { continue };
        let seen = local.entry(e.process).or_insert_with(|| FixedBitSet::with_capacity(n));
        match e.kind {
            EventKind::Send if !seen.contains(m) => {
                direct[m].union_with(seen);
                let to_correct = f.dests[&messages[m]].iter().any(correct);
                if to_correct {
                    seen.insert(m);
                }
            }
            EventKind::Deliver if correct(&env.origin) => seen.insert(m),
            _ => {}
        }
    }
    for (b, set) in direct.iter_mut().enumerate() {
        set.set(b, false);
    }
    Ok(CausalRelation::from_direct(messages, direct))
}
