//! Random scenarios for property checks.

use std::ops::RangeInclusive;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::adversary::AdversaryScript;
use crate::config::{Protocol, ScenarioConfig};
use crate::types::{Destination, GroupSet, ProcessId, SimDuration, SimTime};

/// Script families the generator can assign. `CrashAt` picks its own time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScriptKind {
    SilentAck,
    CrashAt,
    PhantomSent,
    WithholdDelivered,
    Silent,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub protocol: Protocol,
    pub n: RangeInclusive<u32>,
    pub messages: RangeInclusive<usize>,
    pub delta: RangeInclusive<u64>,
    pub multicast: bool,
    /// Empty means no adversaries. Otherwise between 0 and `n - 2` processes
    /// get a script drawn from this list.
    pub scripts: Vec<ScriptKind>,
    /// Mean gap between consecutive requests, as a fraction of delta.
    pub gap_per_delta: f64,
}

impl Generator {
    pub fn new(protocol: Protocol) -> Self {
        Generator {
            protocol,
            n: 2..=5,
            messages: 1..=50,
            delta: 2..=8,
            multicast: false,
            scripts: Vec::new(),
            gap_per_delta: 0.5,
        }
    }

    pub fn scenario<R: Rng>(&self, rng: &mut R) -> ScenarioConfig {
        let n = rng.random_range(self.n.clone());
        let delta = rng.random_range(self.delta.clone());
        let count = rng.random_range(self.messages.clone());
        let mut c = ScenarioConfig::new(n, self.protocol, delta, 0);
        c.multicast = self.multicast;
        c.seed = rng.random();

        let mut t = 0u64;
        let max_gap = ((delta as f64) * self.gap_per_delta * 2.0).round().max(1.0) as u64;
        for _ in 0..count {
            let sender = rng.random_range(0..n);
            let dest = self.destination(rng, n, sender);
            c.send(t, sender, dest);
            t += rng.random_range(0..=max_gap);
        }

        if !self.scripts.is_empty() && n > 2 {
            let k = rng.random_range(0..=n - 2);
            let mut ids: Vec<u32> = (0..n).collect();
            ids.shuffle(rng);
            let end = c.workload_end().0;
            for &p in &ids[..k as usize] {
                let kind = *self.scripts.choose(rng).expect("non-empty");
                let script = match kind {
                    ScriptKind::SilentAck => AdversaryScript::SilentAck,
                    ScriptKind::CrashAt => AdversaryScript::CrashAt { at: SimTime(rng.random_range(0..=end + delta)) },
                    ScriptKind::PhantomSent => AdversaryScript::PhantomSent,
                    ScriptKind::WithholdDelivered => AdversaryScript::WithholdDelivered,
                    ScriptKind::Silent => AdversaryScript::Silent,
                };
                c.byzantine.insert(ProcessId(p), script);
            }
        }
        c.horizon = SimTime(c.workload_end().0 + settle_time(&c).0);
        c
    }

    fn destination<R: Rng>(&self, rng: &mut R, n: u32, sender: u32) -> Destination {
        let others: Vec<u32> = (0..n).filter(|&p| p != sender).collect();
        if self.multicast && others.len() > 1 {
            let size = rng.random_range(1..=others.len());
            let members = others.choose_multiple(rng, size).map(|&p| ProcessId(p));
            Destination::Group(GroupSet::new(members).expect("non-empty"))
        } else {
            Destination::One(ProcessId(*others.choose(rng).expect("n >= 2")))
        }
    }
}

/// Time after the last request by which every correct message should have
/// been delivered, with room to spare.
pub fn settle_time(c: &ScenarioConfig) -> SimDuration {
    let d = c.delta.0;
    let base = 10 * d + c.delta_s.0 + 2 * c.delta_r().0;
    match c.protocol {
        // A sender's backlog drains one request per lock, at most 2*delta each.
        Protocol::SenderInhibition => {
            let most = ProcessId::all(c.n)
                .map(|p| c.workload.iter().filter(|w| w.sender == p).count() as u64)
                .max()
                .unwrap_or(0);
            SimDuration(base + most * (2 * d + c.deliver_delay.0))
        }
        _ => SimDuration(base),
    }
}

/// Searches one-message Channel Sync scenarios over every pinned delay
/// assignment for a run where a correct process deletes a delivered-control
/// before it has processed the matching sent-control. Returns the first hit.
///
/// p0 sends to p1; p1's delivered-control and p0's sent-control both reach
/// p2. With `delta_r >= delta` no assignment should succeed.
pub fn premature_delete_search(
    delta: u64,
    delta_r: u64,
    min_delay: u64,
) -> Option<(ScenarioConfig, Vec<crate::oracle::PrematureDelete>)> {
    use crate::config::{DelayModel, DelayRule};
    use crate::types::EnvelopeKind;
    for delta_s in [0, delta / 2, delta] {
        for app in min_delay..=delta {
            for relay in min_delay..=delta {
                for announce in min_delay..=delta {
                    let mut c = ScenarioConfig::new(3, Protocol::ChannelSync, delta, 20 * delta + 20);
                    c.delta_s = SimDuration(delta_s);
                    c.delta_r = Some(SimDuration(delta_r));
                    c.min_delay = SimDuration(min_delay);
                    let rule = |from: u32, to: u32, kind: EnvelopeKind, delay: u64| DelayRule {
                        from: ProcessId(from),
                        to: ProcessId(to),
                        kind: Some(kind),
                        delay,
                    };
                    c.delay_model = DelayModel::AdversarialSchedule {
                        default: delta,
                        rules: vec![
                            rule(0, 1, EnvelopeKind::App, app),
                            rule(1, 2, EnvelopeKind::Control, relay),
                            rule(0, 2, EnvelopeKind::Control, announce),
                        ],
                    };
                    c.send(0, 0, Destination::One(ProcessId(1)));
                    let trace = crate::scenario::run(&c).ok()?;
                    let found = crate::oracle::check_control_order(&trace, &c.correct());
                    if !found.is_empty() {
                        return Some((c, found));
                    }
                }
            }
        }
    }
    None
}
