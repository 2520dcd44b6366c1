//! Canonical scenarios, runnable by name.
//!
//! Attack presets carry the violation they are expected to show in
//! `expect`; the runner treats finding it as success.

use crate::adversary::AdversaryScript;
use crate::config::{DelayModel, DelayRule, Expectation, Protocol, ScenarioConfig};
use crate::types::{Destination, GroupSet, ProcessId, SimDuration, SimTime};

pub const NAMES: [&str; 10] = [
    "boost-attack-rst",
    "shrink-attack-rst",
    "si-clean",
    "si-silent-ack",
    "si-multicast",
    "cs-clean",
    "cs-phantom",
    "cs-withhold",
    "cs-multicast",
    "cs-multicast-hidden-group",
];

/// One-line description for listings.
pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "boost-attack-rst" => "RST, one process inflates matrix entries; correct traffic stalls",
        "shrink-attack-rst" => "RST, one process deflates matrix entries; deliveries overtake their causal past, also one hop on",
        "si-clean" => "Sender-Inhibition, no faults",
        "si-silent-ack" => "Sender-Inhibition, one receiver never acknowledges; locks time out at 2*delta",
        "si-multicast" => "Sender-Inhibition with group sends and one crashing member",
        "cs-clean" => "Channel Sync, no faults",
        "cs-phantom" => "Channel Sync, one process announces sends it never makes",
        "cs-withhold" => "Channel Sync, one process never announces its deliveries",
        "cs-multicast" => "Channel Sync with group sends and a silent member",
        "cs-multicast-hidden-group" => "Channel Sync with group sends that name only the recipient",
        _ => return None,
    })
}

/// The preset called `name` with delays drawn from `seed`.
pub fn preset(name: &str, seed: u64) -> Option<ScenarioConfig> {
    let mut c = match name {
        "boost-attack-rst" => boost_attack_rst(),
        "shrink-attack-rst" => shrink_attack_rst(),
        "si-clean" => si_clean(),
        "si-silent-ack" => si_silent_ack(),
        "si-multicast" => si_multicast(),
        "cs-clean" => cs(ScriptFor::None, false, false),
        "cs-phantom" => cs(ScriptFor::One(AdversaryScript::PhantomSent), false, false),
        "cs-withhold" => cs(ScriptFor::One(AdversaryScript::WithholdDelivered), false, false),
        "cs-multicast" => cs(ScriptFor::One(AdversaryScript::Silent), true, false),
        "cs-multicast-hidden-group" => cs(ScriptFor::One(AdversaryScript::Silent), true, true),
        _ => return None,
    };
    c.seed = seed;
    Some(c)
}

fn one(p: u32) -> Destination {
    Destination::One(ProcessId(p))
}

fn group(members: &[u32]) -> Destination {
    Destination::Group(GroupSet::new(members.iter().map(|&m| ProcessId(m))).expect("non-empty group"))
}

/// Every ordered pair of distinct processes, `rounds` times over, one
/// request every `gap` ticks.
fn all_pairs(c: &mut ScenarioConfig, rounds: u64, gap: u64) {
    let mut t = 0;
    for _ in 0..rounds {
        for s in 0..c.n {
            for d in (0..c.n).filter(|&d| d != s) {
                c.send(t, s, one(d));
                t += gap;
            }
        }
    }
}

fn set_horizon(c: &mut ScenarioConfig, slack_deltas: u64) {
    c.horizon = SimTime(c.workload_end().0 + slack_deltas * c.delta.0);
}

fn boost_attack_rst() -> ScenarioConfig {
    // p1 poisons both correct processes, then they try to talk to each
    // other. Each believes the other sent a message that never existed.
    let mut c = ScenarioConfig::new(3, Protocol::Rst, 5, 0);
    c.byzantine.insert(
        ProcessId(1),
        AdversaryScript::Boost { pairs: vec![(ProcessId(0), ProcessId(2)), (ProcessId(2), ProcessId(0))], d: 1 },
    );
    c.send(0, 1, one(0)).send(0, 1, one(2));
    c.send(12, 0, one(2)).send(12, 2, one(0));
    c.send(20, 0, one(2)).send(20, 2, one(0));
    set_horizon(&mut c, 10);
    c.expect = Expectation::LivenessViolation;
    c
}

fn shrink_attack_rst() -> ScenarioConfig {
    // p0 sends to p2 and p3 on slow links, then tells p1. p1 hides p0's
    // sends from its timestamp and writes to p2, which delivers before p0's
    // message arrives. p2 then writes to p3, carrying the forged view on,
    // and p3 repeats the mistake.
    let mut c = ScenarioConfig::new(4, Protocol::Rst, 10, 200);
    c.delay_model = DelayModel::AdversarialSchedule {
        default: 1,
        rules: vec![
            DelayRule { from: ProcessId(0), to: ProcessId(2), kind: None, delay: 10 },
            DelayRule { from: ProcessId(0), to: ProcessId(3), kind: None, delay: 10 },
        ],
    };
    c.byzantine.insert(
        ProcessId(1),
        AdversaryScript::Shrink { entries: vec![(ProcessId(0), ProcessId(2)), (ProcessId(0), ProcessId(3))], by: 1 },
    );
    c.send(0, 0, one(2)).send(0, 0, one(3)).send(1, 0, one(1));
    c.send(3, 1, one(2)).send(5, 2, one(3));
    c.expect = Expectation::SafetyViolation;
    c
}

fn si_clean() -> ScenarioConfig {
    let mut c = ScenarioConfig::new(4, Protocol::SenderInhibition, 5, 0);
    all_pairs(&mut c, 2, 2);
    // Each sender's backlog drains at most one request per 2*delta.
    set_horizon(&mut c, 4 + 2 * 6);
    c
}

fn si_silent_ack() -> ScenarioConfig {
    let mut c = ScenarioConfig::new(3, Protocol::SenderInhibition, 5, 0);
    c.byzantine.insert(ProcessId(2), AdversaryScript::SilentAck);
    c.send(0, 0, one(2)).send(1, 0, one(1)).send(2, 1, one(2)).send(3, 1, one(0));
    c.send(4, 2, one(0)).send(30, 0, one(1));
    set_horizon(&mut c, 10);
    c
}

fn si_multicast() -> ScenarioConfig {
    let mut c = ScenarioConfig::new(4, Protocol::SenderInhibition, 5, 0);
    c.multicast = true;
    c.byzantine.insert(ProcessId(3), AdversaryScript::CrashAt { at: SimTime(15) });
    c.send(0, 0, group(&[1, 2, 3])).send(2, 1, group(&[0, 2])).send(4, 2, group(&[0, 1, 3]));
    c.send(6, 0, group(&[2, 3])).send(20, 1, group(&[0, 2, 3])).send(22, 3, group(&[0, 1]));
    c.send(24, 2, group(&[0, 1]));
    set_horizon(&mut c, 4 + 2 * 3);
    c
}

enum ScriptFor {
    None,
    One(AdversaryScript),
}

fn cs(script: ScriptFor, multicast: bool, hide_group: bool) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(4, Protocol::ChannelSync, 6, 0);
    c.delta_s = SimDuration(3);
    c.multicast = multicast;
    c.mcast_hide_group = hide_group;
    if let ScriptFor::One(s) = script {
        c.byzantine.insert(ProcessId(3), s);
    }
    if multicast {
        let groups: [(u32, &[u32]); 8] = [
            (0, &[1, 2, 3]),
            (1, &[0, 2]),
            (2, &[0, 1, 3]),
            (3, &[0, 1, 2]),
            (0, &[2, 3]),
            (1, &[0, 2, 3]),
            (2, &[1]),
            (0, &[1, 2]),
        ];
        for (k, (s, g)) in groups.iter().enumerate() {
            c.send(2 * k as u64, *s, group(g));
        }
    } else {
        all_pairs(&mut c, 2, 1);
    }
    set_horizon(&mut c, 10);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_builds_a_valid_config() {
        for name in NAMES {
            let c = preset(name, 3).unwrap();
            assert!(c.errors().is_empty(), "{name}: {:?}", c.validate());
            assert!(describe(name).is_some());
            assert_eq!(c.seed, 3);
        }
        assert!(preset("nope", 0).is_none());
    }

    #[test]
    fn boost_horizon_is_ten_deltas_past_the_workload() {
        let c = preset("boost-attack-rst", 1).unwrap();
        assert_eq!(c.horizon.0, c.workload_end().0 + 10 * c.delta.0);
    }
}
