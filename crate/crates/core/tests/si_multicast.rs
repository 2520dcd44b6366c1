//! Group sends under Sender-Inhibition.
//!
//! The lock keeps a sender from racing its own messages, but a group member
//! that receives a multicast early can deliver it and write to a slower
//! member before the multicast reaches that member. No fault is needed.

use byzcausal::config::{DelayModel, DelayRule, Protocol, ScenarioConfig};
use byzcausal::oracle;
use byzcausal::scenario::run;
use byzcausal::si::group_of;
use byzcausal::types::{Destination, MsgId, ProcessId};

fn slow_link_to_p2() -> ScenarioConfig {
    let mut c = ScenarioConfig::new(3, Protocol::SenderInhibition, 8, 100);
    c.delay_model = DelayModel::AdversarialSchedule {
        default: 1,
        rules: vec![DelayRule { from: ProcessId(1), to: ProcessId(2), kind: None, delay: 7 }],
    };
    c
}

#[test]
fn relay_through_a_fast_member_overtakes_a_multicast() {
    let mut c = slow_link_to_p2();
    c.multicast = true;
    c.send(0, 1, group_of([ProcessId(0), ProcessId(2)]).unwrap());
    c.send(2, 0, Destination::One(ProcessId(2)));
    let trace = run(&c).unwrap();
    let v = oracle::check(&c, &trace).unwrap();
    assert_eq!(v.safety_violations.len(), 1, "{v}");
    let s = &v.safety_violations[0];
    assert_eq!(s.dest, ProcessId(2));
    assert_eq!(s.earlier, MsgId { sender: ProcessId(1), n: 1 });
    assert_eq!(s.later, MsgId { sender: ProcessId(0), n: 1 });
}

#[test]
fn the_same_traffic_as_separate_sends_is_safe() {
    let mut c = slow_link_to_p2();
    c.send(0, 1, Destination::One(ProcessId(0)));
    c.send(0, 1, Destination::One(ProcessId(2)));
    c.send(2, 0, Destination::One(ProcessId(2)));
    let trace = run(&c).unwrap();
    assert!(oracle::check(&c, &trace).unwrap().is_clean());
}
