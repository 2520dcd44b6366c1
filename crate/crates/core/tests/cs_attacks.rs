//! Channel Sync under crafted Byzantine schedules.

use byzcausal::config::ScenarioConfig;
use byzcausal::gen::premature_delete_search;
use byzcausal::oracle;
use byzcausal::scenario::run;
use byzcausal::trace::EventKind;
use byzcausal::types::{MsgId, ProcessId};

// p2 announces a delivery of p0#1 before p0 has sent anything, then sends
// p2#1 to p0. At p1 this leaves two control messages that each wait for the
// other's queue: p2's early delivered-control waits for p0's sent-control
// for p0#1, which sits behind p0's delivered-control for p2#1, which waits
// for p2's sent-control, which sits behind the early one.
const PREDICTED_DELIVERY: &str = r#"
n = 3
protocol = "channel_sync"
delta = 10
horizon = 200
delay_model = { kind = "fixed", delay = 1 }

[[workload]]
time = 1
sender = 2
dest = 0
payload = 0

[[workload]]
time = 3
sender = 0
dest = 2
payload = 1

[[workload]]
time = 5
sender = 0
dest = 1
payload = 2

[byzantine.2]
script = "custom_schedule"
actions = [{ at = 0, to = 1, body = { type = "delivered", subject = 0, msg = { sender = 0, n = 1 } } }]
"#;

#[test]
fn predicted_delivered_control_deadlocks_a_correct_channel() {
    let cfg = ScenarioConfig::from_toml_str(PREDICTED_DELIVERY).unwrap();
    assert!(cfg.errors().is_empty());
    let trace = run(&cfg).unwrap();
    let v = oracle::check(&cfg, &trace).unwrap();

    let p0_2 = MsgId { sender: ProcessId(0), n: 2 };
    assert!(
        v.liveness_violations.iter().any(|l| l.msg == Some(p0_2) && l.dest == ProcessId(1)),
        "{v}"
    );
    // Still queued at the horizon, so far past any delay bound.
    assert!(v.bound_violations.iter().any(|b| b.msg == p0_2 && b.process == ProcessId(1)));
    assert!(v.safety_violations.is_empty());
    // Nothing at p1 was deleted after the early control arrived.
    assert_eq!(
        trace.of_kind(EventKind::Delete).filter(|e| e.process == ProcessId(1)).count(),
        0
    );
}

#[test]
fn without_the_early_control_the_same_workload_is_clean() {
    let mut cfg = ScenarioConfig::from_toml_str(PREDICTED_DELIVERY).unwrap();
    cfg.byzantine.clear();
    let trace = run(&cfg).unwrap();
    assert!(oracle::check(&cfg, &trace).unwrap().is_clean());
}

#[test]
fn receive_timer_margin_depends_on_the_minimum_delay() {
    // Premise holds: nothing to find, whatever the minimum delay.
    for min in [0, 1] {
        assert!(premature_delete_search(6, 6, min).is_none());
    }
    // One tick short is enough when messages can be instantaneous.
    let (cfg, found) = premature_delete_search(6, 5, 0).unwrap();
    assert_eq!(found[0].process, ProcessId(2));
    let trace = run(&cfg).unwrap();
    assert!(!oracle::check_control_order(&trace, &cfg.correct()).is_empty());
    // With a one-tick minimum both hops of the relay eat into the gap.
    assert!(premature_delete_search(6, 5, 1).is_none());
    assert!(premature_delete_search(6, 4, 1).is_none());
    assert!(premature_delete_search(6, 3, 1).is_some());
}
