use byzcausal::presets::preset;
use byzcausal::scenario::run;
use byzcausal::trace::{Trace, TraceError};

#[test]
fn traces_round_trip_through_json_lines() {
    let cfg = preset("cs-multicast", 2).unwrap();
    let trace = run(&cfg).unwrap();
    let text = trace.to_jsonl();
    assert_eq!(text.lines().count(), trace.len());
    let back = Trace::from_jsonl(&text).unwrap();
    assert_eq!(back, trace);
    back.check_well_formed().unwrap();
}

#[test]
fn garbage_is_a_parse_error() {
    assert!(matches!(Trace::from_jsonl("{not json}\n"), Err(TraceError::Parse { .. })));
}
