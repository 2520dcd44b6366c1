//! Acceptance gate: one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines print in order.
//! Exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use byzcausal::config::{Protocol, ScenarioConfig};
use byzcausal::gen::{premature_delete_search, Generator, ScriptKind};
use byzcausal::oracle::{self, build_hb, check_control_order, check_safety, plant_inversion};
use byzcausal::presets;
use byzcausal::scenario::run;
use byzcausal::trace::{EventKind, Trace};
use byzcausal::types::{Destination, ProcessId, SimDuration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("AC1 failure-free RST: clean and closure matches brute force", ac1_rst_clean),
        ("AC2 boosting attack blocks correct traffic", ac2_boost),
        ("AC3 deflation attack breaks order, also one hop on", ac3_shrink),
        ("AC4 Sender-Inhibition: clean, locks held at most 2*delta", ac4_si),
        ("AC5 receive timer: no early deletes at delta_r = delta; counterexample below", ac5_receive_timer),
        ("AC6 Channel Sync: clean and within the queue-delay bound", ac6_cs),
        ("AC7 two correct processes among three Byzantine ones", ac7_no_threshold),
        ("AC8 presets are deterministic", ac8_determinism),
        ("AC9 planted inversions are all caught", ac9_mutation),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name} ({secs:.1}s): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ac1_rst_clean() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xac1);
    let g = Generator::new(Protocol::Rst);
    let (mut runs, mut unclean, mut small, mut mismatches) = (0, 0, 0, 0);
    for _ in 0..200 {
        let mut c = g.scenario(&mut rng);
        for seed in 1..=5 {
            c.seed = seed;
            let trace = run(&c).expect("valid scenario");
            let v = oracle::check(&c, &trace).expect("well formed");
            runs += 1;
            unclean += usize::from(!v.is_clean());
            let hb = build_hb(&trace).expect("well formed");
            if hb.len() <= 12 {
                small += 1;
                if hb.closure() != hb.brute_force() || hb.check_laws().is_err() {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        unclean == 0 && mismatches == 0 && small > 0 && elapsed < Duration::from_secs(30),
        format!("{runs} runs, {unclean} unclean; {small} small traces, {mismatches} closure mismatches; {elapsed:.1?} (limit 30s)"),
    )
}

fn ac2_boost() -> Outcome {
    let mut stuck = Vec::new();
    for seed in 1..=20 {
        let c = presets::preset("boost-attack-rst", seed).unwrap();
        assert_eq!(c.horizon.0, c.workload_end().0 + 10 * c.delta.0);
        let trace = run(&c).unwrap();
        let v = oracle::check(&c, &trace).unwrap();
        let correct = c.correct();
        let count = v
            .liveness_violations
            .iter()
            .filter(|l| l.msg.is_some() && correct.contains(&l.sender) && correct.contains(&l.dest))
            .count();
        stuck.push(count);
    }
    let min = stuck.iter().min().copied().unwrap_or(0);
    outcome(min >= 1, format!("undelivered correct->correct messages per seed 1..20: min {min}, {stuck:?}"))
}

fn ac3_shrink() -> Outcome {
    let c = presets::preset("shrink-attack-rst", 0).unwrap();
    let trace = run(&c).unwrap();
    let v = oracle::check(&c, &trace).unwrap();
    let correct = c.correct();
    let at_correct: Vec<_> = v.safety_violations.iter().filter(|s| correct.contains(&s.dest)).collect();
    let direct = at_correct.iter().filter(|s| c.is_byzantine(s.later.sender)).count();
    let transitive = at_correct.iter().filter(|s| correct.contains(&s.later.sender)).count();
    outcome(
        direct >= 1 && transitive >= 1,
        format!("{} violations at correct processes: {direct} from the forger, {transitive} one hop on", at_correct.len()),
    )
}

/// Lock hold times at correct processes: (held, timed out).
fn lock_holds(trace: &Trace, c: &ScenarioConfig) -> Vec<(u64, bool)> {
    let mut open: BTreeMap<ProcessId, u64> = BTreeMap::new();
    let mut holds = Vec::new();
    for e in trace.iter().filter(|e| !c.is_byzantine(e.process)) {
        match e.kind {
            EventKind::TimerStart => {
                open.insert(e.process, e.time.0);
            }
            EventKind::TimerStop | EventKind::Timeout => {
                if let Some(t) = open.remove(&e.process) {
                    holds.push((e.time.0 - t, e.kind == EventKind::Timeout));
                }
            }
            _ => {}
        }
    }
    holds
}

fn ac4_si() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac4);
    let mut g = Generator::new(Protocol::SenderInhibition);
    g.n = 3..=5;
    g.scripts = vec![ScriptKind::SilentAck, ScriptKind::CrashAt];
    let (mut unclean, mut too_long, mut wrong_timeout, mut timeouts, mut with_adv) = (0, 0, 0, 0, 0);
    for _ in 0..200 {
        let c = g.scenario(&mut rng);
        with_adv += usize::from(!c.byzantine.is_empty());
        let trace = run(&c).unwrap();
        let v = oracle::check(&c, &trace).unwrap();
        unclean += usize::from(!v.is_clean());
        let two_delta = 2 * c.delta.0;
        for (held, timed_out) in lock_holds(&trace, &c) {
            too_long += usize::from(held > two_delta);
            if timed_out {
                timeouts += 1;
                wrong_timeout += usize::from(held != two_delta);
            }
        }
    }
    // A receiver that never acknowledges: the lock falls at exactly send + 2*delta.
    let c = presets::preset("si-silent-ack", 1).unwrap();
    let trace = run(&c).unwrap();
    let silent_holds: Vec<_> = lock_holds(&trace, &c).into_iter().filter(|h| h.1).collect();
    let silent_exact = !silent_holds.is_empty() && silent_holds.iter().all(|h| h.0 == 2 * c.delta.0);
    let silent_clean = oracle::check(&c, &trace).unwrap().is_clean();
    outcome(
        unclean == 0 && too_long == 0 && wrong_timeout == 0 && timeouts > 0 && silent_exact && silent_clean,
        format!(
            "200 runs ({with_adv} with adversaries), {unclean} unclean, {too_long} locks over 2*delta, \
             {timeouts} timeouts of which {wrong_timeout} not at exactly 2*delta; silent receiver: {} timeouts at 2*delta",
            silent_holds.len()
        ),
    )
}

fn ac5_receive_timer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac5);
    let mut g = Generator::new(Protocol::ChannelSync);
    g.n = 3..=5;
    g.scripts = vec![ScriptKind::PhantomSent, ScriptKind::WithholdDelivered, ScriptKind::CrashAt, ScriptKind::Silent];
    let mut early = 0;
    for k in 0..200 {
        let mut c = g.scenario(&mut rng);
        c.delta_s = SimDuration([0, c.delta.0 / 2, c.delta.0][k % 3]);
        c.delta_r = Some(c.delta);
        if k % 2 == 0 {
            c.min_delay = SimDuration::ZERO;
        }
        let trace = run(&c).unwrap();
        early += check_control_order(&trace, &c.correct()).len();
    }
    // The search tries the smallest network delay the model allows first;
    // the margin below delta that survives equals twice that delay.
    let hit = [0, 1].into_iter().find_map(|min| premature_delete_search(6, 5, min));
    let found = match &hit {
        Some((c, d)) => format!("delta 6, delta_r 5, min_delay {}: {} deleted early at {}", c.min_delay, d[0].msg, d[0].process),
        None => "none".into(),
    };
    outcome(early == 0 && hit.is_some(), format!("200 runs at delta_r = delta: {early} early deletes; delta_r = delta-1 counterexample: {found}"))
}

fn ac6_cs() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xac6);
    let mut g = Generator::new(Protocol::ChannelSync);
    g.n = 3..=5;
    g.messages = 1..=40;
    g.scripts = vec![ScriptKind::PhantomSent, ScriptKind::WithholdDelivered, ScriptKind::CrashAt, ScriptKind::Silent];
    let (mut unsafe_runs, mut unlive_runs, mut over_bound, mut worst_ratio) = (0, 0, 0, 0.0f64);
    let mut per_mode = [0usize; 3];
    let mut max_per_run = Vec::new();
    for k in 0..300 {
        let mode = k % 3;
        g.multicast = mode > 0;
        let mut c = g.scenario(&mut rng);
        c.mcast_hide_group = mode == 2;
        c.delta_s = SimDuration([0, c.delta.0 / 2, c.delta.0][(k / 3) % 3]);
        c.horizon = byzcausal::types::SimTime(c.workload_end().0 + byzcausal::gen::settle_time(&c).0);
        let trace = run(&c).unwrap();
        let v = oracle::check(&c, &trace).unwrap();
        per_mode[mode] += 1;
        unsafe_runs += usize::from(!v.safety_violations.is_empty());
        unlive_runs += usize::from(!v.liveness_violations.is_empty());
        over_bound += v.bound_violations.len();
        let max = v.max_observed_delay.map_or(0, |d| d.0);
        max_per_run.push(max);
        worst_ratio = worst_ratio.max(max as f64 / v.bound.unwrap().0.max(1) as f64);
    }
    let elapsed = start.elapsed();
    outcome(
        unsafe_runs == 0 && unlive_runs == 0 && over_bound == 0 && elapsed < Duration::from_secs(120),
        format!(
            "300 runs (p2p/multicast/hidden group {per_mode:?}): {unsafe_runs} unsafe, {unlive_runs} not live, \
             {over_bound} delays over bound; max delay per run up to {}, worst max/bound {worst_ratio:.2}; {elapsed:.1?} (limit 120s)",
            max_per_run.iter().max().unwrap_or(&0)
        ),
    )
}

fn ac7_no_threshold() -> Outcome {
    let scripts = [
        byzcausal::adversary::AdversaryScript::PhantomSent,
        byzcausal::adversary::AdversaryScript::WithholdDelivered,
        byzcausal::adversary::AdversaryScript::Silent,
    ];
    let mut bad = Vec::new();
    for seed in 1..=10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = ScenarioConfig::new(5, Protocol::ChannelSync, 5, 0);
        c.seed = seed;
        c.delta_s = SimDuration(seed % 6);
        for (k, p) in [1u32, 2, 4].into_iter().enumerate() {
            c.byzantine.insert(ProcessId(p), scripts[(k + seed as usize) % 3].clone());
        }
        let mut t = 0;
        for k in 0..20u32 {
            let (s, d) = if k % 2 == 0 { (0, 3) } else { (3, 0) };
            c.send(t, s, Destination::One(ProcessId(d)));
            // Byzantine processes talk too, to everyone.
            let b = [1u32, 2, 4][rng.random_range(0..3)];
            let to = (b + rng.random_range(1..5)) % 5;
            c.send(t, b, Destination::One(ProcessId(to)));
            t += rng.random_range(0..4);
        }
        c.horizon = byzcausal::types::SimTime(c.workload_end().0 + byzcausal::gen::settle_time(&c).0);
        let trace = run(&c).unwrap();
        let v = oracle::check(&c, &trace).unwrap();
        let correct = c.correct();
        let correct_delivered = trace
            .of_kind(EventKind::Deliver)
            .filter(|e| correct.contains(&e.process) && correct.contains(&e.envelope.as_ref().unwrap().origin))
            .count();
        if !v.is_clean() || correct_delivered < 20 {
            bad.push(seed);
        }
    }
    outcome(bad.is_empty(), format!("n=5, 3 Byzantine, 20 messages between p0 and p3; unclean or short seeds: {bad:?}"))
}

fn ac8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for name in presets::NAMES {
        let mut files = Vec::new();
        for round in 0..2 {
            let c = presets::preset(name, 7).unwrap();
            let trace = run(&c).unwrap();
            let path = dir.path().join(format!("{name}-{round}.jsonl"));
            let mut f = std::fs::File::create(&path).unwrap();
            trace.write_jsonl(&mut f).unwrap();
            drop(f);
            files.push(std::fs::read(&path).unwrap());
        }
        if files[0] != files[1] || files[0].is_empty() {
            differing.push(name);
        }
    }
    outcome(differing.is_empty(), format!("{} presets, differing: {differing:?}", presets::NAMES.len()))
}

fn ac9_mutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac9);
    let mut g = Generator::new(Protocol::Rst);
    g.n = 3..=5;
    g.messages = 10..=40;
    let mut cs = Generator::new(Protocol::ChannelSync);
    cs.n = 3..=5;
    cs.messages = 10..=40;
    let (mut planted, mut caught, mut attempts) = (0, 0, 0);
    while planted < 50 && attempts < 1000 {
        attempts += 1;
        let c = if attempts % 2 == 0 { g.scenario(&mut rng) } else { cs.scenario(&mut rng) };
        let trace = run(&c).unwrap();
        let relation = oracle::relation_for(&c, &trace).unwrap();
        let correct = c.correct();
        if !check_safety(&trace, &relation, &correct).is_empty() {
            continue;
        }
        let Some(mutated) = plant_inversion(&trace, &relation, &correct, &mut rng) else { continue };
        planted += 1;
        let rebuilt = oracle::relation_for(&c, &mutated).unwrap();
        caught += usize::from(!check_safety(&mutated, &rebuilt, &correct).is_empty());
    }
    outcome(planted == 50 && caught == planted, format!("{caught} of {planted} planted inversions caught"))
}
