//! Invariants over generated scenarios.

use byzcausal::config::{DelayModel, DelayRule, Protocol, ScenarioConfig};
use byzcausal::gen::{settle_time, Generator, ScriptKind};
use byzcausal::oracle::{self, build_hb, check_safety, plant_inversion};
use byzcausal::scenario::run;
use byzcausal::types::{EnvelopeKind, ProcessId, SimDuration, SimTime};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generated(protocol: Protocol, seed: u64, multicast: bool, scripts: Vec<ScriptKind>) -> ScenarioConfig {
    let mut g = Generator::new(protocol);
    g.n = 3..=5;
    g.messages = 1..=25;
    g.multicast = multicast;
    g.scripts = scripts;
    g.scenario(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Every directed pair pinned to the fastest or slowest legal delay, chosen
/// separately for control messages and everything else.
fn extreme_delays(c: &mut ScenarioConfig, pattern: u64) {
    let mut rules = Vec::new();
    let pick = |bit: u32| if (pattern >> (bit % 64)) & 1 == 1 { c.delta.0 } else { c.min_delay.0 };
    for from in 0..c.n {
        for to in (0..c.n).filter(|&t| t != from) {
            let pair = 2 * (from * c.n + to);
            let (from, to) = (ProcessId(from), ProcessId(to));
            rules.push(DelayRule { from, to, kind: Some(EnvelopeKind::Control), delay: pick(pair) });
            rules.push(DelayRule { from, to, kind: None, delay: pick(pair + 1) });
        }
    }
    c.delay_model = DelayModel::AdversarialSchedule { default: c.delta.0, rules };
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn channel_sync_holds_under_extreme_delays(
        seed in any::<u64>(),
        pattern in any::<u64>(),
        mode in 0usize..3,
        ds in 0usize..3,
        instant in any::<bool>(),
    ) {
        let scripts = vec![ScriptKind::PhantomSent, ScriptKind::WithholdDelivered, ScriptKind::CrashAt, ScriptKind::Silent];
        let mut c = generated(Protocol::ChannelSync, seed, mode > 0, scripts);
        c.mcast_hide_group = mode == 2;
        c.delta_s = SimDuration([0, c.delta.0 / 2, c.delta.0][ds]);
        if instant {
            c.min_delay = SimDuration::ZERO;
        }
        extreme_delays(&mut c, pattern);
        c.horizon = SimTime(c.workload_end().0 + settle_time(&c).0);
        let trace = run(&c).unwrap();
        let v = oracle::check(&c, &trace).unwrap();
        prop_assert!(v.is_clean(), "{}\n{}", c.to_toml_string().unwrap(), v);
    }

    #[test]
    fn sender_inhibition_holds_under_extreme_delays(seed in any::<u64>(), pattern in any::<u64>()) {
        let mut c = generated(Protocol::SenderInhibition, seed, false, vec![ScriptKind::SilentAck, ScriptKind::CrashAt]);
        extreme_delays(&mut c, pattern);
        let trace = run(&c).unwrap();
        let v = oracle::check(&c, &trace).unwrap();
        prop_assert!(v.is_clean(), "{}\n{}", c.to_toml_string().unwrap(), v);
    }

    #[test]
    fn rst_without_faults_is_clean_and_closure_is_exact(seed in any::<u64>(), pattern in any::<u64>()) {
        let mut c = generated(Protocol::Rst, seed, false, vec![]);
        extreme_delays(&mut c, pattern);
        let trace = run(&c).unwrap();
        prop_assert!(oracle::check(&c, &trace).unwrap().is_clean());
        let hb = build_hb(&trace).unwrap();
        let brute = hb.brute_force();
        prop_assert_eq!(hb.closure(), brute.as_slice());
        prop_assert!(hb.check_laws().is_ok());
    }

    #[test]
    fn planted_inversions_are_caught(seed in any::<u64>()) {
        let c = generated(Protocol::Rst, seed, false, vec![]);
        let trace = run(&c).unwrap();
        let relation = oracle::relation_for(&c, &trace).unwrap();
        let correct = c.correct();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(mutated) = plant_inversion(&trace, &relation, &correct, &mut rng) {
            let rebuilt = oracle::relation_for(&c, &mutated).unwrap();
            prop_assert!(!check_safety(&mutated, &rebuilt, &correct).is_empty());
        }
    }
}
