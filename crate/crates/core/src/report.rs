//! Run summaries and the delta_s latency sweep.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::config::{Protocol, ScenarioConfig};
use crate::oracle::{self, cs_bound, Verdict};
use crate::scenario;
use crate::simnet::SimError;
use crate::trace::{EventKind, Trace};
use crate::types::{EnvelopeKind, MsgId, ProcessId, SimDuration, SimTime};

/// Counts derived from a trace alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    /// Application message copies sent.
    pub sent: usize,
    pub delivered: usize,
    /// Push-to-delivery delay over every delivered application message.
    pub max_queue_delay: Option<u64>,
    pub mean_queue_delay: Option<f64>,
    pub timeouts: BTreeMap<ProcessId, usize>,
}

impl Stats {
    pub fn from_trace(trace: &Trace) -> Stats {
        let mut s = Stats::default();
        let mut pushed: BTreeMap<(ProcessId, MsgId), SimTime> = BTreeMap::new();
        let mut delays = Vec::new();
        for e in trace.iter() {
            let app = e.envelope_kind() == Some(EnvelopeKind::App);
            let msg = e.envelope.as_ref().and_then(|env| env.msg);
            match e.kind {
                EventKind::Send if app => s.sent += 1,
                EventKind::Push if app => {
                    if let Some(m) = msg {
                        pushed.insert((e.process, m), e.time);
                    }
                }
                EventKind::Deliver => {
                    s.delivered += 1;
                    if let Some(at) = msg.and_then(|m| pushed.remove(&(e.process, m))) {
                        delays.push((e.time - at).0);
                    }
                }
                EventKind::Timeout => *s.timeouts.entry(e.process).or_default() += 1,
                _ => {}
            }
        }
        s.max_queue_delay = delays.iter().copied().max();
        if !delays.is_empty() {
            s.mean_queue_delay = Some(delays.iter().sum::<u64>() as f64 / delays.len() as f64);
        }
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub trace_path: Option<String>,
    pub verdict: Option<Verdict>,
    pub stats: Stats,
}

impl RunReport {
    /// Whether the run showed what the config expects.
    pub fn as_expected(&self) -> bool {
        use crate::config::Expectation::*;
        let Some(v) = &self.verdict else { return true };
        match self.config.expect {
            Clean => v.is_clean(),
            LivenessViolation => !v.liveness_violations.is_empty(),
            SafetyViolation => !v.safety_violations.is_empty(),
        }
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "{} n={} delta={} delta_s={} delta_r={} seed={} horizon={} byzantine={}",
            c.protocol,
            c.n,
            c.delta,
            c.delta_s,
            c.delta_r(),
            c.seed,
            c.horizon.0,
            c.byzantine.iter().map(|(p, s)| format!("{p}:{}", s.name())).collect::<Vec<_>>().join(",")
        )?;
        if let Some(path) = &self.trace_path {
            writeln!(f, "trace: {path}")?;
        }
        let s = &self.stats;
        writeln!(f, "sent {} delivered {}", s.sent, s.delivered)?;
        if let (Some(max), Some(mean)) = (s.max_queue_delay, s.mean_queue_delay) {
            writeln!(f, "queue delay: max {max} mean {mean:.2}")?;
        }
        if !s.timeouts.is_empty() {
            let t: Vec<String> = s.timeouts.iter().map(|(p, k)| format!("{p}={k}")).collect();
            writeln!(f, "timeouts: {}", t.join(" "))?;
        }
        if let Some(v) = &self.verdict {
            write!(f, "{v}")?;
            writeln!(f, "expected {:?}: {}", c.expect, if self.as_expected() { "yes" } else { "NO" })?;
        }
        Ok(())
    }
}

/// Simulates `cfg` and, when `check` is set, judges the trace.
pub fn run_and_check(cfg: &ScenarioConfig, check: bool) -> Result<(Trace, RunReport), SimError> {
    let trace = scenario::run(cfg)?;
    let verdict = check.then(|| oracle::check(cfg, &trace).expect("simulator traces are well formed"));
    let stats = Stats::from_trace(&trace);
    let report = RunReport { config: cfg.clone(), trace_path: None, verdict, stats };
    Ok((trace, report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta_s: u64,
    pub delta_r: u64,
    pub bound: u64,
    pub runs: usize,
    pub messages: usize,
    pub mean_delay: f64,
    pub max_delay: u64,
    pub bound_violations: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("no delta_s values to sweep")]
    EmptyRange,
    #[error("no seeds to sweep")]
    NoSeeds,
    #[error("sweeps need channel_sync, got {0}")]
    Protocol(Protocol),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Queue delay at correct processes for each `delta_s`, over the same
/// workload and seeds.
pub fn sweep(base: &ScenarioConfig, delta_s: &[u64], seeds: &[u64]) -> Result<Vec<SweepRow>, SweepError> {
    if base.protocol != Protocol::ChannelSync {
        return Err(SweepError::Protocol(base.protocol));
    }
    if delta_s.is_empty() {
        return Err(SweepError::EmptyRange);
    }
    if seeds.is_empty() {
        return Err(SweepError::NoSeeds);
    }
    let mut rows = Vec::new();
    for &ds in delta_s {
        let mut cfg = base.clone();
        cfg.delta_s = SimDuration(ds);
        // Keep the horizon far enough past the workload for the larger timer.
        cfg.horizon = cfg.horizon.max(SimTime(cfg.workload_end().0 + crate::gen::settle_time(&cfg).0));
        let dr = cfg.delta_r();
        let mut delays = Vec::new();
        let mut bound_violations = 0;
        for &seed in seeds {
            cfg.seed = seed;
            let trace = scenario::run(&cfg)?;
            let d = oracle::check_cs_bound(&trace, &cfg.correct(), cfg.delta_s, dr, cfg.horizon);
            bound_violations += d.violations.len();
            delays.extend(d.delays.iter().map(|(_, _, d)| d.0));
        }
        rows.push(SweepRow {
            delta_s: ds,
            delta_r: dr.0,
            bound: cs_bound(SimDuration(ds), dr).0,
            runs: seeds.len(),
            messages: delays.len(),
            mean_delay: if delays.is_empty() { 0.0 } else { delays.iter().sum::<u64>() as f64 / delays.len() as f64 },
            max_delay: delays.iter().copied().max().unwrap_or(0),
            bound_violations,
        });
    }
    Ok(rows)
}

/// Tab-separated, header first.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta_s\tdelta_r\tbound\truns\tmessages\tmean_delay\tmax_delay\tbound_violations\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.3}\t{}\t{}",
            r.delta_s, r.delta_r, r.bound, r.runs, r.messages, r.mean_delay, r.max_delay, r.bound_violations
        );
    }
    out
}
