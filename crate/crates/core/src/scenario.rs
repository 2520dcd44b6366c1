//! Builds the processes a configuration describes and runs them.

use crate::adversary::Byzantine;
use crate::config::{Protocol, ScenarioConfig};
use crate::cs::{CsConfig, CsProcess};
use crate::rst::RstProcess;
use crate::si::SiProcess;
use crate::simnet::{simulate, Process, SimError};
use crate::trace::Trace;
use crate::types::ProcessId;

/// The correct protocol instance for `p`.
pub fn correct_process(cfg: &ScenarioConfig, p: ProcessId) -> Box<dyn Process> {
    match cfg.protocol {
        Protocol::Rst => Box::new(RstProcess::new(p, cfg.n)),
        Protocol::SenderInhibition => Box::new(SiProcess::new(cfg.delta, cfg.deliver_delay)),
        Protocol::ChannelSync => Box::new(CsProcess::new(
            p,
            cfg.n,
            CsConfig {
                delta_s: cfg.delta_s,
                delta_r: cfg.delta_r(),
                hide_group: cfg.mcast_hide_group,
                sent_timer_flag: cfg.sent_timer_flag,
            },
        )),
    }
}

/// One process per id, Byzantine ones wrapped in their scripts.
pub fn processes(cfg: &ScenarioConfig) -> Vec<Box<dyn Process>> {
    ProcessId::all(cfg.n)
        .map(|p| {
            let inner = correct_process(cfg, p);
            match cfg.byzantine.get(&p) {
                Some(script) => Box::new(Byzantine::new(inner, script.clone())) as Box<dyn Process>,
                None => inner,
            }
        })
        .collect()
}

/// Validates `cfg` and simulates it to the horizon.
pub fn run(cfg: &ScenarioConfig) -> Result<Trace, SimError> {
    simulate(cfg, processes(cfg))
}
