//! Byzantine-tolerant causal ordering of point-to-point and multicast
//! messages, with a deterministic network simulator and a trace checker.

pub mod adversary;
pub mod config;
pub mod cs;
pub mod gen;
pub mod oracle;
pub mod presets;
pub mod report;
pub mod rst;
pub mod scenario;
pub mod si;
pub mod simnet;
pub mod trace;
pub mod types;
