use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use byzcausal::config::{ScenarioConfig, Severity};
use byzcausal::presets;
use byzcausal::report::{run_and_check, sweep, sweep_table, SweepError};
use byzcausal::simnet::SimError;
use clap::{Args, Parser, Subcommand};

/// Runs causal-ordering protocols on a simulated network and checks the
/// traces they produce.
#[derive(Parser)]
#[command(name = "byzcausal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario, write its trace and print a verdict.
    Run(RunArgs),
    /// Queue delay under Channel Sync for several sent-control timers.
    Sweep(SweepArgs),
    /// List the named scenarios, or print one as a config file.
    Presets {
        /// Print this preset's config instead of the list.
        #[arg(long)]
        show: Option<String>,
    },
}

/// Where a scenario comes from. Later sources override earlier ones:
/// preset, then config file, then individual flags.
#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// rst, sender_inhibition or channel_sync.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    delta: Option<u64>,
    #[arg(long)]
    delta_s: Option<u64>,
    #[arg(long)]
    delta_r: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    multicast: bool,
    #[arg(long)]
    mcast_hide_group: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Trace output, one JSON object per line.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Findings and summary, one JSON object per line.
    #[arg(long, value_name = "PATH")]
    verdict: Option<PathBuf>,
    /// Check the trace (the default).
    #[arg(long, overrides_with = "no_check")]
    check: bool,
    /// Only simulate.
    #[arg(long)]
    no_check: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated sent-control timers, e.g. `0,3,6`.
    #[arg(long = "delta-s-values", value_name = "LIST", default_value = "")]
    values: String,
    /// Comma-separated delay seeds.
    #[arg(long, value_name = "LIST", default_value = "1,2,3,4,5")]
    seeds: String,
    /// Table output; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

enum Failure {
    /// Bad input: exit 2.
    Config(String),
    /// The run did not show what it should: exit 1.
    Unexpected(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Presets { show } => list_presets(show),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unexpected(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(args: &ScenarioArgs, default_preset: Option<&str>) -> Result<ScenarioConfig, Failure> {
    let preset = args.preset.as_deref().or(if args.config.is_none() { default_preset } else { None });
    let mut cfg = match preset {
        Some(name) => Some(presets::preset(name, 0).ok_or_else(|| {
            Failure::Config(format!("unknown preset {name:?}; known: {}", presets::NAMES.join(", ")))
        })?),
        None => None,
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let loaded = match &cfg {
            Some(base) => base.overlay_toml(&text),
            None => ScenarioConfig::from_toml_str(&text),
        };
        cfg = Some(loaded.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?);
    }
    let cfg = cfg.ok_or_else(|| Failure::Config("give --preset or --config".into()))?;
    let overlay = flag_overlay(args);
    let cfg = if overlay.is_empty() {
        cfg
    } else {
        cfg.overlay_toml(&overlay).map_err(|e| Failure::Config(format!("flags: {e}")))?
    };
    let problems = cfg.validate();
    for v in &problems {
        eprintln!("{v}");
    }
    if problems.iter().any(|v| v.severity == Severity::Error) {
        return Err(Failure::Config("scenario is not runnable".into()));
    }
    Ok(cfg)
}

/// Flags as a TOML document, so they go through the same parser and merge
/// as config files.
fn flag_overlay(args: &ScenarioArgs) -> String {
    let mut out = String::new();
    let mut int = |key: &str, v: Option<u64>| {
        if let Some(v) = v {
            out.push_str(&format!("{key} = {v}\n"));
        }
    };
    int("n", args.n.map(u64::from));
    int("delta", args.delta);
    int("delta_s", args.delta_s);
    int("delta_r", args.delta_r);
    int("seed", args.seed);
    int("horizon", args.horizon);
    if let Some(p) = &args.protocol {
        out.push_str(&format!("protocol = {p:?}\n"));
    }
    if args.multicast {
        out.push_str("multicast = true\n");
    }
    if args.mcast_hide_group {
        out.push_str("mcast_hide_group = true\n");
    }
    out
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = load(&args.scenario, None)?;
    let check = !args.no_check;
    let (trace, mut report) = match run_and_check(&cfg, check) {
        Ok(done) => done,
        Err(SimError::Invalid(v)) => {
            return Err(Failure::Config(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))
        }
        Err(SimError::Aborted { at, reason, trace }) => {
            if let Some(path) = &args.out {
                trace.write_jsonl(fs::File::create(path)?)?;
            }
            return Err(Failure::Unexpected(format!("run aborted at {at}: {reason}")));
        }
    };
    if let Some(path) = &args.out {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        trace.write_jsonl(&mut w)?;
        w.flush()?;
        report.trace_path = Some(path.display().to_string());
    }
    if let (Some(path), Some(v)) = (&args.verdict, &report.verdict) {
        fs::write(path, v.to_jsonl())?;
    }
    print!("{report}");
    if report.as_expected() {
        Ok(())
    } else {
        Err(Failure::Unexpected(format!("unexpected verdict: wanted {:?}", cfg.expect)))
    }
}

fn numbers(list: &str, what: &str) -> Result<Vec<u64>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Failure::Config(format!("{what}: {s:?} is not a number"))))
        .collect()
}

fn run_sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = load(&args.scenario, Some("cs-clean"))?;
    let values = numbers(&args.values, "--delta-s-values")?;
    let seeds = numbers(&args.seeds, "--seeds")?;
    let rows = sweep(&cfg, &values, &seeds).map_err(|e| match e {
        SweepError::Sim(SimError::Aborted { at, reason, .. }) => {
            Failure::Unexpected(format!("run aborted at {at}: {reason}"))
        }
        other => Failure::Config(other.to_string()),
    })?;
    let table = sweep_table(&rows);
    match &args.out {
        Some(path) => fs::write(path, &table)?,
        None => print!("{table}"),
    }
    let over: usize = rows.iter().map(|r| r.bound_violations).sum();
    if over > 0 {
        return Err(Failure::Unexpected(format!("{over} queue delays over the bound")));
    }
    Ok(())
}

fn list_presets(show: Option<String>) -> Result<(), Failure> {
    if let Some(name) = show {
        let cfg = presets::preset(&name, 0).ok_or_else(|| Failure::Config(format!("unknown preset {name:?}")))?;
        print!("{}", cfg.to_toml_string().map_err(|e| Failure::Config(e.to_string()))?);
        return Ok(());
    }
    for name in presets::NAMES {
        println!("{name:<28}{}", presets::describe(name).unwrap_or(""));
    }
    Ok(())
}
