//! `oneside`: verify, simulate and tune scenarios from the command line.
//!
//! Exit status: 0 success, 1 semantic failure (mismatch, fault, tuning
//! error), 2 usage or configuration error.

mod scenario;
mod simulate;
mod tune;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oneside::{Error, RuntimeConfig, World, WorldSpec};
use serde::Serialize;

use scenario::{Scenario, SchedulerName};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: msg.into(),
        }
    }

    pub fn semantic(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Config(_)
            | Error::Argument(_)
            | Error::Usage(_)
            | Error::Alloc { .. }
            | Error::Range { .. }
            | Error::Capacity { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "oneside",
    version,
    about = "One-sided collectives: functional verification, timing, tuning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a collective or pipeline and compare it with the dense reference.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Flip one bit of this rank's input after the reference is computed.
        #[arg(long)]
        corrupt_rank: Option<usize>,
    },
    /// Time a scenario and write a Chrome trace plus a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Tune tile sizes of a pipeline scenario and write the report.
    Tune {
        #[command(flatten)]
        common: Common,
    },
    /// Print the built-in scenario names.
    ListScenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedArg {
    Det,
    Random,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario name (see list-scenarios).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scheduler: Option<SchedArg>,
    /// Directory for JSON outputs.
    #[arg(long, default_value = "oneside-out")]
    out: PathBuf,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

impl Common {
    fn scenario(&self) -> Result<Scenario, Failure> {
        let mut sc = match (&self.config, &self.scenario) {
            (Some(p), _) => Scenario::load(p)?,
            (None, Some(n)) => scenario::builtin(n)?,
            (None, None) => return Err(Failure::config("pass --config PATH or --scenario NAME")),
        };
        if let Some(s) = self.seed {
            sc.seed = Some(s);
        }
        if let Some(m) = self.scheduler {
            sc.scheduler = Some(match m {
                SchedArg::Det => SchedulerName::Det,
                SchedArg::Random => SchedulerName::Random,
            });
        }
        if let Some(t) = self.timeout_ms {
            sc.timeout_ms = Some(t);
        }
        sc.validate()?;
        Ok(sc)
    }
}

fn world(sc: &Scenario, timed: bool) -> Result<World, Failure> {
    let cfg = RuntimeConfig {
        timeout: sc
            .timeout_ms
            .map_or(RuntimeConfig::default().timeout, Duration::from_millis),
        seed: sc.seed(),
        timing: if timed {
            Some(Arc::new(sc.timing()?))
        } else {
            None
        },
        ..RuntimeConfig::default()
    };
    let spec = WorldSpec::new(sc.n_nodes, sc.local_world).with_heap(sc.heap_bytes);
    Ok(World::with_config(spec, cfg)?)
}

fn write_json(dir: &Path, name: &str, v: &impl Serialize) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::semantic(e.to_string()))?;
    std::fs::write(&path, text + "\n")
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::ListScenarios => {
            for n in scenario::builtin_names() {
                let sc = scenario::builtin(n)?;
                let verbs = if sc.kind.is_functional() {
                    "verify simulate"
                } else {
                    "simulate"
                };
                let tune = if sc.tune.is_some() { " tune" } else { "" };
                println!("{n:<22} {}x{}  {verbs}{tune}", sc.n_nodes, sc.local_world);
            }
            Ok(())
        }
        Cmd::Verify {
            common,
            corrupt_rank,
        } => {
            let sc = common.scenario()?;
            if !sc.kind.is_functional() {
                return Err(Failure::config(format!(
                    "`{}` has no functional run; use simulate",
                    sc.name
                )));
            }
            let w = world(&sc, false)?;
            let (report, _) = verify::run(&w, &sc, corrupt_rank)?;
            let path = write_json(&common.out, "verify.json", &report)?;
            println!(
                "{} {}: {} of {} values differ ({})",
                if report.passed { "PASS" } else { "FAIL" },
                sc.name,
                report.mismatch_count,
                report.compared,
                path.display()
            );
            for m in report.mismatches.iter().take(8) {
                println!(
                    "  rank {} index {}: expected {} got {}",
                    m.rank, m.index, m.expected, m.actual
                );
            }
            if report.passed {
                Ok(())
            } else {
                Err(Failure::semantic("output differs from the reference"))
            }
        }
        Cmd::Simulate { common } => {
            let sc = common.scenario()?;
            let w = if sc.kind.is_functional() {
                Some(world(&sc, true)?)
            } else {
                None
            };
            let sim = simulate::run(&sc, w.as_ref())?;
            if let Some(t) = &sim.timeline {
                write_json(&common.out, "trace.json", &t.to_chrome_trace())?;
            }
            let path = write_json(&common.out, "summary.json", &sim.summary)?;
            print!("{}:", sc.name);
            if sim.timeline.is_some() {
                print!(" makespan {:.3} us", sim.summary.makespan_us);
            }
            if let Some(th) = &sim.summary.threshold {
                print!(" required reduction bandwidth {:.1} GB/s", th.required_gbps);
            }
            if let Some(t) = sim.summary.max_tail_us {
                print!(", max tail {t:.3} us");
            }
            println!(" ({})", path.display());
            if sim.summary.verified == Some(false) {
                return Err(Failure::semantic(
                    "timed run output differs from the reference",
                ));
            }
            Ok(())
        }
        Cmd::Tune { common } => {
            let sc = common.scenario()?;
            let w = world(&sc, true)?;
            let report = tune::run(&w, &sc)?;
            let path = write_json(&common.out, "tune_report.json", &report)?;
            println!(
                "{}: chose {:?} ({})",
                sc.name,
                report.chosen.values,
                path.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
