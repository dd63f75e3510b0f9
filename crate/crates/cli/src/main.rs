use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use railloc_core::filters::Method;
use railloc_core::workflow::{self, EvaluateInputs, Scenario};
use railloc_core::Error;

/// Train localization and compact track mapping from GNSS and IMU data.
#[derive(Debug, Parser)]
#[command(name = "railloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML); the built-in reference scenario when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; defaults to the scenario's `out`, else `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate truth, GNSS and IMU streams.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a localization method over simulated or recorded streams.
    Localize {
        #[command(flatten)]
        common: Common,
        /// gnss, kf or imm.
        #[arg(long, value_name = "NAME")]
        method: String,
        /// Compact map to fuse with.
        #[arg(long, value_name = "PATH")]
        map: Option<PathBuf>,
        /// Directory holding gnss.jsonl and imu.jsonl.
        streams: PathBuf,
    },
    /// Build a compact map from an IMM state log and its events.
    Map {
        #[command(flatten)]
        common: Common,
        log: PathBuf,
        events: PathBuf,
    },
    /// Error CDFs and comparison tables of state logs against the truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
        /// Map whose error against `--reference` is evaluated.
        #[arg(long, value_name = "PATH")]
        map: Option<PathBuf>,
        /// Reference polyline (GeoJSON LineString or lat,lon CSV).
        #[arg(long, value_name = "PATH")]
        reference: Option<PathBuf>,
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 4,
        Error::Domain(_) | Error::Degenerate(_) | Error::Parse { .. } | Error::Io { .. } => 3,
    }
}

fn scenario(common: &Common) -> Result<(Scenario, PathBuf), Error> {
    let s = match &common.config {
        Some(p) => Scenario::load(p, common.seed)?,
        None => Scenario::reference(common.seed.unwrap_or(1)),
    };
    let out = common.out.clone().or_else(|| s.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((s, out))
}

fn print(paths: &[&Path]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { common } => {
            let (s, out) = scenario(&common)?;
            let o = workflow::simulate(&s, &out)?;
            print(&[&o.streams.truth, &o.streams.gnss, &o.streams.imu, &o.track, &o.reference, &o.manifest]);
        }
        Command::Localize {
            common,
            method,
            map,
            streams,
        } => {
            let method: Method = method.parse()?;
            let (s, out) = scenario(&common)?;
            let o = workflow::localize(&s, &streams, method, map.as_deref(), &out)?;
            print(&[&o.log]);
            if let Some(e) = &o.events {
                print(&[e]);
            }
        }
        Command::Map { common, log, events } => {
            let (s, out) = scenario(&common)?;
            let o = workflow::build_map_files(&s, &log, &events, &out)?;
            print(&[&o.map, &o.segments, &o.refinement]);
        }
        Command::Evaluate {
            common,
            truth,
            map,
            reference,
            logs,
        } => {
            let (s, out) = scenario(&common)?;
            let inputs = EvaluateInputs {
                truth: &truth,
                logs: &logs,
                reference: reference.as_deref(),
                map: map.as_deref(),
            };
            let files = workflow::evaluate(&s, &inputs, &out)?;
            print(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("railloc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
