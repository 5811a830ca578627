//! Command-line front end: analysis, simulation, MPR estimation, design and
//! figure reproduction.

mod commands;
mod output;
mod presets;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csma_mpr::config::ScenarioConfig;
use csma_mpr::exec::configure_threads;
use csma_mpr::Error;

use commands::{Part, PhyParams, Request};
use output::{read_manifest, render, Format, Manifest};
use presets::{Effort, Preset};

const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "csma-mpr", version, about = "Inhomogeneous persistent CSMA with multi-packet reception")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Directory for output files (standard output when absent).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Scenario file (TOML, or JSON with a .json extension).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in figure or table preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct SimArgs {
    /// Slots per replication.
    #[arg(long)]
    horizon: Option<u64>,
    /// Slots discarded before measuring.
    #[arg(long)]
    warmup: Option<u64>,
    /// Comma-separated seeds, one replication each.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium classification, utilizations and delays.
    Analyze {
        #[command(flatten)]
        source: Source,
        /// Classify by a dense grid scan when the MPR law is not unimodal.
        #[arg(long)]
        grid_fallback: bool,
    },
    /// Slot-level simulation.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        sim: SimArgs,
        /// Decode from sampled fading channels using the config's [phy] table.
        #[arg(long)]
        phy_outcomes: bool,
    },
    /// Monte Carlo estimate of the MPR success probabilities.
    Qprob {
        #[arg(long)]
        config: Option<PathBuf>,
        /// The three tabulated configurations with every decoder.
        #[arg(long)]
        table1: bool,
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long)]
        antennas: Option<usize>,
        #[arg(long)]
        message_rate: Option<f64>,
        /// Comma-separated subset of SIC, CF, SCF, JD.
        #[arg(long, value_delimiter = ',')]
        decoder: Option<Vec<String>>,
        /// Comma-separated numbers of simultaneous users.
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        users: Vec<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Transmission probabilities meeting per-class total-delay targets.
    Design {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated targets in slots (default: the config's [design] table).
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
    },
    /// Analytic and simulated data behind a figure or table.
    Reproduce {
        #[arg(value_enum)]
        preset: Preset,
        #[command(flatten)]
        sim: SimArgs,
        /// Channel draws for the success-probability estimates.
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
    },
    /// Re-run the request recorded in an output file.
    Replay { file: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ConfigInvalid(_) | Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Infeasible(_) => EXIT_INFEASIBLE,
            _ => EXIT_RUNTIME,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    Ok(ScenarioConfig::load(path)?)
}

const DEFAULT_HORIZON: u64 = 1_000_000;

fn effort(sim: &SimArgs, samples: usize) -> Effort {
    Effort {
        horizon: sim.horizon.unwrap_or(DEFAULT_HORIZON),
        seeds: sim.seeds.clone().unwrap_or_else(|| vec![1, 2, 3]),
        samples,
    }
}

fn preset_request(preset: Preset, part: Part, sim: &SimArgs) -> Request {
    Request::Reproduce { preset, part, effort: effort(sim, 20_000) }
}

fn build(command: Command) -> Result<Request, Failure> {
    Ok(match command {
        Command::Analyze { source, grid_fallback } => match (source.config, source.preset) {
            (Some(path), None) => Request::Analyze { scenario: load(&path)?, grid_fallback },
            (None, Some(p)) => preset_request(p, Part::Analytic, &SimArgs { horizon: None, warmup: None, seeds: None }),
            _ => return Err(usage("analyze needs --config or --preset")),
        },
        Command::Simulate { source, sim, phy_outcomes } => match (source.config, source.preset) {
            (Some(path), None) => {
                let scenario = load(&path)?;
                let section = scenario.sim.clone().unwrap_or_default();
                let horizon = sim.horizon.or(section.horizon).unwrap_or(DEFAULT_HORIZON);
                let warmup = sim.warmup.or(section.warmup).unwrap_or(horizon / 10);
                let seeds = sim.seeds.or(section.seeds).unwrap_or_else(|| vec![1]);
                let phy_outcomes = if phy_outcomes {
                    let p = scenario.phy.as_ref().ok_or_else(|| usage("--phy-outcomes needs a [phy] table"))?;
                    Some(PhyParams::from_section(p))
                } else {
                    None
                };
                Request::Simulate { scenario, horizon, warmup, seeds, phy_outcomes }
            }
            (None, Some(p)) => preset_request(p, Part::Simulated, &sim),
            _ => return Err(usage("simulate needs --config or --preset")),
        },
        Command::Qprob { config, table1, snr_db, antennas, message_rate, decoder, users, samples, seed } => {
            if table1 {
                return Ok(Request::Table1 { samples: samples.unwrap_or(20_000), seed: seed.unwrap_or(1) });
            }
            let section = match &config {
                Some(path) => load(path)?.phy.unwrap_or_default(),
                None => Default::default(),
            };
            let mut phy = PhyParams::from_section(&section);
            phy.snr_db = snr_db.unwrap_or(phy.snr_db);
            phy.antennas = antennas.unwrap_or(phy.antennas);
            phy.message_rate = message_rate.unwrap_or(phy.message_rate);
            phy.samples = samples.unwrap_or(phy.samples);
            phy.seed = seed.unwrap_or(phy.seed);
            let decoders = decoder.unwrap_or_else(|| vec!["SIC".into(), "CF".into(), "SCF".into(), "JD".into()]);
            Request::Qprob { phy, decoders, users }
        }
        Command::Design { config, targets } => {
            let scenario = load(&config)?;
            let targets = targets
                .or_else(|| scenario.design.as_ref().map(|d| d.delay_targets.clone()))
                .ok_or_else(|| usage("design needs --targets or a [design] table"))?;
            if targets.iter().any(|t| !t.is_finite()) {
                return Err(usage("delay targets must be finite"));
            }
            Request::Design { scenario, targets }
        }
        Command::Reproduce { preset, sim, samples } => Request::Reproduce { preset, part: Part::Both, effort: effort(&sim, samples) },
        Command::Replay { file } => {
            let m = read_manifest(&file).map_err(usage)?;
            return Ok(m.request);
        }
    })
}

fn write(bytes: &[u8], path: Option<&Path>) -> Result<(), Failure> {
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("{}: {e}", p.display()) }),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Failure { code: EXIT_RUNTIME, message: e.to_string() }),
    }
}

/// File stem of a table: `<preset>_<part>` for presets, else the table name.
fn file_stem(request: &Request, table: &str) -> String {
    match request {
        Request::Reproduce { preset, .. } => format!("{}_{table}", preset.name()),
        _ => table.to_string(),
    }
}

/// The request that regenerates exactly one table of `request`.
fn single_table_request(request: &Request, table: &str) -> Request {
    match request {
        Request::Reproduce { preset, effort, .. } => {
            let part = if table == "simulated" { Part::Simulated } else { Part::Analytic };
            Request::Reproduce { preset: *preset, part, effort: effort.clone() }
        }
        other => other.clone(),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let replayed_table = match &cli.command {
        Command::Replay { file } => Some(read_manifest(file).map_err(usage)?.table),
        _ => None,
    };
    let request = build(cli.command)?;
    let tables = request.execute()?;
    let ext = match cli.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("{}: {e}", dir.display()) })?;
    }
    let mut stdout = Vec::new();
    for t in tables.iter().filter(|t| replayed_table.as_ref().is_none_or(|name| &t.name == name)) {
        let own = single_table_request(&request, &t.name);
        let path = cli.out.as_ref().map(|d| d.join(format!("{}.{ext}", file_stem(&request, &t.name))));
        let bytes = render(t, &Manifest::new(&own, &t.name, path.as_deref()), cli.format)
            .map_err(|m| Failure { code: EXIT_RUNTIME, message: m })?;
        match &path {
            Some(p) => {
                write(&bytes, Some(p))?;
                eprintln!("wrote {}", p.display());
            }
            None => stdout.extend(bytes),
        }
    }
    if cli.out.is_none() {
        write(&stdout, None)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("CSMA_MPR_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = configure_threads(n) {
                    eprintln!("warning: CSMA_MPR_THREADS ignored: {e}");
                }
            }
            _ => {
                eprintln!("error: CSMA_MPR_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
