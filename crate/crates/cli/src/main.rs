use std::io::{stderr, stdout};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use netstab::{DriftMode, Subset};
use netstab_cli::commands::{
    cmd_analyze, cmd_simulate, cmd_sweep, cmd_validate, AnalysisSettings, AnalyzeArgs, SimulateArgs, SweepArgs,
    ValidateArgs,
};
use netstab_cli::error::exit;

#[derive(Parser)]
#[command(name = "netstab", version, about = "Stability classification for two-station reentrant networks")]
struct Cli {
    /// Worker threads for sweeps and replications (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Drift source: numeric, closed or both.
    #[arg(long, default_value = "both", value_parser = parse_mode)]
    mode: DriftMode,
    /// Largest truncation level for the induced chains.
    #[arg(long, default_value_t = 512)]
    level_cap: usize,
    /// Box radius for the semi-irreducibility probe.
    #[arg(long, default_value_t = 2)]
    probe_radius: usize,
    /// Skip the probe.
    #[arg(long)]
    assume_semi_irreducible: bool,
}

impl Common {
    fn settings(&self) -> AnalysisSettings {
        AnalysisSettings {
            mode: self.mode,
            level_cap: self.level_cap,
            probe_radius: self.probe_radius,
            assume_semi_irreducible: self.assume_semi_irreducible,
        }
    }
}

fn parse_mode(s: &str) -> Result<DriftMode, String> {
    s.parse().map_err(|e: netstab::Error| e.to_string())
}

fn parse_subset(s: &str) -> Result<Subset, String> {
    s.parse().map_err(|e: netstab::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and print diagnostics.
    Validate {
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        probe_radius: usize,
        /// Write the generator on [0,L]^4 as triplets `row col value`.
        #[arg(long)]
        export_q: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        export_level: usize,
    },
    /// Classify a model and emit the report JSON.
    Analyze {
        model: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        certificate: bool,
        #[arg(long)]
        spiral: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        spiral_csv: Option<PathBuf>,
    },
    /// Same as `analyze --certificate`.
    Certificate {
        model: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the model over a range of one parameter.
    Sweep {
        model: PathBuf,
        sweep: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the network, optionally with saturated queues.
    Simulate {
        model: PathBuf,
        #[arg(long, default_value_t = 1e4)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        replications: usize,
        /// Queues held saturated, e.g. `1,2,3,4` or `N`.
        #[arg(long, value_parser = parse_subset)]
        saturate: Option<Subset>,
        /// Directory for summary.json and trajectory CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = netstab::simulator::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        burn_in: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<i32, netstab_cli::error::CliError> {
    let (mut out, mut err) = (stdout().lock(), stderr());
    match cli.command {
        Command::Validate { model, probe_radius, export_q, export_level } => {
            cmd_validate(&model, &ValidateArgs { probe_radius, export_q, export_level }, &mut out)
        }
        Command::Analyze { model, common, certificate, spiral, out: o, spiral_csv } => {
            let args = AnalyzeArgs { settings: common.settings(), certificate, spiral, out: o, spiral_csv };
            cmd_analyze(&model, &args, &mut out, &mut err)
        }
        Command::Certificate { model, common, out: o } => {
            let args = AnalyzeArgs { settings: common.settings(), certificate: true, spiral: false, out: o, spiral_csv: None };
            cmd_analyze(&model, &args, &mut out, &mut err)
        }
        Command::Sweep { model, sweep, common, out: o } => {
            cmd_sweep(&model, &sweep, &SweepArgs { settings: common.settings(), out: o }, &mut out)
        }
        Command::Simulate { model, horizon, seed, replications, saturate, out: o, samples, burn_in, common } => {
            let args = SimulateArgs {
                horizon,
                seed,
                replications,
                saturate,
                out: o,
                samples,
                burn_in,
                settings: common.settings(),
            };
            cmd_simulate(&model, &args, &mut out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::INTERNAL as u8);
        }
    }
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
