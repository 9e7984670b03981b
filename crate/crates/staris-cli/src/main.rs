use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use staris::baselines::SchemeId;
use staris::scenario::SystemConfig;
use staris_cli::battery::{all_pass, analyze_battery, checks_to_csv, validate_battery};
use staris_cli::{desk_config, emit_convergence, rows_to_csv, run_sweep, SweepSpec, SweepVariable};

/// Simulation and optimization toolkit for surface-assisted
/// over-the-air computation.
#[derive(Parser)]
#[command(name = "staris", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario overrides as JSON; defaults to the desk-scale scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; defaults to the scenario's seed field.
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence traces of the coupled scheme at 5, 15 and 25 dB.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Also write the final optimizer state (of the 25 dB trace).
        #[arg(long)]
        dump_state: Option<PathBuf>,
    },
    /// Vary one quantity and tabulate every scheme's final MSE.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scheme names, or "all".
        #[arg(long, default_value = "all")]
        scheme: String,
        /// One of K, K_r, M, N, snr_db.
        #[arg(long)]
        variable: String,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Channel draws per sweep point.
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Fill wall_ms with measured times (breaks byte determinism).
        #[arg(long)]
        timing: bool,
    },
    /// Run the analytic invariant battery; nonzero exit on any failure.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo the signal chain against the analytic MSE.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo sample count per instance.
        #[arg(long, default_value_t = 200_000)]
        trials: usize,
        /// Also write the first instance's channel draw.
        #[arg(long)]
        dump_channels: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> staris::Result<SystemConfig> {
    match path {
        Some(p) => SystemConfig::from_json_str(&fs::read_to_string(p)?),
        None => Ok(desk_config()),
    }
}

fn write_or_print(out: &Option<PathBuf>, body: &str) -> staris::Result<()> {
    match out {
        Some(path) => fs::write(path, body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn parse_schemes(s: &str) -> staris::Result<Vec<SchemeId>> {
    if s == "all" {
        return Ok(SchemeId::ALL.to_vec());
    }
    s.split(',').map(|part| part.trim().parse()).collect()
}

fn run(cli: Cli) -> staris::Result<u8> {
    match cli.command {
        Command::Converge { common, dump_state } => {
            let cfg = load_config(&common.config)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let (csv, state) = emit_convergence(&cfg, seed)?;
            write_or_print(&common.out, &csv)?;
            if let Some(path) = dump_state {
                fs::write(path, state.to_csv())?;
            }
            Ok(0)
        }
        Command::Sweep { common, scheme, variable, values, trials, timing } => {
            let cfg = load_config(&common.config)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let spec = SweepSpec {
                variable: variable.parse::<SweepVariable>()?,
                values,
                trials,
                schemes: parse_schemes(&scheme)?,
                base: cfg,
            };
            let outcome = run_sweep(&spec, seed, timing)?;
            for failure in &outcome.failures {
                eprintln!("skipped {failure}");
            }
            write_or_print(&common.out, &rows_to_csv(&outcome.rows))?;
            Ok(0)
        }
        Command::Analyze { common } => {
            let cfg = load_config(&common.config)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let checks = analyze_battery(&cfg, seed)?;
            write_or_print(&common.out, &checks_to_csv(&checks))?;
            if all_pass(&checks) {
                Ok(0)
            } else {
                eprintln!("analyze: {} of {} checks failed", checks.iter().filter(|c| !c.pass).count(), checks.len());
                Ok(2)
            }
        }
        Command::Validate { common, trials, dump_channels } => {
            let cfg = load_config(&common.config)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let outcome = validate_battery(&cfg, seed, trials)?;
            write_or_print(&common.out, &checks_to_csv(&outcome.checks))?;
            if let Some(path) = dump_channels {
                fs::write(path, outcome.sample_channels.dump_csv())?;
            }
            if all_pass(&outcome.checks) {
                Ok(0)
            } else {
                eprintln!("validate: empirical MSE disagrees with the analytic value");
                Ok(2)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version as "errors" too; those exit 0
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
