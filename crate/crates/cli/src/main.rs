use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "proxtrust", version, about = "Run and analyse proximity-trust mesh scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Contact,
    TrustProxy,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario and list every violated constraint.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Override a field before validation, e.g. `epidemic.beta=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "PROXTRUST_OUT", default_value = "proxtrust-out")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Transmission mode of the epidemic.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Trace an outbreak from a recorded event log.
    Trace {
        /// Event log written by `run`.
        #[arg(long)]
        log: PathBuf,
        /// Index case; defaults to the most recently confirmed adopter.
        #[arg(long)]
        index: Option<u64>,
        /// Contact weighting; defaults to the mode the log was recorded with.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        forward_only: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario once per value of one parameter and summarise.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted path of the swept field, e.g. `epidemic.adoption_rate`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Runs per value, each with its own seed.
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long, env = "PROXTRUST_OUT", default_value = "proxtrust-out")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Contact => "contact_based",
        Mode::TrustProxy => "trust_proxy",
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Validate { config, overrides } => commands::validate(&config, &overrides),
        Command::Run {
            config,
            out,
            mut overrides,
            mode,
        } => {
            if let Some(m) = mode {
                overrides.push(format!("epidemic.mode={}", mode_name(m)));
            }
            commands::run(&config, &out, &overrides)
        }
        Command::Trace {
            log,
            index,
            mode,
            forward_only,
            out,
        } => commands::trace(
            &log,
            index,
            mode.map(|m| match m {
                Mode::Contact => proxtrust::epidemic::TransmissionMode::ContactBased,
                Mode::TrustProxy => proxtrust::epidemic::TransmissionMode::TrustProxy,
            }),
            forward_only,
            out.as_deref(),
        ),
        Command::Sweep {
            config,
            param,
            values,
            replicates,
            out,
            overrides,
        } => commands::sweep(&config, &param, &values, replicates, &out, &overrides),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
