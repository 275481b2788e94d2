use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use decentsim::algorithms::AlgorithmKind;
use decentsim::harness::{self, output::render_report, Preset, RawConfig};
use decentsim::Error;

#[derive(Parser)]
#[command(name = "decentsim", version, about = "Decentralized stochastic optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point of a configuration file.
    Run {
        config: PathBuf,
        /// Override a key, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a named preset, optionally overriding its default configuration.
    Preset {
        name: String,
        /// File whose keys replace the preset defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the algorithm identifiers.
    ListAlgorithms,
    /// Print the preset names.
    ListPresets,
    /// Parse and check a configuration without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn read(path: &PathBuf) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load(path: &PathBuf, overrides: &[String]) -> Result<harness::ExperimentConfig, Failure> {
    let mut raw = RawConfig::parse(&read(path)?)?;
    for o in overrides {
        raw.apply_override(o)?;
    }
    Ok(harness::config::from_raw(&raw)?)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let outcome = harness::run_experiment(&cfg)?;
            let dir = outcome.write(&cfg)?;
            print!("{}", render_report(&outcome.report));
            println!("\nartifacts written to {}", dir.display());
        }
        Command::Preset {
            name,
            config,
            overrides,
        } => {
            let preset: Preset = name.parse()?;
            let text = config.as_ref().map(read).transpose()?;
            let cfg = preset.config(text.as_deref(), &overrides)?;
            let outcome = harness::run_preset(preset, &cfg)?;
            let dir = outcome.write(&cfg)?;
            print!("{}", render_report(&outcome.report));
            println!("\nartifacts written to {}", dir.display());
        }
        Command::ListAlgorithms => {
            for id in AlgorithmKind::IDS {
                println!("{id}");
            }
        }
        Command::ListPresets => {
            for p in Preset::ALL {
                println!("{}", p.name());
            }
        }
        Command::Validate { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let points = harness::validate_config(&cfg)?;
            println!("{}: ok ({points} sweep points)", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
