//! `trackode` command-line front end.

mod diagnose;
mod error;
mod fit;
mod plot;
mod simulate;
mod suite;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trackode::estimate::FitConfig;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "trackode", version, about = "Parameter estimation for linear ODE models by optimal tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate θ from data and write the estimate, ū, trajectories and a plot.
    Fit(fit::FitArgs),
    /// Draw one dataset from an experiment spec.
    Simulate(simulate::SimulateArgs),
    /// Run packaged or custom Monte Carlo cells.
    Bench(suite::BenchArgs),
    /// Summarize the residual control of a completed fit.
    Diagnose(diagnose::DiagnoseArgs),
    /// Builtin models.
    Models {
        #[command(subcommand)]
        action: ModelsAction,
    },
}

#[derive(Subcommand, Debug)]
enum ModelsAction {
    /// List builtin models.
    List {
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

/// Options honored by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for starts and simulation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum RK4 steps over the horizon.
    #[arg(long)]
    pub grid_steps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "trackode-out")]
    pub out: PathBuf,
    /// Fit settings as JSON (`FitConfig`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Common {
    /// The fit configuration after applying the config file and flags.
    pub fn fit_config(&self, base: FitConfig) -> Result<FitConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = read_text(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
            }
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(g) = self.grid_steps {
            if g == 0 {
                return Err(CliError::usage("--grid-steps must be positive"));
            }
            cfg.grid_steps = g;
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn models_list(json: bool) -> Result<(), CliError> {
    let models = trackode::model::builtin_models();
    if json {
        let files: Vec<_> = models.iter().map(|m| m.to_file()).collect();
        println!("{}", serde_json::to_string_pretty(&files).map_err(CliError::from_json)?);
        return Ok(());
    }
    println!("{:<22} {:>2} {:>2} {:>8}  parameters", "name", "d", "p", "T");
    for m in &models {
        println!("{:<22} {:>2} {:>2} {:>8}  {}", m.name, m.d, m.p, m.horizon, m.param_names.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => fit::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::Bench(a) => suite::run(&a),
        Command::Diagnose(a) => diagnose::run(&a),
        Command::Models { action: ModelsAction::List { json } } => models_list(json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
