use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldqbd_cli::{run_command, AnalysisConfig, CliError, Command};

/// Extremes of level-dependent quasi-birth-death processes.
#[derive(Parser)]
#[command(name = "ldqbd", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Distribution of the maximum level: columns i, cdf, pmf.
    Maxlevel,
    /// Joint law of the maximum level, the phase and the time it is reached.
    Jointlaw,
    /// Conditional mean peak times of the SIR model.
    Table1,
    /// Compare the analytic law with the exact oracle and with simulation.
    Validate,
    /// Monte-Carlo estimates of the joint law.
    Simulate,
}

#[derive(Args)]
struct Overrides {
    /// TOML analysis configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replications: Option<u64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    level_cap: Option<usize>,
    /// Probability level of the reported window, e.g. 0.95.
    #[arg(long, global = true)]
    quantile: Option<f64>,
    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,
}

impl Overrides {
    fn apply(&self, config: &mut AnalysisConfig) {
        let run = &mut config.run;
        if let Some(v) = self.seed {
            run.seed = v;
        }
        if let Some(v) = self.replications {
            run.replications = v;
        }
        if let Some(v) = self.epsilon {
            run.epsilon = v;
        }
        if let Some(v) = self.level_cap {
            run.level_cap = v;
        }
        if let Some(v) = self.quantile {
            run.quantile = v;
        }
        if let Some(p) = &self.out {
            config.output.path = Some(p.clone());
        }
        config.output.json |= self.json;
    }
}

fn run(cli: &Cli) -> Result<Option<CliError>, CliError> {
    let command = match cli.command {
        Cmd::Maxlevel => Command::MaxLevel,
        Cmd::Jointlaw => Command::JointLaw,
        Cmd::Table1 => Command::Table1,
        Cmd::Validate => Command::Validate,
        Cmd::Simulate => Command::Simulate,
    };
    let mut config = match &cli.overrides.config {
        Some(path) => Some(AnalysisConfig::load(path)?),
        None if command == Command::Table1 => Some(ldqbd_cli::config::default_table_config()),
        None => None,
    };
    if let Some(c) = config.as_mut() {
        cli.overrides.apply(c);
    }
    let report = run_command(command, config.as_ref())?;
    let output = config.as_ref().map(|c| &c.output);
    let text = if output.is_some_and(|o| o.json) || cli.overrides.json {
        report.table.to_json(command.name())
    } else {
        report.table.to_csv()
    };
    match output.and_then(|o| o.path.as_ref()).or(cli.overrides.out.as_ref()) {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Output {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Output {
                    path: "standard output".into(),
                    reason: e.to_string(),
                })?
        }
    }
    Ok(report.failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let failure = match run(&cli) {
        Ok(None) => return ExitCode::SUCCESS,
        Ok(Some(e)) | Err(e) => e,
    };
    eprintln!("ldqbd: {failure}");
    ExitCode::from(failure.exit_code() as u8)
}
