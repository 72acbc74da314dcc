use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unifolio_cli::config::{parse_override, RunConfig};
use unifolio_cli::{compare_modes, diagnose, gen_market, run_backtest, CliError, Summary};

#[derive(Parser)]
#[command(
    name = "unifolio",
    version,
    about = "Universal portfolio backtests and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fixed, exact, sampled or dynamic backtest.
    Backtest(Common),
    /// Write a synthetic price file.
    GenMarket(Common),
    /// Sampler diagnostics against exact enumeration.
    Diagnose(Common),
    /// Exact and sampled descriptions side by side.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["fixed", "exact", "sampled", "dynamic"])]
    mode: Option<String>,
    #[arg(long)]
    grid_delta: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Any other configuration key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self, forced_mode: Option<&str>) -> Result<RunConfig, CliError> {
        let mut overrides = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("mode", self.mode.clone()),
            ("grid_delta", self.grid_delta.map(|v| v.to_string())),
            ("samples", self.samples.map(|v| v.to_string())),
            ("burn_in", self.burn_in.map(|v| v.to_string())),
            ("chains", self.chains.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                overrides.push((key.to_string(), v));
            }
        }
        if let Some(mode) = forced_mode {
            overrides.push(("mode".into(), mode.into()));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<Summary, CliError> {
    match cli.command {
        Command::Backtest(c) => run_backtest(&c.load(None)?),
        Command::GenMarket(c) => gen_market(&c.load(None)?),
        Command::Diagnose(c) => diagnose(&c.load(Some("sampled"))?),
        Command::Compare(c) => compare_modes(&c.load(Some("sampled"))?).map(|r| r.summary),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{}", summary.render());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
