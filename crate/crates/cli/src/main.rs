use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsqkd_cli::config;
use fsqkd_cli::{run, Command, ConfigError, RunError, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "fsqkd",
    version,
    about = "Finite-size CV-QKD key rates over fading free-space channels"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a transmissivity ensemble and its histogram.
    Sample(Common),
    /// Channel moments and effective parameters.
    Moments(Common),
    /// Key rates for the configured strategies.
    Keyrate(Common),
    /// Key rate against the post-selection threshold.
    SweepPs(Common),
    /// Key rate against the number of clusters.
    SweepCluster(Common),
    /// Parameter estimation from a data batch, simulated if none is given.
    Estimate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario, used alone or as the base of --config.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Overrides the seed in the configuration.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; defaults to the configured one, then `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn load(c: &Common) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), preset) => config::load_config_with(path, preset.as_deref())?,
        (None, Some(name)) => config::preset_config(name)?,
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match &cli.cmd {
        Cmd::Sample(c) => (Command::Sample, c),
        Cmd::Moments(c) => (Command::Moments, c),
        Cmd::Keyrate(c) => (Command::Keyrate, c),
        Cmd::SweepPs(c) => (Command::SweepPs, c),
        Cmd::SweepCluster(c) => (Command::SweepCluster, c),
        Cmd::Estimate(c) => (Command::Estimate, c),
    };
    let result = load(common).map_err(RunError::from).and_then(|cfg| {
        let out = common
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        run(cmd, &cfg, &out)
    });
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fsqkd {}: {e}", cmd.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
