use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use neighborfl_cli::config::{resolve_output, LearnerKind, RadiusUnit};
use neighborfl_cli::{artifacts, chart, compare, SimConfig};
use neighborfl_core::protocol::{Mode, RemovalPolicy};

#[derive(Parser)]
#[command(name = "neighborfl", version, about = "Real-time federated traffic forecasting with favorite neighbors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one starting model per device on historical data.
    Pretrain {
        #[command(flatten)]
        overrides: Overrides,
        /// Historical stream CSV.
        #[arg(long)]
        pretrain: Option<PathBuf>,
        /// Where the checkpoints go.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Run a simulation and write its artifacts.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Per-device starting checkpoints from `pretrain`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Repeat the run recorded in a manifest instead of reading a config.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Render SVG charts from finished runs.
    Chart {
        #[command(subcommand)]
        kind: ChartKind,
    },
    /// Merge run summaries into method and device tables.
    Compare {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ChartKind {
    /// Prediction vs truth of one device over a round window.
    Predictions {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        device: String,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Smoothed average MSE, one series per run.
    Smoothed {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML config; flags below take precedence.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    removal: Option<RemovalPolicy>,
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long, conflicts_with = "radius_km")]
    radius_miles: Option<f64>,
    #[arg(long)]
    radius_km: Option<f64>,
    #[arg(long)]
    learner: Option<LearnerKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Output directory; relative paths go under $NEIGHBORFL_OUTPUT_ROOT.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl Overrides {
    fn apply(self) -> anyhow::Result<SimConfig> {
        let mut c = match &self.config {
            Some(path) => SimConfig::load(path)?,
            None => SimConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {$(if let Some(v) = self.$field { $target = v; })*};
        }
        set!(mode => c.mode, removal => c.removal_policy, nu => c.nu, learner => c.learner, epochs => c.epochs, rounds => c.rounds, seed => c.seed);
        if let Some(r) = self.radius_miles {
            (c.radius, c.radius_unit) = (r, RadiusUnit::Miles);
        }
        if let Some(r) = self.radius_km {
            (c.radius, c.radius_unit) = (r, RadiusUnit::Km);
        }
        if self.metadata.is_some() {
            c.paths.metadata = self.metadata;
        }
        if self.stream.is_some() {
            c.paths.stream = self.stream;
        }
        if self.output.is_some() {
            c.paths.output = self.output;
        }
        Ok(c)
    }
}

fn output_dir(config: &SimConfig) -> anyhow::Result<PathBuf> {
    Ok(resolve_output(&SimConfig::require(&config.paths.output, "output")?))
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Pretrain { overrides, pretrain, checkpoints } => {
            let mut config = overrides.apply()?;
            if pretrain.is_some() {
                config.paths.pretrain = pretrain;
            }
            let dir = resolve_output(&checkpoints.or(config.paths.checkpoints.clone()).context("no checkpoint directory (pass --checkpoints)")?);
            let written = neighborfl_cli::pretrain(&config, &dir)?;
            log::info!("wrote {} checkpoints to {}", written.len(), dir.display());
        }
        Command::Run { overrides, checkpoints, manifest } => {
            let outcome = match manifest {
                Some(path) => {
                    let out = resolve_output(&overrides.output.context("--output is required with --manifest")?);
                    neighborfl_cli::rerun(&path, &out)?
                }
                None => {
                    let mut config = overrides.apply()?;
                    if checkpoints.is_some() {
                        config.paths.checkpoints = checkpoints;
                    }
                    let out = output_dir(&config)?;
                    neighborfl_cli::run(&config, &out)?
                }
            };
            println!(
                "{}: AVGMSE over rounds {}-{} = {}",
                outcome.method,
                outcome.summary_window.start(),
                outcome.summary_window.end(),
                outcome.avg_mse
            );
        }
        Command::Chart { kind } => match kind {
            ChartKind::Predictions { run, device, from, to, out } => {
                let svg = chart::prediction_chart(&run, &device, from..=to)?;
                artifacts::write_bytes_atomic(&resolve_output(&out), svg.as_bytes())?;
            }
            ChartKind::Smoothed { runs, out } => {
                let labelled = runs
                    .iter()
                    .map(|dir| Ok((compare::load_summary(dir)?.method, dir.as_path())))
                    .collect::<anyhow::Result<Vec<(String, &Path)>>>()?;
                let svg = chart::smoothed_chart(&labelled)?;
                artifacts::write_bytes_atomic(&resolve_output(&out), svg.as_bytes())?;
            }
        },
        Command::Compare { runs, out } => {
            let summaries = runs.iter().map(|d| compare::load_summary(d)).collect::<anyhow::Result<Vec<_>>>()?;
            let out = resolve_output(&out);
            artifacts::write_bytes_atomic(&out.join("average.csv"), compare::average_table(&summaries)?.as_bytes())?;
            artifacts::write_bytes_atomic(&out.join("devices.csv"), compare::device_table(&summaries)?.as_bytes())?;
            log::info!("wrote average.csv and devices.csv to {}", out.display());
        }
    }
    Ok(())
}
