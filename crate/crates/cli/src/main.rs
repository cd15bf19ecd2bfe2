use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lie_mef::synth::load_pose_file;
use lie_mef_cli::commands;
use lie_mef_cli::config::{ConfigError, ExperimentConfig, Overrides};
use lie_mef_cli::io::load_observations;

#[derive(Parser, Debug)]
#[command(name = "lie-mef", version, about = "Minimum energy filtering of camera motion on SE(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a camera track and its observations.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Directory receiving poses.txt, the observations and config.toml.
        #[arg(long, default_value = "sim")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run the filter on an observation file.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Observation file (.csv, or .jsonl for JSON lines).
        #[arg(long)]
        observations: PathBuf,
        /// Camera poses for the error columns.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Results CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a grid of filter orders, noise models and settings.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the minimum energy filter and the extended Kalman filter side by side.
    CompareEkf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; flags below take precedence.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    s1: Option<f64>,
    #[arg(long)]
    s2: Option<f64>,
    #[arg(long)]
    q_scale: Option<f64>,
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Noise kind: none, AG, AU, MG or MU.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    variance: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            order: self.order,
            alpha: self.alpha,
            delta: self.delta,
            s1: self.s1,
            s2: self.s2,
            q_scale: self.q_scale,
            n_obs: self.n_obs,
            frames: self.frames,
            noise: self.noise.clone(),
            variance: self.variance,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, out_dir, format } => {
            let cfg = common.resolve()?;
            let name = match format {
                Format::Csv => "observations.csv",
                Format::Jsonl => "observations.jsonl",
            };
            commands::simulate(&cfg, &out_dir, name)
        }
        Command::Filter {
            common,
            observations,
            truth,
            output,
        } => {
            let cfg = common.resolve()?;
            if !observations.exists() {
                return Err(ConfigError(format!("observation file {} does not exist", observations.display())).into());
            }
            let frames = load_observations(&observations)?;
            let truth = match truth {
                Some(p) => Some(load_pose_file(&p)?),
                None => None,
            };
            commands::filter(&cfg, &frames, truth.as_ref())?.save(output.as_deref())
        }
        Command::Sweep { common, output } => commands::sweep(&common.resolve()?)?.save(output.as_deref()),
        Command::CompareEkf { common, output } => commands::compare_ekf(&common.resolve()?)?.save(output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
