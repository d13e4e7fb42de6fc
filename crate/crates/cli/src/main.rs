use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stiffwatch::harness::{self, output_root};
use stiffwatch::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "stiffwatch", version, about = "Adaptive UKF stiffness identification for shear frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    config: PathBuf,
    /// Output directory; overrides `output_dir` and $STIFFWATCH_OUT.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Override the random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set filter.p0=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the truth and write excitation, states and noisy measurements.
    Simulate(RunArgs),
    /// Run the adaptive filter and write estimates, γ, detections and metrics.
    Identify {
        #[command(flatten)]
        run: RunArgs,
        /// Use measurements.csv and input.csv from a previous `simulate` output.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the filter's discrete model at nominal stiffness.
        #[arg(long)]
        export_model: bool,
    },
    /// Identify over a grid of initial covariances for each structure variant.
    SweepCovariance(RunArgs),
    /// Identify over Taylor orders and process-noise levels for each variant.
    SweepModel(RunArgs),
    /// Summarize an output directory.
    Report {
        dir: PathBuf,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::load(&args.config, &overrides)
}

fn out_dir(args: &RunArgs, cfg: &RunConfig) -> PathBuf {
    output_root(Some(cfg), args.out.as_deref())
}

fn announce(dir: &Path) {
    eprintln!("wrote {}", dir.display());
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load(&args)?;
            let dir = out_dir(&args, &cfg);
            let sc = harness::simulate(&cfg, &dir)?;
            for r in &sc.truth.realized {
                println!("damage story {} at {:.3} s -> {:.1} N/m", r.parameter + 1, r.time, r.new_stiffness);
            }
            announce(&dir);
        }
        Command::Identify { run, data, export_model } => {
            let cfg = load(&run)?;
            let dir = out_dir(&run, &cfg);
            if export_model {
                harness::write_discrete_model(&cfg, &dir)?;
            }
            let result = harness::identify(&cfg, data.as_deref(), &dir);
            if let Ok(text) = harness::report(&dir) {
                print!("{text}");
            }
            result?;
            announce(&dir);
        }
        Command::SweepCovariance(args) => {
            let cfg = load(&args)?;
            let dir = out_dir(&args, &cfg);
            harness::sweep_covariance(&cfg, &dir)?;
            print!("{}", harness::report(&dir)?);
            announce(&dir);
        }
        Command::SweepModel(args) => {
            let cfg = load(&args)?;
            let dir = out_dir(&args, &cfg);
            harness::sweep_model(&cfg, &dir)?;
            print!("{}", harness::report(&dir)?);
            announce(&dir);
        }
        Command::Report { dir } => print!("{}", harness::report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors, which is reserved for divergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_divergence() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
