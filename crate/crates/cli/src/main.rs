//! `mfglab`: runs one experiment from a JSON config and writes its outputs
//! and `manifest.json` to the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfglab::runner::{self, Command, ExperimentConfig, RunManifest, EXIT_CONFIG};

#[derive(Parser, Debug)]
#[command(name = "mfglab", version, about = "Stochastic mean field game experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; its `command`, if present, must match the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads; defaults to MFG_LAB_THREADS, then to the rayon default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Prints the manifest instead of a one-line summary.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Solves the forward-backward system on the noise tree.
    Simulate,
    /// Evaluates both sides of the Carleman estimates on synthetic data.
    VerifyCarleman,
    /// Solves perturbed twin pairs and fits the stability constants.
    StabilityTwin,
    /// Reconstructs the source from final-time and boundary traces.
    InvertSource(InvertFlags),
    /// Runs every module's definitional checks.
    Selftest,
}

#[derive(Args, Debug)]
struct InvertFlags {
    /// Fixed Tikhonov weight; without it the discrepancy principle picks one.
    #[arg(long)]
    alpha: Option<f64>,
    /// Relative Gaussian noise level of the observations.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    weight_lambda: Option<f64>,
    #[arg(long)]
    weight_mu: Option<f64>,
    /// Time cutoff of the misfit weight.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iters: Option<u64>,
}

impl Sub {
    fn command(&self) -> Command {
        match self {
            Sub::Simulate => Command::Simulate,
            Sub::VerifyCarleman => Command::VerifyCarleman,
            Sub::StabilityTwin => Command::StabilityTwin,
            Sub::InvertSource(_) => Command::InvertSource,
            Sub::Selftest => Command::Selftest,
        }
    }
}

fn build_config(cli: &Cli) -> mfglab::Result<ExperimentConfig> {
    let command = cli.command.command();
    let mut config = match &cli.common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    match config.command {
        Some(c) if c != command => {
            return Err(mfglab::Error::Config(format!(
                "config is for '{}' but the subcommand is '{}'",
                c.name(),
                command.name()
            )))
        }
        _ => config.command = Some(command),
    }
    if let Some(s) = cli.common.seed {
        config.seed = s;
    }
    if let Some(d) = &cli.common.output_dir {
        config.output_dir = Some(d.clone());
    }
    if let Sub::InvertSource(f) = &cli.command {
        let inv = &mut config.inversion;
        if f.alpha.is_some() {
            inv.alpha = f.alpha;
        }
        if let Some(v) = f.noise {
            inv.noise = v;
        }
        if let Some(v) = f.weight_lambda {
            inv.weight_lambda = v;
        }
        if let Some(v) = f.weight_mu {
            inv.weight_mu = v;
        }
        if f.eps.is_some() {
            inv.eps = f.eps;
        }
        if let Some(v) = f.max_iters {
            inv.max_iters = v;
        }
    }
    Ok(config)
}

fn threads(cli: &Cli) -> mfglab::Result<Option<usize>> {
    if let Some(t) = cli.common.threads {
        return Ok(Some(t));
    }
    match std::env::var("MFG_LAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| mfglab::Error::Config(format!("MFG_LAB_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn summary(m: &RunManifest) -> String {
    let dir = runner::output_dir(&m.config);
    let mut s = format!(
        "{} {}: {:?} in {:.2}s, {} outputs in {}",
        m.command,
        m.seed,
        m.status,
        m.wall_clock_seconds,
        m.outputs.len(),
        dir.display()
    );
    let failed = m.checks.iter().filter(|c| !c.passed).count();
    if !m.checks.is_empty() {
        s.push_str(&format!(", checks {}/{}", m.checks.len() - failed, m.checks.len()));
    }
    if let Some(f) = &m.failure {
        s.push_str(&format!("\nerror: {f}"));
    }
    s
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let prepared = build_config(&cli).and_then(|c| Ok((c, threads(&cli)?)));
    let (config, threads) = match prepared {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let manifest = match threads {
        Some(t) => match runner::with_threads(t, || runner::run(&config)) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        None => runner::run(&config),
    };
    if cli.common.json {
        println!("{}", serde_json::to_string_pretty(&manifest).unwrap_or_default());
    } else if manifest.exit_code == 0 {
        println!("{}", summary(&manifest));
    } else {
        eprintln!("{}", summary(&manifest));
    }
    ExitCode::from(manifest.exit_code as u8)
}
