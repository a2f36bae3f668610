use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use randers_cli::config::Experiment;
use randers_cli::{CliError, Overrides};

#[derive(Parser)]
#[command(name = "randers-lab", version, about = "Seeded Hamilton-Randers experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for Monte Carlo work (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Flow,
    Lipschitz,
    Concentration,
    Sphere,
    Wep,
    Gravity,
    /// Check a config without running it.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let Some(path) = &cli.config else {
        return Err(CliError::Validation(vec![randers_cli::config::Violation {
            path: "--config".into(),
            message: "required".into(),
        }]));
    };
    let expected = match cli.command {
        Command::Validate => {
            let cfg = randers_cli::validate_file(path)?;
            println!("{}: ok ({})", path.display(), cfg.experiment.name());
            return Ok(());
        }
        Command::Flow => Experiment::Flow,
        Command::Lipschitz => Experiment::Lipschitz,
        Command::Concentration => Experiment::Concentration,
        Command::Sphere => Experiment::Sphere,
        Command::Wep => Experiment::Wep,
        Command::Gravity => Experiment::Gravity,
    };
    let cfg = randers_cli::load(path)?;
    if cfg.experiment != expected {
        return Err(CliError::Validation(vec![randers_cli::config::Violation {
            path: "experiment".into(),
            message: format!("config is for `{}`, subcommand is `{}`", cfg.experiment.name(), expected.name()),
        }]));
    }
    let manifest = randers_cli::run(&cfg, &Overrides { seed: cli.seed, out: cli.out.clone() })?;
    for f in &manifest.files {
        println!("wrote {} ({} bytes)", f.name, f.bytes);
    }
    Ok(())
}
