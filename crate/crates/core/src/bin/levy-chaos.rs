use clap::{Parser, Subcommand};
use levy_chaos::chaos_harness::{run_command, Command, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "levy-chaos", version, about = "Stable McKean-Vlasov OU simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Args {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Root seed; defaults to the `seed` entry of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Particle simulation and the mean-flow check.
    Simulate(Args),
    /// Propagation-of-chaos sweep and rate fits.
    RateFit(Args),
    /// Fourier density inversion and moment exponents.
    Density(Args),
    /// Itô formula residual.
    ItoCheck(Args),
    /// Backward Kolmogorov residual and flow constancy.
    PdeResidual(Args),
    /// Particle versus measure generator gap.
    GeneratorGap(Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::RateFit(a) => (Command::RateFit, a),
        Cmd::Density(a) => (Command::Density, a),
        Cmd::ItoCheck(a) => (Command::ItoCheck, a),
        Cmd::PdeResidual(a) => (Command::PdeResidual, a),
        Cmd::GeneratorGap(a) => (Command::GeneratorGap, a),
    };
    let result = ExperimentConfig::load(&args.config).and_then(|cfg| {
        let seed = args.seed.unwrap_or(cfg.seed);
        run_command(cmd, &cfg, seed, &args.out)
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed; see {}", args.out.display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
