use ambientlink::cli::{self, RunOptions};
use ambientlink::Error;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ambientlink", version, about = "Passive links through ambient wave noise")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
    /// Scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for Monte Carlo runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "AMBIENTLINK_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Accept receiver separations other than half a wavelength.
    #[arg(long, global = true)]
    override_spacing: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Identity and model checks.
    Verify,
    /// Analytic link budget.
    Predict,
    /// Synthesize records and compare ECSD moments with predictions.
    Simulate,
    /// Bit error rate over the configured sweep.
    Ber,
    /// Decode an ECSD series CSV.
    Decode { series: PathBuf },
}

fn run(args: Args) -> Result<String, Error> {
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::domain(e.to_string()))?;
    }
    let opts = RunOptions {
        seed: args.seed,
        out: args.out.clone(),
        override_spacing: args.override_spacing,
    };
    let scn = match &args.config {
        Some(p) => cli::load_scenario(p, &opts)?,
        None => return Err(Error::Validation(vec!["--config is required".into()])),
    };
    for w in &scn.warnings {
        eprintln!("warning: {w}");
    }
    match args.cmd {
        Cmd::Verify => cli::cmd_verify(&scn),
        Cmd::Predict => cli::cmd_predict(&scn),
        Cmd::Simulate => cli::cmd_simulate(&scn),
        Cmd::Ber => cli::cmd_ber(&scn),
        Cmd::Decode { series } => cli::cmd_decode(&series, &scn),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(s) => {
            print!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
