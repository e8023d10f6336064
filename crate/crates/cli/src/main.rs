use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use sirlimits::experiment::{run_experiment, ExperimentConfig};

/// Run an SIR identifiability experiment described by a JSON config.
#[derive(Parser, Debug)]
#[command(name = "sirlimits", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: &Args) -> sirlimits::Result<()> {
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(sirlimits::Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| sirlimits::Error::Config(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let manifest = run_experiment(&cfg, base, &args.out)?;
    for o in &manifest.outputs {
        println!("{}", args.out.join(&o.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(if e.kind() == "config-validation" { 2 } else { 1 })
        }
    }
}
