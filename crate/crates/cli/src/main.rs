use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use sparse_trotter::experiments::{
    self, sweep_summary, write_csv, ExperimentConfig, ExperimentResult, SchemeConfig,
};

#[derive(Parser)]
#[command(name = "sparse-trotter", version, about = "Uniform, sparse and stochastic sparse Trotterization of spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base seed for stochastic ensembles (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output CSV path (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its time series.
    Run { config: PathBuf },
    /// Run every value of the config's sweep section against one reference.
    Sweep { config: PathBuf },
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = cli.seed {
        match &mut cfg.scheme {
            SchemeConfig::Stochastic { base_seed, .. } => *base_seed = seed,
            _ => warn!("--seed has no effect on deterministic schemes"),
        }
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn report(result: &ExperimentResult) {
    info!(
        "final fidelity {:.6}, max |dm| {:.4}, max |dchi| {:.4}",
        result.final_fidelity(),
        result.max_magnetization_deviation().unwrap_or(f64::NAN),
        result.max_correlation_deviation().unwrap_or(f64::NAN),
    );
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, cli)?;
            let result = experiments::run(&cfg)?;
            report(&result);
            match &cfg.output {
                Some(path) => {
                    write_csv(&result, path)?;
                    info!("wrote {}", path.display());
                }
                None => print!("{}", result.to_table().to_csv_string()),
            }
        }
        Command::Sweep { config } => {
            let cfg = load(config, cli)?;
            let Some(sweep) = cfg.sweep.clone() else {
                bail!("{} has no sweep section", config.display());
            };
            let Some(base) = cfg.output.clone() else {
                bail!("sweep needs an output path (config `output` or --out)");
            };
            let results = experiments::sweep(&cfg)?;
            for r in &results {
                report(r);
                let path = r.config.output.as_ref().expect("variant paths derive from the base");
                write_csv(r, path)?;
                info!("wrote {}", path.display());
            }
            let summary = sweep_summary(sweep.parameter, &results)?;
            let summary_path = base.with_file_name(format!(
                "{}_summary.csv",
                base.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep")
            ));
            std::fs::write(&summary_path, summary.to_csv_string())
                .with_context(|| format!("writing {}", summary_path.display()))?;
            info!("wrote {}", summary_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
