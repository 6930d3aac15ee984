use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Deserialize;

use ovmr_core::experiment::write_results;
use ovmr_core::io::{load_dataset_for, read_json, save_dataset, write_classic, write_draws, write_summary};
use ovmr_core::sampler::diagnostics::diagnose;
use ovmr_core::*;

#[derive(Parser)]
#[command(name = "ovmr", version, about = "Bayesian multi-exposure Mendelian randomization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a population and split it into studies A, B and C.
    Simulate(SimulateArgs),
    /// Run the data-augmented sampler on one or more dataset files.
    Fit(FitArgs),
    /// 2SLS on one-sample data or IVW on separate exposure and outcome studies.
    Classic(ClassicArgs),
    /// Run a simulation grid and write per-cell metrics.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON with optional `population` (simulation settings) and `design`
    /// (`overlap_rate`, `study_size`) objects.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output directory for A.csv, B.csv and C.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV; repeat to stack several studies.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Model JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Prior JSON; defaults apply to omitted fields.
    #[arg(long)]
    priors: Option<PathBuf>,
    /// Chain settings JSON; `--iters`, `--warmup` and `--seed` override it.
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Posterior draws CSV.
    #[arg(long)]
    out: PathBuf,
    /// Posterior summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ClassicArgs {
    /// Complete rows (one-sample study).
    #[arg(long)]
    a: Option<PathBuf>,
    /// Exposure study.
    #[arg(long)]
    b: Option<PathBuf>,
    /// Outcome study.
    #[arg(long)]
    c: Option<PathBuf>,
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Grid JSON; defaults apply to omitted fields.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Base seed; replicate `i` uses `seed + i`.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Deserialize)]
#[serde(default)]
struct SimulateConfig {
    population: SimConfig,
    design: OverlapDesign,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            population: SimConfig::default(),
            design: OverlapDesign::new(0.5, 400),
        }
    }
}

fn json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = json(&args.config)?;
    let h = simulate_population(&cfg.population, args.seed)?;
    let part = partition(&h, &cfg.design, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (name, d) in [("A.csv", &part.a), ("B.csv", &part.b), ("C.csv", &part.c)] {
        let path = args.out.join(name);
        save_dataset(d, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    info!("wrote {} + {} + {} rows to {}", part.a.n_rows(), part.b.n_rows(), part.c.n_rows(), args.out.display());
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let spec: ModelSpec = json(&args.spec)?;
    let priors: PriorSpec = args.priors.as_deref().map(json).transpose()?.unwrap_or_default();
    let spec = validate_spec(spec, &priors)?;
    let mut settings: ChainSettings = args.chain.as_deref().map(json).transpose()?.unwrap_or_default();
    settings.seed = args.seed;
    if let Some(n) = args.iters {
        settings.n_iterations = n;
    }
    if let Some(n) = args.warmup {
        settings.n_warmup = n;
    }
    let parts = args
        .data
        .iter()
        .map(|p| load_dataset_for(p, &spec).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let data = MrDataset::concat(&parts.iter().collect::<Vec<_>>())?;
    let draws = run_chain(&data, &spec, &priors, &settings)?;
    for d in diagnose(&draws).iter().filter(|d| d.is_suspect()) {
        warn!("{}: split R-hat {:.3}, effective sample size {:.0}", d.name, d.rhat, d.ess);
    }
    write_draws(&draws, create(&args.out)?)?;
    if let Some(path) = &args.summary {
        write_summary(&summarize(&draws, 0.95)?, create(path)?)?;
    }
    Ok(())
}

fn classic(args: ClassicArgs) -> Result<()> {
    let spec: ModelSpec = json(&args.spec)?;
    let spec = validate_spec(spec, &PriorSpec::default())?;
    let load = |p: &Option<PathBuf>| -> Result<MrDataset> {
        match p {
            Some(p) => load_dataset_for(p, &spec).with_context(|| format!("reading {}", p.display())),
            None => Ok(MrDataset::empty(spec.n_instruments, spec.n_exposures)),
        }
    };
    let est = classic_analyze(&load(&args.a)?, &load(&args.b)?, &load(&args.c)?, &spec)?;
    write_classic(&est, create(&args.out)?)?;
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut grid: GridConfig = json(&args.grid)?;
    grid.base_seed = args.seed;
    if let Some(n) = args.replicates {
        grid.replicates = n;
    }
    let rows = match args.jobs {
        Some(k) => run_grid_with_jobs(&grid, k)?,
        None => run_grid(&grid)?,
    };
    write_results(&rows, create(&args.out)?)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Classic(a) => classic(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
