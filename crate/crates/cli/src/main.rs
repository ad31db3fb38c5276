use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use mce_core::baselines::{em_fit, em_search, kmeans_fit, EmOptions};
use mce_core::io::{
    read_dataset_file, read_trace, write_bins, write_dataset_file, write_labels, write_trace, write_visit_frequencies,
    BestDoc, ModelDoc, RunSummary,
};
use mce_core::subspace::build_bins;
use mce_core::synth::{generate, GeneratorKind, GeneratorSpec};
use mce_core::{
    anneal_search, mce_run, AnnealSchedule, AnnealSearchConfig, Budget, Dataset, EnsembleConfig,
    Execution, Interval, TraceSample,
};

/// MML mixture modelling: Gibbs sampling over class counts, annealing and
/// EM / K-Means baselines.
#[derive(Parser)]
#[command(name = "mce", version)]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its ground-truth labels.
    Gen(GenArgs),
    /// Fit one EM mixture with a fixed number of classes.
    Em(EmArgs),
    /// Randomly restarted EM over a range of class counts, scored in nits.
    EmSearch(EmSearchArgs),
    /// Lloyd's K-Means.
    Kmeans(KMeansArgs),
    /// Sample models with the multiple-chain ensemble.
    Sample(SampleArgs),
    /// Independent annealing runs with a random class count each.
    Anneal(AnnealArgs),
    /// Plot-ready tables from a sample trace.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// six-gauss, two-gauss-2d or univariate
    #[arg(long)]
    spec: GeneratorKind,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data CSV; labels go next to it as <stem>.labels.csv
    #[arg(long)]
    out: PathBuf,
}

/// Input data and the priors it is coded against. Unset bounds come from
/// the data.
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Lower end of the mean range, all attributes
    #[arg(long, allow_hyphen_values = true)]
    mu_lo: Option<f64>,
    /// Upper end of the mean range, all attributes
    #[arg(long, allow_hyphen_values = true)]
    mu_hi: Option<f64>,
    /// Upper end of the standard deviation range, all attributes
    #[arg(long)]
    sigma_hi: Option<f64>,
    /// Measurement precision
    #[arg(long)]
    eps: Option<f64>,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<Dataset> {
        let data = read_dataset_file(&self.data).with_context(|| format!("reading {}", self.data.display()))?;
        let mut priors = data.priors().clone();
        if self.mu_lo.is_none() && self.mu_hi.is_none() && self.sigma_hi.is_none() && self.eps.is_none() {
            return Ok(data);
        }
        for r in &mut priors.range_mu {
            *r = Interval::new(self.mu_lo.unwrap_or(r.lo), self.mu_hi.unwrap_or(r.hi));
        }
        if let Some(s) = self.sigma_hi {
            priors.sigma_hi.iter_mut().for_each(|h| *h = s);
        }
        if let Some(e) = self.eps {
            priors.eps = e;
        }
        Ok(data.with_priors(priors)?)
    }
}

#[derive(Args)]
struct EmArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Model JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Restart budget: a wall-clock limit or a fixed number of restarts.
#[derive(Args)]
struct BudgetArgs {
    /// Seconds of wall clock
    #[arg(long, conflicts_with = "runs")]
    budget_secs: Option<f64>,
    /// Number of restarts (reproducible)
    #[arg(long)]
    runs: Option<usize>,
}

impl BudgetArgs {
    fn budget(&self, default_runs: usize) -> anyhow::Result<Budget> {
        match (self.budget_secs, self.runs) {
            (Some(s), _) => {
                let d = Duration::try_from_secs_f64(s).map_err(|_| input(format!("bad budget {s}")))?;
                Ok(Budget::Time(d))
            }
            (None, Some(0)) => Err(input("--runs must be at least 1")),
            (None, Some(n)) => Ok(Budget::Runs(n)),
            (None, None) => Ok(Budget::Runs(default_runs)),
        }
    }
}

#[derive(Args)]
struct EmSearchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 12)]
    k_max: usize,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Best model JSON
    #[arg(long)]
    out: Option<PathBuf>,
    /// Labels CSV of the hardened assignment
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct KMeansArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Centroids JSON
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 12)]
    k_max: usize,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    segment: usize,
    /// Jumps after the initial estimation
    #[arg(long, default_value_t = 50)]
    segments: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace JSON-lines
    #[arg(long)]
    trace: PathBuf,
    /// Summary JSON [default: <trace stem>.summary.json]
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct AnnealArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 12)]
    k_max: usize,
    #[arg(long, default_value_t = 2.0)]
    t0: f64,
    #[arg(long, default_value_t = 0.99)]
    cool: f64,
    #[arg(long, default_value_t = 50)]
    iters_per_temp: usize,
    #[arg(long, default_value_t = 0.05)]
    t_min: f64,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Write per-k bin tables
    #[arg(long)]
    bins: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Marks a failure caused by the caller rather than by the program.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<mce_core::Error>() {
            return if e.is_input_error() { 1 } else { 2 };
        }
    }
    2
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// `dir/stem.csv` -> `dir/stem.<suffix>`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let execution = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Gen(a) => {
            if a.spec == GeneratorKind::Custom {
                return Err(input("the custom generator is only available through the library"));
            }
            let g = generate(&GeneratorSpec::new(a.spec, a.sigma, a.per_class, a.seed))?;
            write_dataset_file(&a.out, &g.data)?;
            let labels = sibling(&a.out, "labels.csv");
            write_labels(create(&labels)?, &g.labels)?;
            println!("rows={} attrs={} labels={}", g.data.n_obs(), g.data.n_attrs(), labels.display());
        }
        Command::Em(a) => {
            let data = a.data.load()?;
            let fit = em_fit(&data, a.k, a.seed, EmOptions { tol: a.tol, max_iter: a.max_iter })?;
            if let Some(out) = &a.out {
                write_json(out, &ModelDoc::new(&fit.model, data.priors()))?;
            }
            println!("k={} loglik={} iterations={} converged={}", a.k, fit.loglik, fit.iterations, fit.converged);
        }
        Command::EmSearch(a) => {
            let data = a.data.load()?;
            let r = em_search(&data, a.k_min, a.k_max, a.budget.budget(4 * (a.k_max.max(a.k_min) - a.k_min + 1))?, a.seed, execution)?;
            if let Some(out) = &a.out {
                write_json(out, &ModelDoc::new(&r.model, data.priors()))?;
            }
            if let Some(path) = &a.labels {
                write_labels(create(path)?, r.assignment.labels())?;
            }
            println!(
                "k={} total_nits={} part1_nits={} part2_nits={} fits={} partial={}",
                r.k(),
                r.length.total,
                r.length.part1,
                r.length.part2,
                r.fits.len(),
                r.partial
            );
        }
        Command::Kmeans(a) => {
            let data = a.data.load()?;
            let fit = kmeans_fit(&data, a.k, a.seed, a.max_iter)?;
            if let Some(out) = &a.out {
                write_json(out, &serde_json::json!({ "k": a.k, "centroids": fit.centroids, "distortion": fit.distortion }))?;
            }
            if let Some(path) = &a.labels {
                write_labels(create(path)?, fit.assignment.labels())?;
            }
            println!("k={} distortion={} iterations={}", a.k, fit.distortion, fit.iterations);
        }
        Command::Sample(a) => {
            let data = a.data.load()?;
            let config = EnsembleConfig {
                burn_in: a.burn_in,
                samples: a.samples,
                segment: a.segment,
                seed: a.seed,
                temperature: a.temperature,
                execution,
            };
            let run = mce_run(&data, a.k_min, a.k_max, config, a.segments)?;
            write_trace(create(&a.trace)?, &run.trace)?;
            let summary = RunSummary {
                per_k_probability: run.per_k_probability,
                best: BestDoc::new(&run.best, data.priors()),
            };
            let path = a.summary.unwrap_or_else(|| sibling(&a.trace, "summary.json"));
            write_json(&path, &summary)?;
            info!("trace: {} samples", run.trace.len());
            println!("best_k={} total_nits={} summary={}", summary.best.k, summary.best.total_nits, path.display());
        }
        Command::Anneal(a) => {
            let data = a.data.load()?;
            let cfg = AnnealSearchConfig {
                k_min: a.k_min,
                k_max: a.k_max,
                schedule: AnnealSchedule { t0: a.t0, cool: a.cool, iters_per_temp: a.iters_per_temp, t_min: a.t_min },
                seed: a.seed,
                budget: a.budget.budget(4)?,
                execution,
            };
            let r = anneal_search(&data, &cfg)?;
            if let Some(out) = &a.out {
                write_json(out, &BestDoc::new(&r.best, data.priors()))?;
            }
            if let Some(path) = &a.labels {
                write_labels(create(path)?, r.best.assignment.labels())?;
            }
            println!("k={} total_nits={} runs={}", r.best.k(), r.best.length.total, r.runs.len());
        }
        Command::Report(a) => {
            let file = File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
            let trace = read_trace(file)?;
            if trace.is_empty() {
                return Err(input(format!("{} holds no samples", a.trace.display())));
            }
            fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            write_visit_frequencies(create(&a.out.join("visit_frequencies.csv"))?, &trace)?;
            if a.bins {
                let mut ks: Vec<usize> = trace.iter().map(|s| s.k).collect();
                ks.sort_unstable();
                ks.dedup();
                for k in ks {
                    let samples: Vec<TraceSample> = trace.iter().filter(|s| s.k == k).copied().collect();
                    write_bins(create(&a.out.join(format!("bins_k{k}.csv")))?, &build_bins(&samples)?)?;
                }
            }
            println!("samples={} out={}", trace.len(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
