//! `loctag`: complete, evaluate and sweep tag-completion runs from the
//! command line.
//!
//! Exit status is 0 on success, 1 when the solver fails numerically and 2
//! for bad input or configuration.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use loctag::dataset::{
    apply_holdout_with, load_dataset, matrix_to_csv, read_features, read_scores, synthesize, write_dataset, SynthParams,
};
use loctag::evaluation::{evaluate, sweep, sweep_csv};
use loctag::experiment::complete;
use loctag::neighborhood::build_knn;
use loctag::optimizer::write_checkpoint;
use loctag::{HoldoutSplit, SweepParam};

use config::{RunArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "loctag",
    version,
    about = "Image tag completion with local linear predictors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hold out part of the tags, solve, and write scores, checkpoint,
    /// trace, holdout and the resolved config.
    Complete(RunArgs),
    /// Score a completed run against its held-out tags.
    Evaluate(EvaluateArgs),
    /// Re-run holdout, solve and evaluation over values of one parameter.
    Sweep(SweepArgs),
    /// Write a planted-model dataset.
    Synth(SynthArgs),
    /// Write the neighbor graph as CSV.
    KnnDump(KnnArgs),
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of a `complete` run.
    #[arg(long)]
    run: PathBuf,
    /// Scores to evaluate instead of `<run>/scores.csv`.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Holdout file instead of `<run>/holdout.csv`; without either the
    /// holdout is re-derived from the run's seed.
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Where to write report.json and pr_curve.csv; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// alpha, beta or kappa.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    values: Vec<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 12)]
    m: usize,
    /// Neighborhood size the cluster count is scaled for.
    #[arg(long, default_value_t = 5)]
    kappa: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct KnnArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = loctag::experiment::DEFAULT_KAPPA)]
    kappa: usize,
    #[arg(long)]
    include_self: bool,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<loctag::Error>() {
        Some(e) if e.is_numerical() => 1,
        _ => 2,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Complete(args) => cmd_complete(RunConfig::resolve(&args)?),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Sweep(args) => cmd_sweep(RunConfig::resolve(&args.run)?, args.param, &args.values),
        Command::Synth(args) => cmd_synth(&args),
        Command::KnnDump(args) => cmd_knn_dump(&args),
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the thread pool")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_complete(cfg: RunConfig) -> Result<()> {
    let (features, tags) = load_dataset(&cfg.features, &cfg.tags)?;
    let exp = cfg.experiment();
    exp.validate()?;
    let (masked, split) = apply_holdout_with(&tags, exp.holdout_fraction, exp.seed, exp.holdout_scheme)?;
    let completion = thread_pool(cfg.threads)?.install(|| complete(&features, &masked, &exp))?;

    let out = &cfg.out;
    create_dir(out)?;
    write(&out.join("scores.csv"), matrix_to_csv(completion.state.scores.values()))?;
    write_checkpoint(&out.join("checkpoint.bin"), &completion.state)?;
    write(&out.join("trace.csv"), completion.trace.to_csv())?;
    split.write(&out.join("holdout.csv"))?;
    write(&out.join("config.json"), cfg.to_json())?;

    let trace = &completion.trace;
    println!(
        "{} iterations ({}), objective {:.6e}; wrote {}",
        trace.records.len(),
        if trace.converged {
            "converged"
        } else {
            "iteration cap reached"
        },
        trace.final_objective(),
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::read(&args.run.join("config.json"))?;
    let exp = cfg.experiment();
    let features = read_features(&cfg.features)?;
    let tags = loctag::dataset::read_tags(&cfg.tags, features.n())?;
    let scores_path = args.scores.clone().unwrap_or_else(|| args.run.join("scores.csv"));
    let scores = read_scores(&scores_path)?;
    if (scores.n(), scores.m()) != (tags.n(), tags.m()) {
        bail!(loctag::Error::Shape(format!(
            "{} holds a {}×{} score matrix but the tags are {}×{}",
            scores_path.display(),
            scores.n(),
            scores.m(),
            tags.n(),
            tags.m()
        )));
    }

    let recorded = args.holdout.clone().unwrap_or_else(|| args.run.join("holdout.csv"));
    let split = if args.holdout.is_some() || recorded.exists() {
        HoldoutSplit::read(&recorded, tags.n(), tags.m(), exp.holdout_fraction, exp.seed)?
    } else {
        apply_holdout_with(&tags, exp.holdout_fraction, exp.seed, exp.holdout_scheme)?.1
    };
    let report = evaluate(&scores, &split, &tags, exp.map_variant)?;

    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    create_dir(&out)?;
    report.write(&out.join("report.json"), &out.join("pr_curve.csv"))?;
    println!(
        "MAP {:.4} over {} images ({} held-out positives, {} negatives)",
        report.map, report.counts.images, report.counts.positives, report.counts.negatives
    );
    Ok(())
}

fn cmd_sweep(cfg: RunConfig, param: SweepParam, values: &[f64]) -> Result<()> {
    let (features, tags) = load_dataset(&cfg.features, &cfg.tags)?;
    let exp = cfg.experiment();
    let rows = thread_pool(cfg.threads)?.install(|| sweep(&features, &tags, &exp, param, values))?;
    create_dir(&cfg.out)?;
    write(&cfg.out.join("sweep.csv"), sweep_csv(&rows))?;
    write(&cfg.out.join("config.json"), cfg.to_json())?;
    for r in &rows {
        println!("{} = {}: MAP {:.4}", param_name(param), r.value, r.map);
    }
    Ok(())
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Alpha => "alpha",
        SweepParam::Beta => "beta",
        SweepParam::Kappa => "kappa",
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let data = synthesize(SynthParams {
        n: args.n,
        d: args.d,
        m: args.m,
        kappa: args.kappa,
        noise: args.noise,
        seed: args.seed,
    })?;
    create_dir(&args.out)?;
    write_dataset(
        &args.out.join("features.csv"),
        &args.out.join("tags.csv"),
        &data.features,
        &data.tags,
    )?;
    write(
        &args.out.join("planted_scores.csv"),
        matrix_to_csv(data.planted.values()),
    )?;
    println!("wrote {} images, {} tags to {}", args.n, args.m, args.out.display());
    Ok(())
}

fn cmd_knn_dump(args: &KnnArgs) -> Result<()> {
    let features = read_features(&args.features)?;
    let features = if args.standardize {
        features.standardized()
    } else {
        features
    };
    let threads = config::resolve_threads(args.threads);
    let graph = thread_pool(threads)?.install(|| build_knn(&features, args.kappa, args.include_self))?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    graph.write_csv(&args.out)?;
    Ok(())
}
