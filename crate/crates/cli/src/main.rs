use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use atkd_core::decompose::batch_decompose;
use atkd_core::grad::fd_check;
use atkd_core::harness::{self, ExperimentKind, ExperimentOutput, ExperimentSpec, Sweep, SweepParameter};
use atkd_core::io::{kde_emit, read_logit_file, write_report};
use atkd_core::objective::{split_batch, ObjectiveConfig, ObjectiveMode};
use atkd_core::{Error, LogitBatch};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "atkd", version, about = "Adaptive teaching knowledge distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train teacher(s) on next-token cross-entropy.
    TrainTeacher(Common),
    /// Distill a student per seed with the spec's objective.
    Distill(DistillArgs),
    /// Forward-KL students on full, hard-only and easy-only token sets.
    TokenSplit(DistillArgs),
    /// TKD-only / DKD-only / TKD+DKD crossed with the three token sets.
    Ablation(DistillArgs),
    /// Sweep k, lambda or alpha.
    Sweep(SweepArgs),
    /// Teacher UnC distributions across the teacher-size ladder.
    UncDist(UncDistArgs),
    /// Validation perplexity along a line through weight space.
    Landscape(LandscapeArgs),
    /// Per-token decomposition report for a logit file.
    Decompose(DecomposeArgs),
    /// Compare analytical objective gradients with finite differences.
    CheckGrads(CheckGradsArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment spec (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the spec's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Seeds run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Override the spec's step count.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[command(flatten)]
    common: Common,
    /// Distill from this teacher checkpoint instead of training one.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Weight of ground-truth cross-entropy mixed into the KD loss.
    #[arg(long)]
    ce_mix: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    distill: DistillArgs,
    /// k_ratio, lambda or alpha.
    #[arg(long)]
    param: Option<SweepParameter>,
    /// Comma-separated grid; defaults to the parameter's standard grid.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Args, Debug)]
struct UncDistArgs {
    #[command(flatten)]
    common: Common,
    /// Teacher checkpoints to compare (at least two); trains the ladder when absent.
    #[arg(long = "teacher")]
    teachers: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    #[command(flatten)]
    distill: DistillArgs,
    /// Weights before distillation.
    #[arg(long, requires = "theta1")]
    theta0: Option<PathBuf>,
    /// Weights after distillation.
    #[arg(long, requires = "theta0")]
    theta1: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Logit file to analyse.
    input: PathBuf,
    /// Report CSV path.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    /// Hard fraction used to label tokens.
    #[arg(long, default_value_t = 0.5)]
    k: f64,
    /// Also write a KDE of the teacher UnC here.
    #[arg(long)]
    kde: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    grid_points: usize,
}

#[derive(Args, Debug)]
struct CheckGradsArgs {
    /// Objective mode, or `all`.
    #[arg(long, default_value = "all")]
    mode: String,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 6)]
    tokens: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. } | Error::TrainingFailure(_)) => EXIT_DIVERGENCE,
        Some(Error::Io { .. } | Error::Parse { .. } | Error::Malformed { .. }) => EXIT_IO,
        Some(_) => EXIT_CONFIG,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_CONFIG,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let out = match cli.command {
        Command::TrainTeacher(c) => {
            let (spec, out_dir, jobs) = load_spec(&c, None)?;
            harness::run_train_teacher(&spec, &out_dir, jobs)?
        }
        Command::Distill(a) => {
            let (spec, out_dir, jobs) = load_distill_spec(&a, &[ExperimentKind::Distill])?;
            harness::run_distill(&spec, &out_dir, jobs)?
        }
        Command::TokenSplit(a) => {
            let (spec, out_dir, jobs) = load_distill_spec(&a, &[ExperimentKind::TokenSplit])?;
            harness::run_token_split(&spec, &out_dir, jobs)?
        }
        Command::Ablation(a) => {
            let (spec, out_dir, jobs) = load_distill_spec(&a, &[ExperimentKind::ObjectiveAblation])?;
            harness::run_objective_ablation(&spec, &out_dir, jobs)?
        }
        Command::Sweep(a) => {
            let kinds = [ExperimentKind::KSweep, ExperimentKind::LambdaSweep, ExperimentKind::AlphaSweep];
            let (mut spec, out_dir, jobs) = load_distill_spec_unresolved(&a.distill)?;
            if let Some(parameter) = a.param {
                spec.sweep = Some(Sweep {
                    parameter,
                    values: a.values.clone(),
                });
                spec.experiment = None;
            } else if !a.values.is_empty() {
                bail!(Error::Config("--values needs --param".into()));
            }
            spec.resolve_kind(&kinds)?;
            harness::run_sweep(&spec, &out_dir, jobs)?
        }
        Command::UncDist(a) => {
            let (spec, out_dir, jobs) = load_spec(&a.common, Some(&[ExperimentKind::UncDist]))?;
            if a.teachers.len() == 1 {
                bail!(Error::Config("unc-dist needs at least two --teacher checkpoints".into()));
            }
            harness::run_unc_dist(&spec, &a.teachers, &out_dir, jobs)?
        }
        Command::Landscape(a) => {
            let (spec, out_dir, jobs) = load_distill_spec(&a.distill, &[ExperimentKind::Landscape])?;
            let endpoints = a.theta0.as_deref().zip(a.theta1.as_deref());
            harness::run_landscape(&spec, endpoints, &out_dir, jobs)?
        }
        Command::Decompose(a) => return decompose(&a),
        Command::CheckGrads(a) => return check_grads(&a),
    };
    report(&out);
    Ok(ExitCode::SUCCESS)
}

fn load_spec(c: &Common, kinds: Option<&[ExperimentKind]>) -> Result<(ExperimentSpec, PathBuf, usize)> {
    let mut spec = ExperimentSpec::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(seed) = c.seed {
        spec.seeds = vec![seed];
    }
    if let Some(steps) = c.steps {
        spec.steps = steps;
    }
    match kinds {
        Some(kinds) => {
            spec.resolve_kind(kinds)?;
        }
        None => {
            spec.experiment = Some(ExperimentKind::TrainTeacher);
            spec.validate()?;
        }
    }
    if c.jobs == 0 {
        bail!(Error::Config("--jobs must be at least 1".into()));
    }
    Ok((spec, c.out_dir.clone(), c.jobs))
}

fn load_distill_spec_unresolved(a: &DistillArgs) -> Result<(ExperimentSpec, PathBuf, usize)> {
    let c = &a.common;
    let mut spec = ExperimentSpec::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(seed) = c.seed {
        spec.seeds = vec![seed];
    }
    if let Some(steps) = c.steps {
        spec.steps = steps;
    }
    if let Some(t) = &a.teacher {
        spec.teacher_checkpoint = Some(t.clone());
    }
    if let Some(w) = a.ce_mix {
        spec.ce_mix = w;
    }
    if c.jobs == 0 {
        bail!(Error::Config("--jobs must be at least 1".into()));
    }
    Ok((spec, c.out_dir.clone(), c.jobs))
}

fn load_distill_spec(a: &DistillArgs, kinds: &[ExperimentKind]) -> Result<(ExperimentSpec, PathBuf, usize)> {
    let (mut spec, out_dir, jobs) = load_distill_spec_unresolved(a)?;
    spec.resolve_kind(kinds)?;
    Ok((spec, out_dir, jobs))
}

fn report(out: &ExperimentOutput) {
    for r in &out.records {
        println!("{:<28} seed {:<3} final val ppl {:.4}", r.label, r.seed, r.final_ppl);
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
}

fn decompose(a: &DecomposeArgs) -> Result<ExitCode> {
    let file = read_logit_file(&a.input)?;
    if !file.has_student() {
        info!("{} has no student logits; divergence columns will be zero", a.input.display());
    }
    let batch = file.to_batch()?;
    let decomposition = batch_decompose(&batch);
    let split = split_batch(&batch, a.k)?;
    write_report(&decomposition, &split, &a.out)?;
    println!(
        "{} tokens ({} mask-true, {} hard) -> {}",
        batch.tokens(),
        batch.masked_count(),
        split.hard.len(),
        a.out.display()
    );
    if let Some(path) = &a.kde {
        let unc: Vec<f64> = batch.active_indices().iter().map(|&t| decomposition.unc[t]).collect();
        let kde = kde_emit(&unc, a.grid_points, path)?;
        println!("UnC KDE (bandwidth {:.5}) -> {}", kde.bandwidth(), path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Seeded random batch with mixed logit scales and one masked-out token.
fn random_batch(tokens: usize, classes: usize, seed: u64) -> Result<LogitBatch> {
    // Small SplitMix64 stream: this check must not depend on an RNG crate's
    // output staying stable across versions.
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    };
    let teacher: Vec<f64> = (0..tokens * classes).map(|_| 6.0 * next() - 3.0).collect();
    let student: Vec<f64> = (0..tokens * classes).map(|_| 6.0 * next() - 3.0).collect();
    let targets: Vec<usize> = (0..tokens).map(|_| (next() * classes as f64) as usize % classes).collect();
    let mut mask = vec![true; tokens];
    if tokens > 2 {
        mask[tokens / 2] = false;
    }
    Ok(LogitBatch::new(tokens, classes, teacher, student, targets, mask)?)
}

fn check_grads(a: &CheckGradsArgs) -> Result<ExitCode> {
    let modes: Vec<ObjectiveMode> = if a.mode == "all" {
        ObjectiveMode::ALL.to_vec()
    } else {
        vec![a.mode.parse()?]
    };
    let mut worst: f64 = 0.0;
    for &mode in &modes {
        let cfg = match mode {
            ObjectiveMode::AlphaTkdDkd => ObjectiveConfig::alpha(0.5),
            m => ObjectiveConfig::new(m),
        };
        for seed in 0..a.seeds {
            let batch = random_batch(a.tokens, a.classes, seed)?;
            let err = fd_check(&batch, &cfg, a.eps)?;
            worst = worst.max(err);
            let verdict = if err <= a.tol { "ok" } else { "FAIL" };
            println!("{:<14} seed {seed}: max rel error {err:.3e} {verdict}", mode.name());
        }
    }
    println!("worst {worst:.3e} (tolerance {:.1e})", a.tol);
    Ok(if worst <= a.tol {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
