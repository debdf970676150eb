//! Experiment runners. Each writes its artifacts under an output directory
//! and returns the run records it produced.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{Batch, Corpus};
use super::record::{write_jsonl, RunRecord};
use super::spec::{ladder_config, ExperimentKind, ExperimentSpec, SweepParameter};
use super::train::{distill_cohort, train_teacher, DistillOutcome, StudentPlan, TokenSet, TrainSettings};
use crate::decompose::unc_from_rows;
use crate::error::{Error, Result};
use crate::io::{kde_emit, read_rows, write_rows};
use crate::model::{interpolate, Checkpoint, TinyLM};
use crate::objective::{ObjectiveConfig, ObjectiveMode};

/// Seed of the fixed training-split sample scored by every teacher.
pub const UNC_SAMPLE_SEED: u64 = 0x5EED_0F0C;
/// Number of interpolation points in `[-1, 1]`.
pub const LANDSCAPE_POINTS: usize = 21;

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutput {
    fn extend(&mut self, other: ExperimentOutput) {
        self.records.extend(other.records);
        self.files.extend(other.files);
    }
}

// ---- CSV schemas -----------------------------------------------------------

pub const SUMMARY_HEADER: [&str; 3] = ["label", "seed", "final_ppl"];
pub const ABLATION_HEADER: [&str; 4] = ["seed", "objective", "token_set", "final_ppl"];
pub const SWEEP_HEADER: [&str; 4] = ["param", "value", "seed", "final_ppl"];
pub const UNC_SUMMARY_HEADER: [&str; 7] = ["label", "d_model", "n_layers", "seed", "samples", "median_unc", "mean_unc"];
pub const LANDSCAPE_HEADER: [&str; 2] = ["beta", "perplexity"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub seed: u64,
    pub final_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub objective: ObjectiveMode,
    pub token_set: TokenSet,
    pub final_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub final_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncSummaryRow {
    pub label: String,
    pub d_model: usize,
    pub n_layers: usize,
    pub seed: u64,
    pub samples: usize,
    pub median_unc: f64,
    pub mean_unc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub beta: f64,
    pub perplexity: f64,
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    read_rows(path.as_ref(), &SUMMARY_HEADER)
}

pub fn read_ablation(path: impl AsRef<Path>) -> Result<Vec<AblationRow>> {
    read_rows(path.as_ref(), &ABLATION_HEADER)
}

pub fn read_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    read_rows(path.as_ref(), &SWEEP_HEADER)
}

pub fn read_unc_summary(path: impl AsRef<Path>) -> Result<Vec<UncSummaryRow>> {
    read_rows(path.as_ref(), &UNC_SUMMARY_HEADER)
}

pub fn read_landscape(path: impl AsRef<Path>) -> Result<Vec<LandscapeRow>> {
    read_rows(path.as_ref(), &LANDSCAPE_HEADER)
}

// ---- shared plumbing ---------------------------------------------------------

/// Runs `job` once per seed on a pool of `jobs` threads, returning results
/// in seed order.
fn per_seed<T: Send>(seeds: &[u64], jobs: usize, job: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} jobs: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| job(s)).collect())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn load_corpus(spec: &ExperimentSpec) -> Result<Corpus> {
    Corpus::load(&spec.corpus_path, spec.train_fraction)
}

/// The teacher for `seed`: the spec's checkpoint if it names one, otherwise
/// a freshly trained teacher saved as `teacher_seed{seed}.ckpt`.
fn teacher_for_seed(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    seed: u64,
    out_dir: &Path,
) -> Result<(TinyLM, ExperimentOutput)> {
    let mut out = ExperimentOutput::default();
    if let Some(path) = &spec.teacher_checkpoint {
        let ck = Checkpoint::load(path)?;
        if ck.config().vocab_size != spec.student.vocab_size {
            return Err(Error::Config(format!(
                "teacher checkpoint vocabulary {} does not match student vocabulary {}",
                ck.config().vocab_size,
                spec.student.vocab_size
            )));
        }
        if ck.corpus_hash != corpus.hash() {
            warn!("teacher {} was trained on a different corpus", path.display());
        }
        return Ok((ck.model, out));
    }
    let kind = spec.experiment.map_or("teacher", |k| k.name());
    let (ck, record) = train_teacher(corpus, spec.teacher.with_seed(seed), &TrainSettings::teacher(spec), seed, kind)?;
    let path = out_dir.join(format!("teacher_seed{seed}.ckpt"));
    ck.save(&path)?;
    out.files.push(path);
    out.records.push(record);
    Ok((ck.model, out))
}

/// Trains the teacher for each seed, distills `plans(seed)` from it, saves
/// each student as `student_{label}_seed{seed}.ckpt`.
fn teacher_then_cohort(
    spec: &ExperimentSpec,
    out_dir: &Path,
    jobs: usize,
    plans: &[StudentPlan],
) -> Result<(ExperimentOutput, Vec<Vec<DistillOutcome>>)> {
    ensure_dir(out_dir)?;
    let corpus = load_corpus(spec)?;
    let kind = spec.experiment.map_or("distill", |k| k.name());
    let per = per_seed(&spec.seeds, jobs, |seed| {
        let (teacher, mut out) = teacher_for_seed(spec, &corpus, seed, out_dir)?;
        let before = Checkpoint::new(teacher.clone(), 0, corpus.hash()).digest();
        let outcomes = distill_cohort(
            &corpus,
            &teacher,
            spec.student.with_seed(seed),
            plans,
            &TrainSettings::student(spec),
            seed,
            kind,
        )?;
        debug_assert_eq!(before, Checkpoint::new(teacher, 0, corpus.hash()).digest());
        for o in &outcomes {
            let path = out_dir.join(format!("student_{}_seed{seed}.ckpt", file_label(&o.record.label)));
            o.checkpoint.save(&path)?;
            out.files.push(path);
            out.records.push(o.record.clone());
        }
        Ok((out, outcomes))
    })?;
    let mut out = ExperimentOutput::default();
    let mut all = Vec::new();
    for (o, outcomes) in per {
        out.extend(o);
        all.push(outcomes);
    }
    Ok((out, all))
}

/// `label` with path separators and other awkward characters replaced.
fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.=-".contains(c) { c } else { '-' })
        .collect()
}

fn finish(mut out: ExperimentOutput, out_dir: &Path) -> Result<ExperimentOutput> {
    let path = out_dir.join("records.jsonl");
    write_jsonl(&path, &out.records)?;
    out.files.push(path);
    Ok(out)
}

fn summary(out: &mut ExperimentOutput, out_dir: &Path, outcomes: &[Vec<DistillOutcome>]) -> Result<()> {
    let rows: Vec<SummaryRow> = outcomes
        .iter()
        .flatten()
        .map(|o| SummaryRow {
            label: o.record.label.clone(),
            seed: o.record.seed,
            final_ppl: o.record.final_ppl,
        })
        .collect();
    let path = out_dir.join("final_ppl.csv");
    write_rows(&path, &SUMMARY_HEADER, &rows, None)?;
    out.files.push(path);
    Ok(())
}

// ---- experiments -------------------------------------------------------------

pub fn run_train_teacher(spec: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<ExperimentOutput> {
    ensure_dir(out_dir)?;
    let corpus = load_corpus(spec)?;
    let spec = ExperimentSpec {
        teacher_checkpoint: None,
        teacher_steps: Some(spec.teacher_steps.unwrap_or(spec.steps)),
        ..spec.clone()
    };
    let parts = per_seed(&spec.seeds, jobs, |seed| Ok(teacher_for_seed(&spec, &corpus, seed, out_dir)?.1))?;
    let mut out = ExperimentOutput::default();
    parts.into_iter().for_each(|p| out.extend(p));
    finish(out, out_dir)
}

/// Distills one student per seed with the spec's objective.
pub fn run_distill(spec: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<ExperimentOutput> {
    let plan = StudentPlan::new(spec.objective.mode.name(), spec.objective);
    let (mut out, outcomes) = teacher_then_cohort(spec, out_dir, jobs, &[plan])?;
    summary(&mut out, out_dir, &outcomes)?;
    finish(out, out_dir)
}

/// Forward-KL students restricted to the full, hard and easy token sets,
/// with the split fraction taken from `objective.k_ratio`.
pub fn token_split_plans(k: f64) -> Vec<StudentPlan> {
    let fkl = ObjectiveConfig::new(ObjectiveMode::ForwardKl);
    vec![
        StudentPlan::new("full", fkl),
        StudentPlan::new("hard_only", fkl).restricted(TokenSet::HardOnly, k),
        StudentPlan::new("easy_only", fkl).restricted(TokenSet::EasyOnly, k),
    ]
}

pub fn run_token_split(spec: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<ExperimentOutput> {
    let (mut out, outcomes) = teacher_then_cohort(spec, out_dir, jobs, &token_split_plans(spec.objective.k_ratio))?;
    summary(&mut out, out_dir, &outcomes)?;
    finish(out, out_dir)
}

/// TKD-only, DKD-only and TKD+DKD crossed with the three token sets.
pub fn ablation_plans(k: f64) -> Vec<StudentPlan> {
    let mut plans = Vec::new();
    for mode in [ObjectiveMode::TkdOnly, ObjectiveMode::DkdOnly, ObjectiveMode::TkdPlusDkd] {
        for set in [TokenSet::Full, TokenSet::EasyOnly, TokenSet::HardOnly] {
            let label = format!("{}/{}", mode.name(), set.name());
            plans.push(StudentPlan::new(label, ObjectiveConfig::new(mode)).restricted(set, k));
        }
    }
    plans
}

pub fn run_objective_ablation(spec: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<ExperimentOutput> {
    let plans = ablation_plans(spec.objective.k_ratio);
    let (mut out, outcomes) = teacher_then_cohort(spec, out_dir, jobs, &plans)?;
    let rows: Vec<AblationRow> = outcomes
        .iter()
        .flat_map(|seed_runs| {
            seed_runs.iter().zip(&plans).map(|(o, plan)| AblationRow {
                seed: o.record.seed,
                objective: plan.objective.mode,
                token_set: plan.token_set,
                final_ppl: o.record.final_ppl,
            })
        })
        .collect();
    let path = out_dir.join("ablation.csv");
    write_rows(&path, &ABLATION_HEADER, &rows, None)?;
    out.files.push(path);
    finish(out, out_dir)
}

/// One student per sweep value. k and λ vary ATKD; α varies α·TKD+DKD.
pub fn sweep_plans(base: &ObjectiveConfig, parameter: SweepParameter, values: &[f64]) -> Result<Vec<StudentPlan>> {
    values
        .iter()
        .map(|&v| {
            let objective = match parameter {
                SweepParameter::KRatio => ObjectiveConfig::atkd(v, base.lambda),
                SweepParameter::Lambda => ObjectiveConfig::atkd(base.k_ratio, v),
                SweepParameter::Alpha => ObjectiveConfig::alpha(v),
                SweepParameter::TeacherSize => {
                    return Err(Error::Config("teacher_size is swept by the unc-dist experiment".into()))
                }
            };
            objective.validate()?;
            Ok(StudentPlan::new(format!("{}={v}", parameter.name()), objective))
        })
        .collect()
}

pub fn run_sweep(spec: &ExperimentSpec, out_dir: &Path, jobs: usize) -> Result<ExperimentOutput> {
    let parameter = spec
        .experiment
        .and_then(ExperimentKind::sweep_parameter)
        .or(spec.sweep.as_ref().map(|s| s.parameter))
        .ok_or_else(|| Error::Config("sweep experiment needs a sweep parameter".into()))?;
    let values = spec.sweep_values(parameter);
    let plans = sweep_plans(&spec.objective, parameter, &values)?;
    let (mut out, outcomes) = teacher_then_cohort(spec, out_dir, jobs, &plans)?;
    let rows: Vec<SweepRow> = outcomes
        .iter()
        .flat_map(|seed_runs| {
            seed_runs.iter().zip(&values).map(|(o, &value)| SweepRow {
                param: parameter.name().to_string(),
                value,
                seed: o.record.seed,
                final_ppl: o.record.final_ppl,
            })
        })
        .collect();
    let path = out_dir.join("sweep.csv");
    write_rows(&path, &SWEEP_HEADER, &rows, None)?;
    out.files.push(path);
    finish(out, out_dir)
}

/// Teacher UnC at every position of `sample`, in sample order.
pub fn teacher_unc_sample(teacher: &TinyLM, sample: &Batch) -> Result<Vec<f64>> {
    const WINDOWS_PER_PASS: usize = 16;
    let v = teacher.config().vocab_size;
    let n = sample.seq_len;
    let mut unc = Vec::with_capacity(sample.inputs.len());
    for (inputs, targets) in sample.inputs.chunks(WINDOWS_PER_PASS * n).zip(sample.targets.chunks(WINDOWS_PER_PASS * n)) {
        let logits = teacher.forward_batch(inputs, inputs.len() / n)?.into_logits();
        unc.extend(unc_from_rows(&logits, v, targets, &vec![true; targets.len()]));
    }
    Ok(unc)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Scores the fixed sample with each teacher and writes one KDE file per
/// teacher, returning the summary rows.
pub fn unc_distribution(
    corpus: &Corpus,
    teachers: &[(String, &TinyLM)],
    sample_tokens: usize,
    grid_points: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<UncSummaryRow>, Vec<PathBuf>)> {
    if teachers.len() < 2 {
        return Err(Error::Config("the UnC distribution needs at least 2 teachers".into()));
    }
    let window = teachers.iter().map(|(_, t)| t.config().context_len).min().unwrap();
    let sample = corpus.fixed_sample(sample_tokens, window, UNC_SAMPLE_SEED)?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for (label, teacher) in teachers {
        let unc = teacher_unc_sample(teacher, &sample)?;
        let path = out_dir.join(format!("kde_{label}_seed{seed}.csv"));
        kde_emit(&unc, grid_points, &path)?;
        files.push(path);
        rows.push(UncSummaryRow {
            label: label.clone(),
            d_model: teacher.config().d_model,
            n_layers: teacher.config().n_layers,
            seed,
            samples: unc.len(),
            median_unc: median(&unc),
            mean_unc: unc.iter().sum::<f64>() / unc.len() as f64,
        });
    }
    Ok((rows, files))
}

/// Trains the teacher ladder (or the widths in the sweep) per seed and emits
/// UnC distributions. With `checkpoints`, uses those teachers instead.
pub fn run_unc_dist(spec: &ExperimentSpec, checkpoints: &[PathBuf], out_dir: &Path, jobs: usize) -> Result<ExperimentOutput> {
    ensure_dir(out_dir)?;
    let corpus = load_corpus(spec)?;
    let mut out = ExperimentOutput::default();
    let mut rows = Vec::new();
    if !checkpoints.is_empty() {
        let loaded = checkpoints.iter().map(Checkpoint::load).collect::<Result<Vec<_>>>()?;
        let teachers: Vec<(String, &TinyLM)> = checkpoints
            .iter()
            .zip(&loaded)
            .map(|(p, ck)| {
                let stem = p.file_stem().map_or("teacher".into(), |s| s.to_string_lossy().into_owned());
                (stem, &ck.model)
            })
            .collect();
        let (r, files) = unc_distribution(&corpus, &teachers, spec.unc_sample_tokens, spec.kde_grid_points, 0, out_dir)?;
        rows.extend(r);
        out.files.extend(files);
    } else {
        let widths = spec.sweep_values(SweepParameter::TeacherSize);
        let configs = widths
            .iter()
            .map(|&w| ladder_config(w as usize, spec.teacher.context_len))
            .collect::<Result<Vec<_>>>()?;
        let settings = TrainSettings::teacher(spec);
        let per = per_seed(&spec.seeds, jobs, |seed| {
            let mut out = ExperimentOutput::default();
            let mut models = Vec::new();
            for cfg in &configs {
                let (ck, record) = train_teacher(&corpus, cfg.with_seed(seed), &settings, seed, ExperimentKind::UncDist.name())?;
                let path = out_dir.join(format!("teacher_d{}_seed{seed}.ckpt", cfg.d_model));
                ck.save(&path)?;
                out.files.push(path);
                out.records.push(record);
                models.push(ck.model);
            }
            let teachers: Vec<(String, &TinyLM)> = models.iter().map(|m| (format!("d{}", m.config().d_model), m)).collect();
            let (rows, files) = unc_distribution(&corpus, &teachers, spec.unc_sample_tokens, spec.kde_grid_points, seed, out_dir)?;
            out.files.extend(files);
            Ok((out, rows))
        })?;
        for (o, r) in per {
            out.extend(o);
            rows.extend(r);
        }
    }
    let path = out_dir.join("unc_summary.csv");
    write_rows(&path, &UNC_SUMMARY_HEADER, &rows, None)?;
    out.files.push(path);
    finish(out, out_dir)
}

/// `β_i = (i − 10) / 10` for `i = 0..21`, so −1, 0 and 1 are exact.
pub fn landscape_betas() -> Vec<f64> {
    (0..LANDSCAPE_POINTS).map(|i| (i as f64 - 10.0) / 10.0).collect()
}

/// Validation perplexity along `θ₁ + β·(θ₁ − θ₀)`.
pub fn landscape_curve(theta0: &TinyLM, theta1: &TinyLM, val: &[usize]) -> Result<Vec<LandscapeRow>> {
    if theta0.config().with_seed(0) != theta1.config().with_seed(0) {
        return Err(Error::Config("landscape endpoints have different architectures".into()));
    }
    landscape_betas()
        .into_iter()
        .map(|beta| {
            let params = interpolate(theta0.params(), theta1.params(), beta)?;
            let model = TinyLM::from_params(*theta1.config(), params)?;
            Ok(LandscapeRow {
                beta,
                perplexity: model.perplexity(val)?,
            })
        })
        .collect()
}

pub fn write_landscape(path: impl AsRef<Path>, rows: &[LandscapeRow]) -> Result<()> {
    write_rows(path.as_ref(), &LANDSCAPE_HEADER, rows, None)
}

/// With explicit endpoints, writes one curve. Otherwise distills a
/// forward-KL and an ATKD student per seed and writes a curve for each,
/// from initialization to the distilled weights.
pub fn run_landscape(
    spec: &ExperimentSpec,
    endpoints: Option<(&Path, &Path)>,
    out_dir: &Path,
    jobs: usize,
) -> Result<ExperimentOutput> {
    ensure_dir(out_dir)?;
    if let Some((p0, p1)) = endpoints {
        let corpus = load_corpus(spec)?;
        let (t0, t1) = (Checkpoint::load(p0)?, Checkpoint::load(p1)?);
        let rows = landscape_curve(&t0.model, &t1.model, corpus.val_prefix(spec.eval_tokens))?;
        let path = out_dir.join("landscape.csv");
        write_landscape(&path, &rows)?;
        return Ok(ExperimentOutput {
            records: Vec::new(),
            files: vec![path],
        });
    }
    let plans = [
        StudentPlan::new(ObjectiveMode::ForwardKl.name(), ObjectiveConfig::new(ObjectiveMode::ForwardKl)),
        StudentPlan::new(ObjectiveMode::Atkd.name(), spec.objective.with_mode(ObjectiveMode::Atkd)),
    ];
    let (mut out, outcomes) = teacher_then_cohort(spec, out_dir, jobs, &plans)?;
    let corpus = load_corpus(spec)?;
    let val = corpus.val_prefix(spec.eval_tokens);
    for o in outcomes.iter().flatten() {
        let rows = landscape_curve(&o.initial, &o.checkpoint.model, val)?;
        let path = out_dir.join(format!("landscape_{}_seed{}.csv", file_label(&o.record.label), o.record.seed));
        write_landscape(&path, &rows)?;
        info!("landscape {} seed {}: {} points", o.record.label, o.record.seed, rows.len());
        out.files.push(path);
    }
    finish(out, out_dir)
}
