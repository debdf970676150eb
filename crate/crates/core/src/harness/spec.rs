use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdamConfig, ModelConfig};
use crate::objective::ObjectiveConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TrainTeacher,
    Distill,
    TokenSplit,
    ObjectiveAblation,
    AlphaSweep,
    KSweep,
    LambdaSweep,
    UncDist,
    Landscape,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TrainTeacher => "train_teacher",
            ExperimentKind::Distill => "distill",
            ExperimentKind::TokenSplit => "token_split",
            ExperimentKind::ObjectiveAblation => "objective_ablation",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::KSweep => "k_sweep",
            ExperimentKind::LambdaSweep => "lambda_sweep",
            ExperimentKind::UncDist => "unc_dist",
            ExperimentKind::Landscape => "landscape",
        }
    }

    /// The sweep parameter this kind varies, if any.
    pub fn sweep_parameter(self) -> Option<SweepParameter> {
        match self {
            ExperimentKind::AlphaSweep => Some(SweepParameter::Alpha),
            ExperimentKind::KSweep => Some(SweepParameter::KRatio),
            ExperimentKind::LambdaSweep => Some(SweepParameter::Lambda),
            ExperimentKind::UncDist => Some(SweepParameter::TeacherSize),
            _ => None,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    KRatio,
    Lambda,
    Alpha,
    TeacherSize,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::KRatio => "k_ratio",
            SweepParameter::Lambda => "lambda",
            SweepParameter::Alpha => "alpha",
            SweepParameter::TeacherSize => "teacher_size",
        }
    }

    /// `{0, 0.1, …, 1}` for k and λ, quarters for α, the ladder widths for
    /// teacher size.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParameter::KRatio | SweepParameter::Lambda => (0..=10).map(|i| i as f64 / 10.0).collect(),
            SweepParameter::Alpha => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            SweepParameter::TeacherSize => TEACHER_LADDER.iter().map(|c| c.0 as f64).collect(),
        }
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k_ratio" | "k" => Ok(SweepParameter::KRatio),
            "lambda" => Ok(SweepParameter::Lambda),
            "alpha" => Ok(SweepParameter::Alpha),
            "teacher_size" => Ok(SweepParameter::TeacherSize),
            other => Err(Error::Config(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    #[serde(default)]
    pub values: Vec<f64>,
}

/// `(d_model, n_layers, n_heads)` of the teacher-size ladder.
pub const TEACHER_LADDER: [(usize, usize, usize); 4] = [(48, 2, 2), (96, 3, 3), (128, 4, 4), (192, 4, 6)];

pub fn ladder_config(d_model: usize, context_len: usize) -> Result<ModelConfig> {
    let &(d, n_layers, n_heads) = TEACHER_LADDER
        .iter()
        .find(|c| c.0 == d_model)
        .ok_or_else(|| Error::Config(format!("no ladder teacher with d_model {d_model}")))?;
    Ok(ModelConfig {
        vocab_size: crate::model::BYTE_VOCAB,
        d_model: d,
        n_layers,
        n_heads,
        context_len,
        seed: 0,
    })
}

fn default_train_fraction() -> f64 {
    0.9
}
fn default_steps() -> u64 {
    3000
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_batch() -> usize {
    32
}
fn default_eval_interval() -> u64 {
    200
}
fn default_unc_tokens() -> usize {
    10_000
}
fn default_grid() -> usize {
    256
}

/// Declarative description of one experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: Option<ExperimentKind>,
    pub corpus_path: PathBuf,
    /// Leading fraction of the corpus used for training; the rest is validation.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "ModelConfig::teacher_default")]
    pub teacher: ModelConfig,
    #[serde(default = "ModelConfig::student_default")]
    pub student: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Optimizer for teacher training; defaults to `optimizer`.
    #[serde(default)]
    pub teacher_optimizer: Option<AdamConfig>,
    /// Distillation steps (teacher training steps for `train_teacher`).
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Teacher training steps when a teacher has to be trained first;
    /// defaults to `steps`.
    #[serde(default)]
    pub teacher_steps: Option<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    /// Caps the validation tokens scored per evaluation; `None` scores the
    /// whole validation split.
    #[serde(default)]
    pub eval_tokens: Option<usize>,
    /// Weight of ground-truth cross-entropy added to the distillation loss.
    #[serde(default)]
    pub ce_mix: f64,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Pre-trained teacher to distill from instead of training one.
    #[serde(default)]
    pub teacher_checkpoint: Option<PathBuf>,
    /// Teacher sample size for UnC distributions.
    #[serde(default = "default_unc_tokens")]
    pub unc_sample_tokens: usize,
    #[serde(default = "default_grid")]
    pub kde_grid_points: usize,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML spec; a relative `corpus_path` or `teacher_checkpoint`
    /// is resolved against the spec file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if spec.corpus_path.is_relative() {
            spec.corpus_path = base.join(&spec.corpus_path);
        }
        if let Some(t) = spec.teacher_checkpoint.as_mut().filter(|t| t.is_relative()) {
            *t = base.join(&*t);
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn with_corpus(corpus_path: impl Into<PathBuf>) -> Self {
        Self {
            experiment: None,
            corpus_path: corpus_path.into(),
            train_fraction: default_train_fraction(),
            teacher: ModelConfig::teacher_default(),
            student: ModelConfig::student_default(),
            objective: ObjectiveConfig::default(),
            optimizer: AdamConfig::default(),
            teacher_optimizer: None,
            steps: default_steps(),
            teacher_steps: None,
            seeds: default_seeds(),
            batch_size: default_batch(),
            eval_interval: default_eval_interval(),
            eval_tokens: None,
            ce_mix: 0.0,
            sweep: None,
            teacher_checkpoint: None,
            unc_sample_tokens: default_unc_tokens(),
            kde_grid_points: default_grid(),
        }
    }

    pub fn teacher_steps(&self) -> u64 {
        self.teacher_steps.unwrap_or(self.steps)
    }

    pub fn teacher_optimizer(&self) -> AdamConfig {
        self.teacher_optimizer.unwrap_or(self.optimizer)
    }

    /// Sequence length used for training batches.
    pub fn seq_len(&self) -> usize {
        self.student.context_len.min(self.teacher.context_len)
    }

    /// Sweep values, falling back to the parameter's defaults.
    pub fn sweep_values(&self, parameter: SweepParameter) -> Vec<f64> {
        match &self.sweep {
            Some(s) if s.parameter == parameter && !s.values.is_empty() => s.values.clone(),
            _ => parameter.default_values(),
        }
    }

    /// Resolves the experiment kind against the one a subcommand expects.
    pub fn resolve_kind(&mut self, expected: &[ExperimentKind]) -> Result<ExperimentKind> {
        let kind = match self.experiment {
            Some(k) if expected.contains(&k) => k,
            Some(k) => {
                return Err(Error::Config(format!(
                    "spec declares experiment `{k}`, expected one of {}",
                    expected.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
                )))
            }
            None => match (expected, &self.sweep) {
                ([only], _) => *only,
                (_, Some(s)) => *expected
                    .iter()
                    .find(|k| k.sweep_parameter() == Some(s.parameter))
                    .ok_or_else(|| Error::Config(format!("no experiment sweeps `{}`", s.parameter.name())))?,
                _ => return Err(Error::Config("spec needs an `experiment` or a `sweep`".into())),
            },
        };
        self.experiment = Some(kind);
        self.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.student.validate()?;
        self.objective.validate()?;
        self.optimizer.validate()?;
        if let Some(t) = &self.teacher_optimizer {
            t.validate()?;
        }
        if self.steps == 0 || self.teacher_steps == Some(0) {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config("batch_size and eval_interval must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.ce_mix >= 0.0 && self.ce_mix.is_finite()) {
            return Err(Error::Config(format!("ce_mix must be >= 0, got {}", self.ce_mix)));
        }
        if self.teacher.vocab_size != self.student.vocab_size {
            return Err(Error::Config(format!(
                "teacher vocabulary {} differs from student vocabulary {}",
                self.teacher.vocab_size, self.student.vocab_size
            )));
        }
        if let Some(sweep) = &self.sweep {
            if let Some(kind) = self.experiment {
                if kind.sweep_parameter() != Some(sweep.parameter) {
                    return Err(Error::Config(format!(
                        "sweep over `{}` does not fit experiment `{kind}`",
                        sweep.parameter.name()
                    )));
                }
            }
            let unit = matches!(
                sweep.parameter,
                SweepParameter::KRatio | SweepParameter::Lambda | SweepParameter::Alpha
            );
            if unit && sweep.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!(
                    "{} values must lie in [0, 1]",
                    sweep.parameter.name()
                )));
            }
            if sweep.parameter == SweepParameter::TeacherSize {
                for &v in &sweep.values {
                    if v.fract() != 0.0 || v < 0.0 {
                        return Err(Error::Config(format!("teacher_size {v} is not a width")));
                    }
                    ladder_config(v as usize, self.teacher.context_len)?;
                }
            }
        }
        if self.experiment == Some(ExperimentKind::UncDist) && self.kde_grid_points < crate::io::MIN_GRID_POINTS {
            return Err(Error::Config("kde_grid_points must be at least 16".into()));
        }
        Ok(())
    }
}
