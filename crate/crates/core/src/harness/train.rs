//! Teacher training on next-token cross-entropy and cohort distillation.

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::corpus::{Batch, BatchSampler, Corpus};
use super::record::{EvalPoint, RunRecord};
use super::spec::ExperimentSpec;
use crate::decompose::{unc_from_rows, LogitBatch};
use crate::error::{Error, Result};
use crate::grad::loss_grad;
use crate::model::{adam_step, AdamConfig, AdamState, Checkpoint, ModelConfig, TinyLM};
use crate::objective::{rank_and_split, ObjectiveConfig};
use crate::prob::log_sum_exp;

/// Everything a training loop needs besides the models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub optimizer: AdamConfig,
    pub eval_interval: u64,
    pub eval_tokens: Option<usize>,
    pub ce_mix: f64,
}

impl TrainSettings {
    pub fn teacher(spec: &ExperimentSpec) -> Self {
        Self {
            steps: spec.teacher_steps(),
            batch_size: spec.batch_size,
            seq_len: spec.teacher.context_len,
            optimizer: spec.teacher_optimizer(),
            eval_interval: spec.eval_interval,
            eval_tokens: spec.eval_tokens,
            ce_mix: 0.0,
        }
    }

    pub fn student(spec: &ExperimentSpec) -> Self {
        Self {
            steps: spec.steps,
            batch_size: spec.batch_size,
            seq_len: spec.seq_len(),
            optimizer: spec.optimizer,
            eval_interval: spec.eval_interval,
            eval_tokens: spec.eval_tokens,
            ce_mix: spec.ce_mix,
        }
    }

    fn is_eval_step(&self, step: u64) -> bool {
        step.is_multiple_of(self.eval_interval) || step == self.steps
    }
}

/// Independent random streams derived from a run seed.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

const TEACHER_BATCHES: u64 = 1;
const STUDENT_BATCHES: u64 = 2;

/// Mean next-token cross-entropy and its gradient w.r.t. the logits, scaled
/// by `weight` and accumulated into `grad`.
fn cross_entropy(logits: &[f64], targets: &[usize], vocab: usize, weight: f64, grad: &mut [f64]) -> f64 {
    let n = targets.len() as f64;
    let mut total = 0.0;
    for (t, &y) in targets.iter().enumerate() {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let lse = log_sum_exp(row);
        total += lse - row[y];
        let g = &mut grad[t * vocab..(t + 1) * vocab];
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi += weight * (z - lse).exp() / n;
        }
        g[y] -= weight / n;
    }
    total / n
}

fn check_finite(loss: f64, step: u64, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("{what} loss is {loss}"),
        })
    }
}

/// Trains a teacher from `config` (its seed included) and returns the
/// checkpoint and run record. Fails if the final validation perplexity is
/// not below the uniform baseline.
pub fn train_teacher(
    corpus: &Corpus,
    config: ModelConfig,
    settings: &TrainSettings,
    seed: u64,
    experiment: &str,
) -> Result<(Checkpoint, RunRecord)> {
    settings.optimizer.validate()?;
    let started = Instant::now();
    let mut model = TinyLM::init(config)?;
    let mut adam = AdamState::new(model.param_count());
    let mut sampler = BatchSampler::new(corpus, settings.seq_len.min(config.context_len), settings.batch_size, stream_seed(seed, TEACHER_BATCHES))?;
    let val = corpus.val_prefix(settings.eval_tokens);
    let v = config.vocab_size;
    let mut series = Vec::new();
    for step in 1..=settings.steps {
        let Batch { inputs, targets, batch, .. } = sampler.next_batch()?;
        let cache = model.forward_batch(&inputs, batch)?;
        let mut grad = vec![0.0; cache.logits().len()];
        let loss = cross_entropy(cache.logits(), &targets, v, 1.0, &mut grad);
        check_finite(loss, step, "cross-entropy")?;
        let grads = model.backward_cached(&cache, &grad)?;
        adam_step(model.params_mut(), &grads, &mut adam, &settings.optimizer)?;
        if settings.is_eval_step(step) {
            let ppl = model.perplexity(val)?;
            check_finite(ppl, step, "validation")?;
            debug!("teacher d={} seed={seed} step {step}: loss {loss:.4} val ppl {ppl:.3}", config.d_model);
            series.push(EvalPoint { step, val_ppl: ppl });
        }
    }
    let final_ppl = series.last().map(|p| p.val_ppl).expect("steps >= 1");
    if !(final_ppl < v as f64) {
        return Err(Error::TrainingFailure(format!(
            "teacher validation perplexity {final_ppl} is not below the uniform baseline {v}"
        )));
    }
    info!("teacher d={} seed={seed}: val ppl {final_ppl:.3}", config.d_model);
    let record = RunRecord {
        experiment: experiment.to_string(),
        label: format!("teacher_d{}", config.d_model),
        seed,
        config: serde_json::json!({
            "role": "teacher",
            "model": config,
            "train": settings,
        }),
        series,
        final_ppl,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((Checkpoint::new(model, settings.steps, corpus.hash()), record))
}

/// Which mask-true tokens a student learns from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSet {
    Full,
    /// The top-`k` tokens of each batch by teacher UnC.
    HardOnly,
    EasyOnly,
}

impl TokenSet {
    pub fn name(self) -> &'static str {
        match self {
            TokenSet::Full => "full",
            TokenSet::HardOnly => "hard_only",
            TokenSet::EasyOnly => "easy_only",
        }
    }
}

/// One student of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentPlan {
    pub label: String,
    pub objective: ObjectiveConfig,
    pub token_set: TokenSet,
    /// Hard fraction used to carve `token_set` out of each batch.
    pub token_set_k: f64,
}

impl StudentPlan {
    pub fn new(label: impl Into<String>, objective: ObjectiveConfig) -> Self {
        Self {
            label: label.into(),
            objective,
            token_set: TokenSet::Full,
            token_set_k: 0.5,
        }
    }

    pub fn restricted(mut self, token_set: TokenSet, k: f64) -> Self {
        self.token_set = token_set;
        self.token_set_k = k;
        self
    }
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    /// Weights before distillation.
    pub initial: TinyLM,
    pub checkpoint: Checkpoint,
    pub record: RunRecord,
    /// Training loss at every step, measured before that step's update.
    pub losses: Vec<f64>,
}

struct Member<'p> {
    plan: &'p StudentPlan,
    model: TinyLM,
    initial: TinyLM,
    adam: AdamState,
    series: Vec<EvalPoint>,
    losses: Vec<f64>,
}

/// Distills one student per plan from a frozen teacher. Every student sees
/// the same batch sequence and starts from the same initialization, both
/// derived from `seed`; the teacher's logits are computed once per batch and
/// shared. Each student's trajectory is exactly what a solo run would give.
pub fn distill_cohort(
    corpus: &Corpus,
    teacher: &TinyLM,
    student_config: ModelConfig,
    plans: &[StudentPlan],
    settings: &TrainSettings,
    seed: u64,
    experiment: &str,
) -> Result<Vec<DistillOutcome>> {
    settings.optimizer.validate()?;
    let t_cfg = teacher.config();
    if t_cfg.vocab_size != student_config.vocab_size {
        return Err(Error::Config(format!(
            "teacher vocabulary {} differs from student vocabulary {}",
            t_cfg.vocab_size, student_config.vocab_size
        )));
    }
    let seq_len = settings.seq_len.min(t_cfg.context_len).min(student_config.context_len);
    for plan in plans {
        plan.objective.validate()?;
        if !(0.0..=1.0).contains(&plan.token_set_k) {
            return Err(Error::Config(format!("token_set_k must lie in [0, 1], got {}", plan.token_set_k)));
        }
    }
    let started = Instant::now();
    let initial = TinyLM::init(student_config)?;
    let mut members: Vec<Member> = plans
        .iter()
        .map(|plan| Member {
            plan,
            model: initial.clone(),
            initial: initial.clone(),
            adam: AdamState::new(initial.param_count()),
            series: Vec::new(),
            losses: Vec::with_capacity(settings.steps as usize),
        })
        .collect();
    let mut sampler = BatchSampler::new(corpus, seq_len, settings.batch_size, stream_seed(seed, STUDENT_BATCHES))?;
    let val = corpus.val_prefix(settings.eval_tokens);
    let v = student_config.vocab_size;

    for step in 1..=settings.steps {
        let Batch { inputs, targets, batch, .. } = sampler.next_batch()?;
        let n = inputs.len();
        let teacher_logits = teacher.forward_batch(&inputs, batch)?.into_logits();
        let everything = vec![true; n];
        let needs_unc = members.iter().any(|m| m.plan.token_set != TokenSet::Full);
        let unc = if needs_unc {
            unc_from_rows(&teacher_logits, v, &targets, &everything)
        } else {
            Vec::new()
        };

        for m in &mut members {
            let mask = match m.plan.token_set {
                TokenSet::Full => everything.clone(),
                TokenSet::HardOnly => rank_and_split(&unc, &everything, m.plan.token_set_k)?.hard_mask(n),
                TokenSet::EasyOnly => rank_and_split(&unc, &everything, m.plan.token_set_k)?.easy_mask(n),
            };
            let cache = m.model.forward_batch(&inputs, batch)?;
            let (mut loss, mut grad) = if mask.iter().any(|&b| b) {
                let lb = LogitBatch::new(n, v, teacher_logits.clone(), cache.logits().to_vec(), targets.clone(), mask)?;
                let (loss, g) = loss_grad(&lb, &m.plan.objective)?;
                (loss, g.into_values())
            } else {
                (0.0, vec![0.0; n * v])
            };
            if settings.ce_mix > 0.0 {
                loss += settings.ce_mix * cross_entropy(cache.logits(), &targets, v, settings.ce_mix, &mut grad);
            }
            check_finite(loss, step, &m.plan.label)?;
            m.losses.push(loss);
            let grads = m.model.backward_cached(&cache, &grad)?;
            adam_step(m.model.params_mut(), &grads, &mut m.adam, &settings.optimizer)?;
            if settings.is_eval_step(step) {
                let ppl = m.model.perplexity(val)?;
                check_finite(ppl, step, "validation")?;
                debug!("{} seed={seed} step {step}: loss {loss:.4} val ppl {ppl:.3}", m.plan.label);
                m.series.push(EvalPoint { step, val_ppl: ppl });
            }
        }
    }

    let wall = started.elapsed().as_secs_f64();
    Ok(members
        .into_iter()
        .map(|m| {
            let final_ppl = m.series.last().map(|p| p.val_ppl).expect("steps >= 1");
            info!("{} seed={seed}: val ppl {final_ppl:.3}", m.plan.label);
            let record = RunRecord {
                experiment: experiment.to_string(),
                label: m.plan.label.clone(),
                seed,
                config: serde_json::json!({
                    "role": "student",
                    "plan": m.plan,
                    "student": student_config,
                    "teacher": teacher.config(),
                    "train": settings,
                }),
                series: m.series,
                final_ppl,
                wall_time_s: wall,
            };
            DistillOutcome {
                initial: m.initial,
                checkpoint: Checkpoint::new(m.model, settings.steps, corpus.hash()),
                record,
                losses: m.losses,
            }
        })
        .collect())
}
