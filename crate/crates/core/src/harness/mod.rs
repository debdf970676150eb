//! Teacher training, distillation and the analysis experiments, driven by a
//! declarative [`ExperimentSpec`].

mod corpus;
mod experiments;
mod record;
mod spec;
mod train;

pub use corpus::{Batch, BatchSampler, Corpus};
pub use experiments::*;
pub use record::{read_jsonl, write_jsonl, EvalPoint, RunRecord};
pub use spec::{ladder_config, ExperimentKind, ExperimentSpec, Sweep, SweepParameter, TEACHER_LADDER};
pub use train::{distill_cohort, train_teacher, DistillOutcome, StudentPlan, TokenSet, TrainSettings};
