//! Token-level knowledge distillation for autoregressive language models.
//!
//! The forward KL between teacher and student next-token distributions is
//! split per token into a binary target term (TKD) and a non-target term
//! (DKD) weighted by the teacher's non-target mass (UnC). On top of that
//! decomposition the crate provides the decoupled objectives, the adaptive
//! ATKD objective that treats high-UnC ("hard") and low-UnC ("easy") tokens
//! differently, their analytical gradients, a small byte-level transformer to
//! train teachers and students with, the file formats used to exchange logits
//! and results, and the experiment harness driving it all.

mod bytes;
pub mod decompose;
pub mod error;
pub mod grad;
pub mod harness;
pub mod io;
pub mod model;
pub mod objective;
pub mod prob;

pub use decompose::{batch_decompose, token_decompose, LogitBatch, TokenDecomposition, TokenTerms};
pub use error::{Error, ParseErrorKind, Result};
pub use grad::{fd_check, loss_grad, LogitGradient};
pub use objective::{
    atkd_loss, atkd_on_reverse, objective_eval, rank_and_split, ObjectiveConfig, ObjectiveMode,
    TokenSplit,
};
pub use prob::{BinaryProb, LogitVector, NonTargetProb, ProbVector};
pub use model::{interpolate, AdamConfig, Checkpoint, ModelConfig, TinyLM};
pub use harness::{ExperimentSpec, RunRecord};
