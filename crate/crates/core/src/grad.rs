//! Analytical gradients of every objective with respect to the student
//! logits, and a central finite-difference checker.
//!
//! Per-token derivatives, with `q` the student softmax, `q̂` its non-target
//! renormalization and `g` the target class:
//!
//! ```text
//! ∂ KL(p‖q)      / ∂z_i = q_i − p_i
//! ∂ KL(q‖p)      / ∂z_i = q_i (r_i − Σ_j q_j r_j),   r = log q − log p
//! ∂ KL(p_b‖q_b)  / ∂z_i = q_g − p_g                  (i = g)
//!                       = q̂_i (q_\g − p_\g)          (i ≠ g)
//! ∂ KL(p̂‖q̂)      / ∂z_i = q̂_i − p̂_i                  (i ≠ g), 0 at g
//! ∂ KL(q_b‖p_b)  / ∂z_i = s · q_g (δ_ig − q_i),      s = log(q_g/p_g) − log(q_\g/p_\g)
//! ∂ KL(q̂‖p̂)      / ∂z_i = q̂_i (r̂_i − Σ_j q̂_j r̂_j)    (i ≠ g), 0 at g
//! ```
//!
//! The hard/easy split depends on teacher logits only, so it is constant with
//! respect to the student and carries no gradient.

use rayon::prelude::*;

use crate::decompose::{LogitBatch, TokenView};
use crate::error::{Error, Result};
use crate::objective::{self, Direction, ObjectiveConfig, TokenSplit};

/// `∂ loss / ∂ student_logits`, row-major `T×C`. Mask-false rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradient {
    tokens: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogitGradient {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }
}

pub(crate) fn forward_kl_row(v: &TokenView, scale: f64, row: &mut [f64]) {
    for (i, r) in row.iter_mut().enumerate() {
        *r = scale * (v.lq[i].exp() - v.lp[i].exp());
    }
}

pub(crate) fn reverse_kl_row(v: &TokenView, scale: f64, row: &mut [f64]) {
    let kl = v.kl_reverse();
    for (i, r) in row.iter_mut().enumerate() {
        let q = v.lq[i].exp();
        *r = scale * q * ((v.lq[i] - v.lp[i]) - kl);
    }
}

/// Writes `coef · (a·∇TKD + b·∇DKD)` for one token.
pub(crate) fn decoupled_row(
    v: &TokenView,
    direction: Direction,
    coef: f64,
    tkd_scale: f64,
    dkd_scale: f64,
    row: &mut [f64],
) {
    let g = v.target;
    let q_target = v.lq[g].exp();
    match direction {
        Direction::Forward => {
            let p_target = v.lp[g].exp();
            let rest_gap = v.lq_rest.exp() - v.lp_rest.exp();
            for (i, r) in row.iter_mut().enumerate() {
                let (dt, dd) = if i == g {
                    (q_target - p_target, 0.0)
                } else {
                    let q_hat = v.lq_hat[i].exp();
                    (q_hat * rest_gap, q_hat - v.lp_hat[i].exp())
                };
                *r = coef * (tkd_scale * dt + dkd_scale * dd);
            }
        }
        Direction::Reverse => {
            let slope = (v.lq[g] - v.lp[g]) - (v.lq_rest - v.lp_rest);
            let dkd_rev = v.dkd_reverse();
            for (i, r) in row.iter_mut().enumerate() {
                let (dt, dd) = if i == g {
                    (slope * q_target * (1.0 - q_target), 0.0)
                } else {
                    let q_hat = v.lq_hat[i].exp();
                    (
                        -slope * q_target * v.lq[i].exp(),
                        q_hat * ((v.lq_hat[i] - v.lp_hat[i]) - dkd_rev),
                    )
                };
                *r = coef * (tkd_scale * dt + dkd_scale * dd);
            }
        }
    }
}

fn loss_grad_with(
    batch: &LogitBatch,
    cfg: &ObjectiveConfig,
    direction: Direction,
) -> Result<(f64, LogitGradient)> {
    let mut values = vec![0.0; batch.tokens() * batch.classes()];
    let loss = objective::evaluate(batch, cfg, direction, None, Some(&mut values))?;
    Ok((
        loss,
        LogitGradient {
            tokens: batch.tokens(),
            classes: batch.classes(),
            values,
        },
    ))
}

/// Loss and its exact gradient. The loss is computed by the same routine as
/// [`objective::objective_eval`] and matches it bit for bit.
pub fn loss_grad(batch: &LogitBatch, cfg: &ObjectiveConfig) -> Result<(f64, LogitGradient)> {
    loss_grad_with(batch, cfg, Direction::Forward)
}

/// Loss and gradient of [`objective::atkd_on_reverse`].
pub fn reverse_atkd_loss_grad(
    batch: &LogitBatch,
    cfg: &ObjectiveConfig,
) -> Result<(f64, LogitGradient)> {
    let cfg = ObjectiveConfig {
        mode: objective::ObjectiveMode::Atkd,
        ..*cfg
    };
    loss_grad_with(batch, &cfg, Direction::Reverse)
}

/// Floor on the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Largest relative error between the analytical gradient and central
/// differences `(L(z+ε) − L(z−ε)) / 2ε` over every mask-true student logit.
pub fn fd_check(batch: &LogitBatch, cfg: &ObjectiveConfig, epsilon: f64) -> Result<f64> {
    fd_check_direction(batch, cfg, epsilon, Direction::Forward)
}

/// [`fd_check`] for [`reverse_atkd_loss_grad`].
pub fn fd_check_reverse_atkd(batch: &LogitBatch, cfg: &ObjectiveConfig, epsilon: f64) -> Result<f64> {
    let cfg = ObjectiveConfig {
        mode: objective::ObjectiveMode::Atkd,
        ..*cfg
    };
    fd_check_direction(batch, &cfg, epsilon, Direction::Reverse)
}

fn fd_check_direction(
    batch: &LogitBatch,
    cfg: &ObjectiveConfig,
    epsilon: f64,
    direction: Direction,
) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "epsilon must lie in [1e-8, 1e-3], got {epsilon}"
        )));
    }
    let (_, analytic) = loss_grad_with(batch, cfg, direction)?;
    let split = objective::split_batch(batch, cfg.k_ratio)?;
    let c = batch.classes();
    let coords: Vec<usize> = batch
        .active_indices()
        .into_iter()
        .flat_map(|t| (t * c)..((t + 1) * c))
        .collect();

    let worst = coords
        .par_iter()
        .map(|&ix| -> Result<f64> {
            let mut probe = batch.clone();
            let base = probe.student_logits()[ix];
            probe.student_logits_mut()[ix] = base + epsilon;
            let plus = frozen_eval(&probe, cfg, direction, &split)?;
            probe.student_logits_mut()[ix] = base - epsilon;
            let minus = frozen_eval(&probe, cfg, direction, &split)?;
            let numeric = (plus - minus) / (2.0 * epsilon);
            Ok(relative_error(analytic.values[ix], numeric))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(worst)
}

fn frozen_eval(
    probe: &LogitBatch,
    cfg: &ObjectiveConfig,
    direction: Direction,
    split: &TokenSplit,
) -> Result<f64> {
    debug_assert_eq!(&objective::split_batch(probe, cfg.k_ratio)?, split);
    objective::evaluate(probe, cfg, direction, Some(split), None)
}
