//! Probability primitives over a vocabulary of `C` classes.
//!
//! Everything here works in `f64`. Distributions derived from logits are
//! produced in log-space first (max-subtracted log-sum-exp) and only
//! exponentiated at the end, so logits in the ±1e4 range are safe.

use crate::error::{Error, Result};

/// Unnormalized scores, one per class. At least two classes, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes (a target and a non-target), got {}",
                values.len()
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.0.len() {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: self.0.len(),
            });
        }
        Ok(())
    }
}

/// A normalized distribution over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Tolerance on `|Σ p - 1|` accepted by [`ProbVector::new`].
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        if values.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if let Some(i) = values.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput(format!(
                "probability {} at index {i} is outside [0, 1]",
                values[i]
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(values))
    }

    pub fn from_logits(logits: &LogitVector) -> Self {
        Self(softmax(logits))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Target mass versus the total mass of every other class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryProb {
    values: [f64; 2],
}

impl BinaryProb {
    pub fn new(p_target: f64, p_nontarget: f64) -> Result<Self> {
        check_finite(&[p_target, p_nontarget])?;
        if p_target < 0.0 || p_nontarget < 0.0 || (p_target + p_nontarget - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "binary pair ({p_target}, {p_nontarget}) is not a distribution"
            )));
        }
        Ok(Self {
            values: [p_target, p_nontarget],
        })
    }

    pub fn p_target(&self) -> f64 {
        self.values[0]
    }

    pub fn p_nontarget(&self) -> f64 {
        self.values[1]
    }
}

/// Distribution renormalized over the non-target classes.
///
/// Stored full-length with the target slot pinned to exactly zero so class
/// indices line up with the logits they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NonTargetProb {
    values: Vec<f64>,
    target_index: usize,
}

impl NonTargetProb {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Anything [`kl_div`] can compare.
pub trait Distribution {
    fn probs(&self) -> &[f64];
}

impl Distribution for ProbVector {
    fn probs(&self) -> &[f64] {
        &self.0
    }
}

impl Distribution for BinaryProb {
    fn probs(&self) -> &[f64] {
        &self.values
    }
}

impl Distribution for NonTargetProb {
    fn probs(&self) -> &[f64] {
        &self.values
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// `log Σ exp(x)` with the maximum factored out. Returns `-inf` for an
/// empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `log Σ_{j≠skip} exp(x_j)`.
pub fn log_sum_exp_except(xs: &[f64], skip: usize) -> f64 {
    let max = xs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &x)| (x - max).exp())
        .sum();
    max + sum.ln()
}

/// Writes `log_softmax(logits)` into `out` and returns the log-partition.
pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) -> f64 {
    debug_assert_eq!(logits.len(), out.len());
    let lse = log_sum_exp(logits);
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
    lse
}

pub fn log_softmax(logits: &LogitVector) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_into(logits.values(), &mut out);
    out
}

pub fn softmax(logits: &LogitVector) -> Vec<f64> {
    let mut out = log_softmax(logits);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}

pub fn binary_split(probs: &ProbVector, target_index: usize) -> Result<BinaryProb> {
    let values = probs.values();
    if target_index >= values.len() {
        return Err(Error::IndexOutOfRange {
            index: target_index,
            len: values.len(),
        });
    }
    let p_target = values[target_index];
    let p_nontarget: f64 = values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_index)
        .map(|(_, &p)| p)
        .sum();
    Ok(BinaryProb {
        values: [p_target, p_nontarget],
    })
}

/// Non-target distribution `exp(z_j) / Σ_{k≠g} exp(z_k)`, evaluated in log-space.
pub fn nontarget_renorm(logits: &LogitVector, target_index: usize) -> Result<NonTargetProb> {
    logits.check_target(target_index)?;
    let z = logits.values();
    let lse = log_sum_exp_except(z, target_index);
    let values = z
        .iter()
        .enumerate()
        .map(|(j, &zj)| {
            if j == target_index {
                0.0
            } else {
                (zj - lse).exp()
            }
        })
        .collect();
    Ok(NonTargetProb {
        values,
        target_index,
    })
}

/// `KL(p ‖ q) = Σ p_j (log p_j − log q_j)` with `0 · log(0/q) := 0`.
pub fn kl_div<D: Distribution + ?Sized>(p: &D, q: &D) -> Result<f64> {
    kl_div_slices(p.probs(), q.probs())
}

pub fn kl_div_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut total = 0.0;
    for (j, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Err(Error::InfiniteDivergence { index: j });
        }
        total += pj * (pj.ln() - qj.ln());
    }
    // Rounding can leave a tiny negative residue when p ≈ q.
    Ok(total.max(0.0))
}

/// KL divergence from log-probabilities, `Σ exp(lp_j) (lp_j − lq_j)`.
///
/// Both arguments must come from finite logits, so `lq` is never `-inf`
/// where `lp` carries mass.
pub(crate) fn kl_from_log(lp: &[f64], lq: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in lp.iter().zip(lq) {
        let pa = a.exp();
        if pa > 0.0 {
            total += pa * (a - b);
        }
    }
    total.max(0.0)
}
