//! Per-token split of the forward distillation KL into a binary target term
//! (TKD) and a renormalized non-target term (DKD), tied together by the
//! teacher's non-target mass (UnC):
//!
//! ```text
//! KL(p ‖ q) = KL(p_b ‖ q_b) + p_\g · KL(p̂ ‖ q̂)
//! ```
//!
//! `kl_total` is always evaluated over the full vocabulary, independently of
//! the two parts, so the identity above stays a checkable property.

use crate::error::{Error, Result};
use crate::prob::{self, LogitVector};

/// Teacher and student logits for `T` tokens over `C` classes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    tokens: usize,
    classes: usize,
    teacher_logits: Vec<f64>,
    student_logits: Vec<f64>,
    targets: Vec<usize>,
    mask: Vec<bool>,
}

impl LogitBatch {
    pub fn new(
        tokens: usize,
        classes: usize,
        teacher_logits: Vec<f64>,
        student_logits: Vec<f64>,
        targets: Vec<usize>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        let cells = tokens * classes;
        for len in [teacher_logits.len(), student_logits.len()] {
            if len != cells {
                return Err(Error::DimensionMismatch {
                    left: len,
                    right: cells,
                });
            }
        }
        for len in [targets.len(), mask.len()] {
            if len != tokens {
                return Err(Error::DimensionMismatch {
                    left: len,
                    right: tokens,
                });
            }
        }
        if let Some(i) = teacher_logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        if let Some(i) = student_logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        for (t, (&g, &m)) in targets.iter().zip(&mask).enumerate() {
            if m && g >= classes {
                return Err(Error::InvalidInput(format!(
                    "target {g} at token {t} is out of range for {classes} classes"
                )));
            }
        }
        Ok(Self {
            tokens,
            classes,
            teacher_logits,
            student_logits,
            targets,
            mask,
        })
    }

    /// All tokens participate.
    pub fn unmasked(
        tokens: usize,
        classes: usize,
        teacher_logits: Vec<f64>,
        student_logits: Vec<f64>,
        targets: Vec<usize>,
    ) -> Result<Self> {
        Self::new(
            tokens,
            classes,
            teacher_logits,
            student_logits,
            targets,
            vec![true; tokens],
        )
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn teacher_logits(&self) -> &[f64] {
        &self.teacher_logits
    }

    pub fn student_logits(&self) -> &[f64] {
        &self.student_logits
    }

    pub fn teacher_row(&self, t: usize) -> &[f64] {
        &self.teacher_logits[t * self.classes..(t + 1) * self.classes]
    }

    pub fn student_row(&self, t: usize) -> &[f64] {
        &self.student_logits[t * self.classes..(t + 1) * self.classes]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mask-true token indices in ascending order.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.tokens).filter(|&t| self.mask[t]).collect()
    }

    /// Same logits and targets under a different mask.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(
            self.tokens,
            self.classes,
            self.teacher_logits.clone(),
            self.student_logits.clone(),
            self.targets.clone(),
            mask,
        )
    }

    /// Replaces the student logits, keeping everything else.
    pub fn with_student(&self, student_logits: Vec<f64>) -> Result<Self> {
        Self::new(
            self.tokens,
            self.classes,
            self.teacher_logits.clone(),
            student_logits,
            self.targets.clone(),
            self.mask.clone(),
        )
    }

    pub(crate) fn student_logits_mut(&mut self) -> &mut [f64] {
        &mut self.student_logits
    }

    /// The mask-true tokens only, in order.
    pub fn compact(&self) -> Result<Self> {
        let keep = self.active_indices();
        let c = self.classes;
        let mut teacher = Vec::with_capacity(keep.len() * c);
        let mut student = Vec::with_capacity(keep.len() * c);
        for &t in &keep {
            teacher.extend_from_slice(self.teacher_row(t));
            student.extend_from_slice(self.student_row(t));
        }
        let targets = keep.iter().map(|&t| self.targets[t]).collect();
        Self::unmasked(keep.len(), c, teacher, student, targets)
    }
}

/// Per-token decomposition terms. Mask-false slots hold zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenDecomposition {
    pub unc: Vec<f64>,
    pub tkd: Vec<f64>,
    pub dkd: Vec<f64>,
    pub kl_total: Vec<f64>,
}

impl TokenDecomposition {
    pub fn len(&self) -> usize {
        self.unc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unc.is_empty()
    }
}

/// The four scalar terms of one token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenTerms {
    pub unc: f64,
    pub tkd: f64,
    pub dkd: f64,
    pub kl_total: f64,
}

/// Log-space view of one (teacher, student, target) triple, with the
/// quantities the objectives and their gradients need.
pub(crate) struct TokenView {
    pub target: usize,
    /// `log p`, `log q` over the full vocabulary.
    pub lp: Vec<f64>,
    pub lq: Vec<f64>,
    /// `log p̂`, `log q̂`; the target slot is unused and holds `-inf`.
    pub lp_hat: Vec<f64>,
    pub lq_hat: Vec<f64>,
    /// `log p_\g`, `log q_\g`.
    pub lp_rest: f64,
    pub lq_rest: f64,
}

impl TokenView {
    pub fn new(teacher: &[f64], student: &[f64], target: usize) -> Self {
        let c = teacher.len();
        let mut lp = vec![0.0; c];
        let mut lq = vec![0.0; c];
        let lse_p = prob::log_softmax_into(teacher, &mut lp);
        let lse_q = prob::log_softmax_into(student, &mut lq);
        let lse_p_rest = prob::log_sum_exp_except(teacher, target);
        let lse_q_rest = prob::log_sum_exp_except(student, target);
        let mut lp_hat = vec![f64::NEG_INFINITY; c];
        let mut lq_hat = vec![f64::NEG_INFINITY; c];
        for j in (0..c).filter(|&j| j != target) {
            lp_hat[j] = teacher[j] - lse_p_rest;
            lq_hat[j] = student[j] - lse_q_rest;
        }
        Self {
            target,
            lp,
            lq,
            lp_hat,
            lq_hat,
            lp_rest: lse_p_rest - lse_p,
            lq_rest: lse_q_rest - lse_q,
        }
    }

    pub fn unc(&self) -> f64 {
        self.lp_rest.exp()
    }

    pub fn kl_total(&self) -> f64 {
        prob::kl_from_log(&self.lp, &self.lq)
    }

    pub fn kl_reverse(&self) -> f64 {
        prob::kl_from_log(&self.lq, &self.lp)
    }

    pub fn tkd(&self) -> f64 {
        binary_kl(self.lp[self.target], self.lp_rest, self.lq[self.target], self.lq_rest)
    }

    pub fn tkd_reverse(&self) -> f64 {
        binary_kl(self.lq[self.target], self.lq_rest, self.lp[self.target], self.lp_rest)
    }

    pub fn dkd(&self) -> f64 {
        nontarget_kl(&self.lp_hat, &self.lq_hat, self.target)
    }

    pub fn dkd_reverse(&self) -> f64 {
        nontarget_kl(&self.lq_hat, &self.lp_hat, self.target)
    }

    pub fn terms(&self) -> TokenTerms {
        TokenTerms {
            unc: self.unc(),
            tkd: self.tkd(),
            dkd: self.dkd(),
            kl_total: self.kl_total(),
        }
    }
}

/// KL between two-point distributions given as log-masses.
fn binary_kl(la_target: f64, la_rest: f64, lb_target: f64, lb_rest: f64) -> f64 {
    let mut total = 0.0;
    let a = la_target.exp();
    if a > 0.0 {
        total += a * (la_target - lb_target);
    }
    let a = la_rest.exp();
    if a > 0.0 {
        total += a * (la_rest - lb_rest);
    }
    total.max(0.0)
}

fn nontarget_kl(la: &[f64], lb: &[f64], target: usize) -> f64 {
    let mut total = 0.0;
    for j in (0..la.len()).filter(|&j| j != target) {
        let a = la[j].exp();
        if a > 0.0 {
            total += a * (la[j] - lb[j]);
        }
    }
    total.max(0.0)
}

/// Decomposes a single token. Both logit vectors must share `C`.
pub fn token_decompose(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    target_index: usize,
) -> Result<TokenTerms> {
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::DimensionMismatch {
            left: teacher_logits.len(),
            right: student_logits.len(),
        });
    }
    if target_index >= teacher_logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target_index,
            len: teacher_logits.len(),
        });
    }
    Ok(TokenView::new(teacher_logits.values(), student_logits.values(), target_index).terms())
}

/// Applies [`token_decompose`] at every mask-true token.
///
/// An all-false mask yields an all-zero decomposition; the empty-batch error
/// is raised by the loss reductions that need at least one token.
pub fn batch_decompose(batch: &LogitBatch) -> TokenDecomposition {
    let n = batch.tokens();
    let mut out = TokenDecomposition {
        unc: vec![0.0; n],
        tkd: vec![0.0; n],
        dkd: vec![0.0; n],
        kl_total: vec![0.0; n],
    };
    for t in (0..n).filter(|&t| batch.mask()[t]) {
        let terms =
            TokenView::new(batch.teacher_row(t), batch.student_row(t), batch.targets()[t]).terms();
        out.unc[t] = terms.unc;
        out.tkd[t] = terms.tkd;
        out.dkd[t] = terms.dkd;
        out.kl_total[t] = terms.kl_total;
    }
    out
}

/// Teacher UnC at every mask-true token (zero elsewhere). Needs no student.
pub fn teacher_unc(batch: &LogitBatch) -> Vec<f64> {
    unc_from_rows(batch.teacher_logits(), batch.classes(), batch.targets(), batch.mask())
}

pub(crate) fn unc_from_rows(
    teacher_logits: &[f64],
    classes: usize,
    targets: &[usize],
    mask: &[bool],
) -> Vec<f64> {
    targets
        .iter()
        .zip(mask)
        .enumerate()
        .map(|(t, (&g, &m))| {
            if !m {
                return 0.0;
            }
            let row = &teacher_logits[t * classes..(t + 1) * classes];
            (prob::log_sum_exp_except(row, g) - prob::log_sum_exp(row)).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Term-by-term oracle straight from the definitions, in probability space.
    fn oracle(teacher: &[f64], student: &[f64], g: usize) -> (f64, f64, f64, f64) {
        let soft = |z: &[f64]| {
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let p = soft(teacher);
        let q = soft(student);
        let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        let (pg, qg) = (p[g], q[g]);
        let pr: f64 = (0..p.len()).filter(|&j| j != g).map(|j| p[j]).sum();
        let qr: f64 = (0..q.len()).filter(|&j| j != g).map(|j| q[j]).sum();
        let tkd = pg * (pg / qg).ln() + pr * (pr / qr).ln();
        let dkd: f64 = (0..p.len())
            .filter(|&j| j != g)
            .map(|j| (p[j] / pr) * ((p[j] / pr) / (q[j] / qr)).ln())
            .sum();
        (pr, tkd, dkd, kl)
    }

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_distributions() {
        let z = lv(&[0.3, -1.2, 2.0, 0.0]);
        let t = token_decompose(&z, &z, 2).unwrap();
        assert_eq!((t.tkd, t.dkd, t.kl_total), (0.0, 0.0, 0.0));
        let p = crate::prob::softmax(&z);
        assert!((t.unc - (1.0 - p[2])).abs() < 1e-15);
    }

    #[test]
    fn two_classes_have_no_dkd() {
        let t = token_decompose(&lv(&[1.5, -0.5]), &lv(&[-2.0, 0.7]), 0).unwrap();
        assert_eq!(t.dkd, 0.0);
        assert!((t.kl_total - t.tkd).abs() < 1e-15);
    }

    #[test]
    fn three_class_reference() {
        let (teacher, student) = ([2.0, 1.0, 0.0], [0.0, 1.0, 2.0]);
        let t = token_decompose(&lv(&teacher), &lv(&student), 0).unwrap();
        let (unc, tkd, dkd, kl) = oracle(&teacher, &student, 0);
        assert!((t.unc - unc).abs() < 1e-14);
        assert!((t.tkd - tkd).abs() < 1e-14);
        assert!((t.dkd - dkd).abs() < 1e-14);
        assert!((t.kl_total - kl).abs() < 1e-14);
        assert!((t.kl_total - (t.tkd + t.unc * t.dkd)).abs() < 1e-9);
    }

    #[test]
    fn mismatched_shapes() {
        assert!(matches!(
            token_decompose(&lv(&[1.0, 2.0]), &lv(&[1.0, 2.0, 3.0]), 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            token_decompose(&lv(&[1.0, 2.0]), &lv(&[1.0, 2.0]), 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    fn random_batch(rng: &mut ChaCha8Rng, t: usize, c: usize, scale: f64) -> LogitBatch {
        let teacher = (0..t * c).map(|_| rng.random_range(-scale..scale)).collect();
        let student = (0..t * c).map(|_| rng.random_range(-scale..scale)).collect();
        let targets = (0..t).map(|_| rng.random_range(0..c)).collect();
        LogitBatch::unmasked(t, c, teacher, student, targets).unwrap()
    }

    #[test]
    fn batch_sum_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = random_batch(&mut rng, 16, 20, 3.0);
        let d = batch_decompose(&batch);
        let total: f64 = d.kl_total.iter().sum();
        let mut oracle_total = 0.0;
        for t in 0..16 {
            let (_, _, _, kl) = oracle(batch.teacher_row(t), batch.student_row(t), batch.targets()[t]);
            oracle_total += kl;
        }
        assert!((total - oracle_total).abs() < 1e-9);
    }

    #[test]
    fn all_masked_false_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(&mut rng, 3, 5, 1.0);
        let batch = batch.with_mask(vec![false; 3]).unwrap();
        let d = batch_decompose(&batch);
        assert!(d.unc.iter().chain(&d.tkd).chain(&d.dkd).chain(&d.kl_total).all(|&v| v == 0.0));
    }

    #[test]
    fn identity_over_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &c in &[2usize, 3, 17, 500] {
            for _ in 0..250 {
                let batch = random_batch(&mut rng, 1, c, 6.0);
                let d = batch_decompose(&batch);
                let gap = (d.kl_total[0] - (d.tkd[0] + d.unc[0] * d.dkd[0])).abs();
                assert!(gap <= 1e-9, "C={c}: gap {gap}");
                assert!(d.unc[0] > 0.0 && d.unc[0] < 1.0);
            }
        }
    }

    #[test]
    fn unc_falls_as_target_logit_rises() {
        let mut prev = f64::INFINITY;
        for step in 0..40 {
            let boost = step as f64 * 0.5;
            let teacher = lv(&[boost, 0.3, -0.2, 1.0]);
            let t = token_decompose(&teacher, &teacher, 0).unwrap();
            assert!(t.unc < prev);
            prev = t.unc;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn masking_matches_sub_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = random_batch(&mut rng, 10, 6, 2.0);
        let mask: Vec<bool> = (0..10).map(|t| t % 3 != 1).collect();
        let masked = batch.with_mask(mask.clone()).unwrap();
        let full = batch_decompose(&masked);
        let sub = batch_decompose(&masked.compact().unwrap());
        let kept: Vec<usize> = (0..10).filter(|&t| mask[t]).collect();
        for (i, &t) in kept.iter().enumerate() {
            assert_eq!(full.kl_total[t], sub.kl_total[i]);
            assert_eq!(full.tkd[t], sub.tkd[i]);
            assert_eq!(full.dkd[t], sub.dkd[i]);
            assert_eq!(full.unc[t], sub.unc[i]);
        }
    }

    #[test]
    fn teacher_unc_matches_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = random_batch(&mut rng, 8, 9, 2.0);
        let d = batch_decompose(&batch);
        assert_eq!(teacher_unc(&batch), d.unc);
    }

    #[test]
    fn batch_validation() {
        assert!(LogitBatch::unmasked(2, 3, vec![0.0; 6], vec![0.0; 5], vec![0, 1]).is_err());
        assert!(LogitBatch::unmasked(2, 3, vec![0.0; 6], vec![0.0; 6], vec![0, 3]).is_err());
        // Out-of-range targets are tolerated under a false mask.
        assert!(LogitBatch::new(2, 3, vec![0.0; 6], vec![0.0; 6], vec![0, 9], vec![true, false]).is_ok());
        assert!(matches!(
            LogitBatch::unmasked(1, 2, vec![0.0, f64::NAN], vec![0.0; 2], vec![0]),
            Err(Error::NonFinite { index: 1 })
        ));
    }
}
