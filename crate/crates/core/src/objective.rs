//! Distillation objectives built from the per-token decomposition.
//!
//! Every mode reduces with a per-token mean. The decoupled family (TKD-only,
//! DKD-only, TKD+DKD, α×TKD+DKD, ATKD) is evaluated by one routine over
//! weighted token groups so that the mode-collapse identities
//! (`ATKD(k=1, λ=0) = TKD+DKD`, `α=0 → DKD-only`) hold bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decompose::{self, LogitBatch, TokenView};
use crate::error::{Error, Result};
use crate::grad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// `KL(p ‖ q)`, supervised KD.
    ForwardKl,
    /// `KL(q ‖ p)`, reverse KD.
    ReverseKl,
    TkdOnly,
    DkdOnly,
    /// TKD and DKD added with the UnC factor dropped.
    TkdPlusDkd,
    /// `α·TKD + DKD`.
    AlphaTkdDkd,
    /// `λ·mean_easy(DKD) + (1−λ)·mean_hard(TKD + DKD)`.
    Atkd,
}

impl ObjectiveMode {
    pub const ALL: [ObjectiveMode; 7] = [
        ObjectiveMode::ForwardKl,
        ObjectiveMode::ReverseKl,
        ObjectiveMode::TkdOnly,
        ObjectiveMode::DkdOnly,
        ObjectiveMode::TkdPlusDkd,
        ObjectiveMode::AlphaTkdDkd,
        ObjectiveMode::Atkd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveMode::ForwardKl => "forward_kl",
            ObjectiveMode::ReverseKl => "reverse_kl",
            ObjectiveMode::TkdOnly => "tkd_only",
            ObjectiveMode::DkdOnly => "dkd_only",
            ObjectiveMode::TkdPlusDkd => "tkd_plus_dkd",
            ObjectiveMode::AlphaTkdDkd => "alpha_tkd_dkd",
            ObjectiveMode::Atkd => "atkd",
        }
    }
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective mode `{s}`")))
    }
}

/// Which loss to optimize, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub mode: ObjectiveMode,
    /// Fraction of mask-true tokens treated as hard.
    pub k_ratio: f64,
    /// Weight of the easy-token term.
    pub lambda: f64,
    /// TKD scale in α×TKD+DKD.
    pub alpha: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            mode: ObjectiveMode::Atkd,
            k_ratio: 0.5,
            lambda: 0.2,
            alpha: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn new(mode: ObjectiveMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn atkd(k_ratio: f64, lambda: f64) -> Self {
        Self {
            mode: ObjectiveMode::Atkd,
            k_ratio,
            lambda,
            ..Self::default()
        }
    }

    pub fn alpha(alpha: f64) -> Self {
        Self {
            mode: ObjectiveMode::AlphaTkdDkd,
            alpha,
            ..Self::default()
        }
    }

    pub fn with_mode(self, mode: ObjectiveMode) -> Self {
        Self { mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.k_ratio) {
            return Err(Error::Config(format!(
                "k_ratio must lie in [0, 1], got {}",
                self.k_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Partition of the mask-true tokens into hard (high UnC) and easy sets.
/// Both lists are in ascending token order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSplit {
    pub hard: Vec<usize>,
    pub easy: Vec<usize>,
}

impl TokenSplit {
    pub fn hard_mask(&self, tokens: usize) -> Vec<bool> {
        let mut mask = vec![false; tokens];
        self.hard.iter().for_each(|&t| mask[t] = true);
        mask
    }

    pub fn easy_mask(&self, tokens: usize) -> Vec<bool> {
        let mut mask = vec![false; tokens];
        self.easy.iter().for_each(|&t| mask[t] = true);
        mask
    }

    pub fn is_hard(&self, token: usize) -> bool {
        self.hard.binary_search(&token).is_ok()
    }
}

/// Number of hard tokens: `k·n` rounded half-up, clamped to `[0, n]`.
pub fn hard_count(k_ratio: f64, n: usize) -> usize {
    ((k_ratio * n as f64 + 0.5).floor().max(0.0) as usize).min(n)
}

/// Ranks mask-true tokens by UnC (descending, ties by ascending index) across
/// the whole batch and takes the top `round(k·n)` as hard.
pub fn rank_and_split(unc: &[f64], mask: &[bool], k_ratio: f64) -> Result<TokenSplit> {
    if unc.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            left: unc.len(),
            right: mask.len(),
        });
    }
    if !(0.0..=1.0).contains(&k_ratio) {
        return Err(Error::Config(format!(
            "k_ratio must lie in [0, 1], got {k_ratio}"
        )));
    }
    let mut order: Vec<usize> = (0..unc.len()).filter(|&t| mask[t]).collect();
    if order.is_empty() {
        return Err(Error::EmptyBatch);
    }
    order.sort_by(|&a, &b| unc[b].total_cmp(&unc[a]).then(a.cmp(&b)));
    let n_hard = hard_count(k_ratio, order.len());
    let mut hard = order[..n_hard].to_vec();
    let mut easy = order[n_hard..].to_vec();
    hard.sort_unstable();
    easy.sort_unstable();
    Ok(TokenSplit { hard, easy })
}

/// Split a batch by teacher UnC. The student never enters the ranking.
pub fn split_batch(batch: &LogitBatch, k_ratio: f64) -> Result<TokenSplit> {
    rank_and_split(&decompose::teacher_unc(batch), batch.mask(), k_ratio)
}

/// Which KL direction the per-token TKD/DKD terms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    /// `KL(p_b ‖ q_b)`, `KL(p̂ ‖ q̂)`.
    Forward,
    /// `KL(q_b ‖ p_b)`, `KL(q̂ ‖ p̂)`.
    Reverse,
}

/// Tokens sharing one `weight · mean(a·tkd + b·dkd)` term.
struct Group {
    weight: f64,
    tkd_scale: f64,
    dkd_scale: f64,
    tokens: Vec<usize>,
}

/// Loss (and optionally its gradient w.r.t. student logits, written into
/// `grad` which must be zeroed, `T×C`). `split` overrides the UnC ranking,
/// used to freeze it during finite-difference checks.
pub(crate) fn evaluate(
    batch: &LogitBatch,
    cfg: &ObjectiveConfig,
    direction: Direction,
    split: Option<&TokenSplit>,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    cfg.validate()?;
    let active = batch.active_indices();
    if active.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let c = batch.classes();
    let view = |t: usize| TokenView::new(batch.teacher_row(t), batch.student_row(t), batch.targets()[t]);

    let full_kl = match (cfg.mode, direction) {
        (ObjectiveMode::ForwardKl, _) => Some(false),
        (ObjectiveMode::ReverseKl, _) => Some(true),
        _ => None,
    };
    if let Some(reverse) = full_kl {
        let n = active.len() as f64;
        let scale = 1.0 / n;
        let mut sum = 0.0;
        for &t in &active {
            let v = view(t);
            if reverse {
                sum += v.kl_reverse();
            } else {
                sum += v.kl_total();
            }
            if let Some(g) = grad.as_deref_mut() {
                let row = &mut g[t * c..(t + 1) * c];
                if reverse {
                    grad::reverse_kl_row(&v, scale, row);
                } else {
                    grad::forward_kl_row(&v, scale, row);
                }
            }
        }
        return Ok(sum / n);
    }

    let groups = match cfg.mode {
        ObjectiveMode::TkdOnly => vec![Group::all(1.0, 0.0, active)],
        ObjectiveMode::DkdOnly => vec![Group::all(0.0, 1.0, active)],
        ObjectiveMode::TkdPlusDkd => vec![Group::all(1.0, 1.0, active)],
        ObjectiveMode::AlphaTkdDkd => vec![Group::all(cfg.alpha, 1.0, active)],
        ObjectiveMode::Atkd => {
            let owned;
            let split = match split {
                Some(s) => s,
                None => {
                    owned = split_batch(batch, cfg.k_ratio)?;
                    &owned
                }
            };
            vec![
                Group {
                    weight: cfg.lambda,
                    tkd_scale: 0.0,
                    dkd_scale: 1.0,
                    tokens: split.easy.clone(),
                },
                Group {
                    weight: 1.0 - cfg.lambda,
                    tkd_scale: 1.0,
                    dkd_scale: 1.0,
                    tokens: split.hard.clone(),
                },
            ]
        }
        ObjectiveMode::ForwardKl | ObjectiveMode::ReverseKl => unreachable!(),
    };

    let mut loss = 0.0;
    for group in &groups {
        if group.tokens.is_empty() {
            continue;
        }
        let n = group.tokens.len() as f64;
        let coef = group.weight / n;
        let mut sum = 0.0;
        for &t in &group.tokens {
            let v = view(t);
            let (tkd, dkd) = match direction {
                Direction::Forward => (v.tkd(), v.dkd()),
                Direction::Reverse => (v.tkd_reverse(), v.dkd_reverse()),
            };
            sum += group.tkd_scale * tkd + group.dkd_scale * dkd;
            if let Some(g) = grad.as_deref_mut() {
                let row = &mut g[t * c..(t + 1) * c];
                grad::decoupled_row(&v, direction, coef, group.tkd_scale, group.dkd_scale, row);
            }
        }
        loss += group.weight * (sum / n);
    }
    Ok(loss)
}

impl Group {
    fn all(tkd_scale: f64, dkd_scale: f64, tokens: Vec<usize>) -> Self {
        Self {
            weight: 1.0,
            tkd_scale,
            dkd_scale,
            tokens,
        }
    }
}

/// `λ·mean_{easy}(DKD) + (1−λ)·mean_{hard}(TKD + DKD)`, using `cfg.k_ratio`
/// and `cfg.lambda` whatever `cfg.mode` says. An empty set contributes 0 and
/// λ is not renormalized.
pub fn atkd_loss(batch: &LogitBatch, cfg: &ObjectiveConfig) -> Result<f64> {
    let cfg = ObjectiveConfig {
        mode: ObjectiveMode::Atkd,
        ..*cfg
    };
    evaluate(batch, &cfg, Direction::Forward, None, None)
}

pub fn objective_eval(batch: &LogitBatch, cfg: &ObjectiveConfig) -> Result<f64> {
    evaluate(batch, cfg, Direction::Forward, None, None)
}

/// ATKD with reverse-direction terms `KL(q_b ‖ p_b)` and `KL(q̂ ‖ p̂)`; tokens
/// are still ranked by the teacher's UnC.
pub fn atkd_on_reverse(batch: &LogitBatch, cfg: &ObjectiveConfig) -> Result<f64> {
    let cfg = ObjectiveConfig {
        mode: ObjectiveMode::Atkd,
        ..*cfg
    };
    evaluate(batch, &cfg, Direction::Reverse, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::batch_decompose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(seed: u64, t: usize, c: usize) -> LogitBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher = (0..t * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let student = (0..t * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targets = (0..t).map(|_| rng.random_range(0..c)).collect();
        LogitBatch::unmasked(t, c, teacher, student, targets).unwrap()
    }

    #[test]
    fn split_examples() {
        let all = [true; 4];
        let s = rank_and_split(&[0.9, 0.1, 0.5, 0.3], &all, 0.5).unwrap();
        assert_eq!(s.hard, vec![0, 2]);
        assert_eq!(s.easy, vec![1, 3]);

        let s = rank_and_split(&[0.9, 0.1, 0.5, 0.3], &all, 0.0).unwrap();
        assert!(s.hard.is_empty());
        assert_eq!(s.easy, vec![0, 1, 2, 3]);
        let s = rank_and_split(&[0.9, 0.1, 0.5, 0.3], &all, 1.0).unwrap();
        assert_eq!(s.hard, vec![0, 1, 2, 3]);
        assert!(s.easy.is_empty());
    }

    #[test]
    fn split_ties_and_rounding() {
        // round(1.5) = 2 hard; ties resolved towards the lower index.
        let unc = [0.4, 0.4, 0.4];
        let s = rank_and_split(&unc, &[true; 3], 0.5).unwrap();
        // Reference: stable sort by descending UnC keeps index order among ties.
        let mut reference: Vec<usize> = (0..3).collect();
        reference.sort_by(|&a, &b| unc[b].partial_cmp(&unc[a]).unwrap());
        assert_eq!(s.hard, reference[..2].to_vec());
        assert_eq!(s.hard, vec![0, 1]);
        assert_eq!(s.easy, vec![2]);
    }

    #[test]
    fn split_respects_mask_and_errors() {
        let s = rank_and_split(&[0.9, 0.8, 0.1, 0.2], &[false, true, true, true], 0.34).unwrap();
        assert_eq!(s.hard, vec![1]);
        assert_eq!(s.easy, vec![2, 3]);
        assert!(matches!(
            rank_and_split(&[0.1, 0.2], &[false, false], 0.5),
            Err(Error::EmptyBatch)
        ));
        assert!(rank_and_split(&[0.1], &[true], 1.5).is_err());
    }

    #[test]
    fn hard_count_rounds_half_up() {
        assert_eq!(hard_count(0.5, 3), 2);
        assert_eq!(hard_count(0.5, 4), 2);
        assert_eq!(hard_count(0.25, 2), 1);
        assert_eq!(hard_count(0.0, 9), 0);
        assert_eq!(hard_count(1.0, 9), 9);
        assert_eq!(hard_count(0.3, 10), 3);
    }

    #[test]
    fn teacher_equals_student_is_zero() {
        let b = random_batch(2, 6, 7);
        let b = b.with_student(b.teacher_logits().to_vec()).unwrap();
        for mode in ObjectiveMode::ALL {
            for (k, l) in [(0.0, 0.0), (0.5, 0.2), (1.0, 1.0)] {
                let cfg = ObjectiveConfig {
                    mode,
                    k_ratio: k,
                    lambda: l,
                    alpha: 0.7,
                };
                assert_eq!(objective_eval(&b, &cfg).unwrap(), 0.0, "{mode}");
            }
        }
        assert_eq!(atkd_on_reverse(&b, &ObjectiveConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn mode_collapse_is_exact() {
        for seed in 0..5 {
            let b = random_batch(seed, 9, 11);
            let plus = objective_eval(&b, &ObjectiveConfig::new(ObjectiveMode::TkdPlusDkd)).unwrap();
            assert_eq!(atkd_loss(&b, &ObjectiveConfig::atkd(1.0, 0.0)).unwrap(), plus);
            assert_eq!(objective_eval(&b, &ObjectiveConfig::alpha(1.0)).unwrap(), plus);
            let dkd = objective_eval(&b, &ObjectiveConfig::new(ObjectiveMode::DkdOnly)).unwrap();
            assert_eq!(objective_eval(&b, &ObjectiveConfig::alpha(0.0)).unwrap(), dkd);
        }
    }

    /// Independent oracle: decompose each token, sort by UnC with the tie
    /// rule, and combine with the formula.
    fn atkd_oracle(b: &LogitBatch, k: f64, lambda: f64, reverse: bool) -> f64 {
        let d = batch_decompose(b);
        let mut idx: Vec<usize> = (0..b.tokens()).collect();
        idx.sort_by(|&x, &y| d.unc[y].partial_cmp(&d.unc[x]).unwrap().then(x.cmp(&y)));
        let n_hard = (k * b.tokens() as f64 + 0.5).floor() as usize;
        let (hard, easy) = idx.split_at(n_hard);
        let terms = |t: usize| -> (f64, f64) {
            let soft = |z: &[f64]| {
                let s: f64 = z.iter().map(|v| v.exp()).sum();
                z.iter().map(|v| v.exp() / s).collect::<Vec<_>>()
            };
            let (mut p, mut q) = (soft(b.teacher_row(t)), soft(b.student_row(t)));
            if reverse {
                std::mem::swap(&mut p, &mut q);
            }
            let g = b.targets()[t];
            let pr = 1.0 - p[g];
            let qr = 1.0 - q[g];
            let tkd = p[g] * (p[g] / q[g]).ln() + pr * (pr / qr).ln();
            let dkd: f64 = (0..p.len())
                .filter(|&j| j != g)
                .map(|j| (p[j] / pr) * ((p[j] / pr) / (q[j] / qr)).ln())
                .sum();
            (tkd, dkd)
        };
        let mean = |set: &[usize], f: &dyn Fn(usize) -> f64| {
            if set.is_empty() {
                0.0
            } else {
                set.iter().map(|&t| f(t)).sum::<f64>() / set.len() as f64
            }
        };
        let le = mean(easy, &|t| terms(t).1);
        let lh = mean(hard, &|t| {
            let (a, b) = terms(t);
            a + b
        });
        lambda * le + (1.0 - lambda) * lh
    }

    #[test]
    fn atkd_matches_oracle() {
        let b = random_batch(42, 8, 10);
        let got = atkd_loss(&b, &ObjectiveConfig::atkd(0.5, 0.2)).unwrap();
        let want = atkd_oracle(&b, 0.5, 0.2, false);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        for (k, l) in [(0.0, 0.2), (1.0, 0.2), (0.3, 0.9), (0.7, 0.0)] {
            let got = atkd_loss(&b, &ObjectiveConfig::atkd(k, l)).unwrap();
            assert!((got - atkd_oracle(&b, k, l, false)).abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_atkd_matches_oracle() {
        let b = random_batch(8, 8, 10);
        let got = atkd_on_reverse(&b, &ObjectiveConfig::atkd(0.5, 0.2)).unwrap();
        let want = atkd_oracle(&b, 0.5, 0.2, true);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn reverse_atkd_two_classes() {
        let b = random_batch(9, 6, 2);
        let cfg = ObjectiveConfig::atkd(0.5, 0.2);
        let split = split_batch(&b, 0.5).unwrap();
        let soft = |z: &[f64]| {
            let s: f64 = z.iter().map(|v| v.exp()).sum();
            z.iter().map(|v| v.exp() / s).collect::<Vec<_>>()
        };
        let mut sum = 0.0;
        for &t in &split.hard {
            let (p, q) = (soft(b.teacher_row(t)), soft(b.student_row(t)));
            sum += q[0] * (q[0] / p[0]).ln() + q[1] * (q[1] / p[1]).ln();
        }
        let want = 0.8 * sum / split.hard.len() as f64;
        assert!((atkd_on_reverse(&b, &cfg).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn forward_kl_matches_double_loop() {
        let b = random_batch(5, 12, 9);
        let got = objective_eval(&b, &ObjectiveConfig::new(ObjectiveMode::ForwardKl)).unwrap();
        let mut total = 0.0;
        for t in 0..12 {
            let soft = |z: &[f64]| {
                let s: f64 = z.iter().map(|v| v.exp()).sum();
                z.iter().map(|v| v.exp() / s).collect::<Vec<_>>()
            };
            let (p, q) = (soft(b.teacher_row(t)), soft(b.student_row(t)));
            total += p.iter().zip(&q).map(|(a, c)| a * (a / c).ln()).sum::<f64>();
        }
        assert!((got - total / 12.0).abs() < 1e-12);
    }

    #[test]
    fn ablation_modes_are_means() {
        let b = random_batch(6, 10, 5);
        let d = batch_decompose(&b);
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let eval = |m| objective_eval(&b, &ObjectiveConfig::new(m)).unwrap();
        assert!((eval(ObjectiveMode::TkdOnly) - mean(d.tkd.clone())).abs() < 1e-14);
        assert!((eval(ObjectiveMode::DkdOnly) - mean(d.dkd.clone())).abs() < 1e-14);
        let plus: Vec<f64> = d.tkd.iter().zip(&d.dkd).map(|(a, b)| a + b).collect();
        assert!((eval(ObjectiveMode::TkdPlusDkd) - mean(plus)).abs() < 1e-14);
        let fwd: Vec<f64> = (0..10).map(|t| d.tkd[t] + d.unc[t] * d.dkd[t]).collect();
        assert!((eval(ObjectiveMode::ForwardKl) - mean(fwd)).abs() < 1e-12);
        let alpha = ObjectiveConfig::alpha(0.3);
        let mixed: Vec<f64> = d.tkd.iter().zip(&d.dkd).map(|(a, b)| 0.3 * a + b).collect();
        assert!((objective_eval(&b, &alpha).unwrap() - mean(mixed)).abs() < 1e-14);
    }

    #[test]
    fn shifting_student_target_logit_only_moves_tkd() {
        let mut b = random_batch(12, 1, 6);
        let g = b.targets()[0];
        let teacher_target = b.teacher_row(0)[g];
        let tkd_of = |b: &LogitBatch| objective_eval(b, &ObjectiveConfig::new(ObjectiveMode::TkdOnly)).unwrap();
        let dkd_of = |b: &LogitBatch| objective_eval(b, &ObjectiveConfig::new(ObjectiveMode::DkdOnly)).unwrap();
        // Align the non-target logits so the target is the only difference.
        let aligned: Vec<f64> = b.teacher_row(0).iter().enumerate().map(|(j, &z)| if j == g { z - 4.0 } else { z }).collect();
        b.student_logits_mut().copy_from_slice(&aligned);
        let dkd0 = dkd_of(&b);
        let mut prev = tkd_of(&b);
        for step in 1..=8 {
            b.student_logits_mut()[g] = teacher_target - 4.0 + step as f64 * 0.5;
            let tkd = tkd_of(&b);
            assert!(tkd < prev);
            assert!((dkd_of(&b) - dkd0).abs() < 1e-15);
            prev = tkd;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn empty_batch_errors() {
        let b = random_batch(1, 3, 4).with_mask(vec![false; 3]).unwrap();
        for mode in ObjectiveMode::ALL {
            assert!(matches!(
                objective_eval(&b, &ObjectiveConfig::new(mode)),
                Err(Error::EmptyBatch)
            ));
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in ObjectiveMode::ALL {
            assert_eq!(mode.name().parse::<ObjectiveMode>().unwrap(), mode);
        }
        assert!(matches!("kd".parse::<ObjectiveMode>(), Err(Error::Config(_))));
        let cfg: ObjectiveConfig = toml::from_str("mode = \"alpha_tkd_dkd\"\nalpha = 0.25").unwrap();
        assert_eq!(cfg.mode, ObjectiveMode::AlphaTkdDkd);
        assert_eq!((cfg.k_ratio, cfg.lambda, cfg.alpha), (0.5, 0.2, 0.25));
        assert!(toml::from_str::<ObjectiveConfig>("mode = \"nope\"").is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let b = random_batch(1, 3, 4);
        let cfg = ObjectiveConfig {
            lambda: 1.5,
            ..ObjectiveConfig::default()
        };
        assert!(matches!(objective_eval(&b, &cfg), Err(Error::Config(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_is_partition(unc in prop::collection::vec(0.0f64..1.0, 1..40),
                                  mask_bits in prop::collection::vec(any::<bool>(), 40),
                                  k in 0.0f64..=1.0) {
                let mut mask: Vec<bool> = mask_bits[..unc.len()].to_vec();
                mask[0] = true;
                let s = rank_and_split(&unc, &mask, k).unwrap();
                let mut all: Vec<usize> = s.hard.iter().chain(&s.easy).copied().collect();
                all.sort_unstable();
                let expected: Vec<usize> = (0..unc.len()).filter(|&t| mask[t]).collect();
                prop_assert_eq!(all, expected.clone());
                prop_assert_eq!(s.hard.len(), hard_count(k, expected.len()));
                let min_hard = s.hard.iter().map(|&t| unc[t]).fold(f64::INFINITY, f64::min);
                let max_easy = s.easy.iter().map(|&t| unc[t]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(min_hard >= max_easy);
            }

            #[test]
            fn losses_non_negative(seed in 0u64..500, mode_ix in 0usize..7) {
                let b = random_batch(seed, 5, 6);
                let cfg = ObjectiveConfig::new(ObjectiveMode::ALL[mode_ix]);
                prop_assert!(objective_eval(&b, &cfg).unwrap() >= 0.0);
            }
        }
    }
}
