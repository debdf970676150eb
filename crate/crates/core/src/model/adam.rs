use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup length in steps; 0 disables it.
    pub warmup: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 100,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }

    /// Learning rate used on 1-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup == 0 || t >= self.warmup {
            self.lr
        } else {
            self.lr * t as f64 / self.warmup as f64
        }
    }
}

/// First and second moments plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Non-finite gradients leave `params` and
/// `state` untouched and report divergence at the step that would have run.
pub fn adam_step(params: &mut [f32], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            left: grads.len(),
            right: params.len(),
        });
    }
    let t = state.step + 1;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            step: t,
            detail: format!("non-finite gradient at parameter {i}"),
        });
    }
    state.step = t;
    let lr = cfg.lr_at(t);
    let bc1 = 1.0 - cfg.beta1.powi(t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t.min(i32::MAX as u64) as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = (*p as f64 - lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_warmup(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            warmup: 0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = vec![0.5f32, -1.25, 3.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s, &no_warmup(0.1)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1, so the update is lr/(1 + eps).
        let mut p = vec![1.0f32];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &no_warmup(0.1)).unwrap();
        let want = (1.0f64 - 0.1 / (1.0 + 1e-8)) as f32;
        assert_eq!(p[0], want);
        assert!((p[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let g = [0.3, -0.7, 1e-3];
        let mut a = vec![0.1f32, 0.2, 0.3];
        let mut b = a.clone();
        let (mut sa, mut sb) = (AdamState::new(3), AdamState::new(3));
        for _ in 0..4 {
            adam_step(&mut a, &g, &mut sa, &AdamConfig::default()).unwrap();
            adam_step(&mut b, &g, &mut sb, &AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn warmup_ramp() {
        let cfg = AdamConfig::default();
        assert!((cfg.lr_at(1) - 3e-6).abs() < 1e-18);
        assert!((cfg.lr_at(50) - 1.5e-4).abs() < 1e-18);
        assert_eq!(cfg.lr_at(100), 3e-4);
        assert_eq!(cfg.lr_at(5000), 3e-4);
    }

    #[test]
    fn non_finite_is_divergence() {
        let mut p = vec![1.0f32, 2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.1, 0.1], &mut s, &no_warmup(0.1)).unwrap();
        let snapshot = (p.clone(), s.clone());
        let err = adam_step(&mut p, &[f64::NAN, 0.0], &mut s, &no_warmup(0.1)).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 2, .. }));
        assert_eq!((p, s), snapshot);
    }
}
