//! A minimal byte-level autoregressive transformer with manual
//! backpropagation, used as both teacher and student.

mod adam;
mod checkpoint;
pub(crate) mod linalg;
mod transformer;


use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use transformer::ForwardCache;

/// Raw bytes.
pub const BYTE_VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_vocab() -> usize {
    BYTE_VOCAB
}

impl ModelConfig {
    pub fn teacher_default() -> Self {
        Self {
            vocab_size: BYTE_VOCAB,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            context_len: 128,
            seed: 0,
        }
    }

    pub fn student_default() -> Self {
        Self {
            vocab_size: BYTE_VOCAB,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            context_len: 128,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be >= 2, got {}", self.vocab_size)));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::Config("d_model, n_heads and n_layers must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_len < 2 {
            return Err(Error::Config(format!("context_len must be >= 2, got {}", self.context_len)));
        }
        Ok(())
    }

    /// `P = V·D + L_ctx·D + N·(12D² + 13D) + 2D + D·V + V`.
    pub fn param_count(&self) -> usize {
        let (v, d, n, ctx) = (self.vocab_size, self.d_model, self.n_layers, self.context_len);
        v * d + ctx * d + n * (12 * d * d + 13 * d) + 2 * d + d * v + v
    }

    /// Same architecture, ignoring the seed.
    pub fn same_shape(&self, other: &ModelConfig) -> bool {
        self.with_seed(0) == other.with_seed(0)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w_qkv: Range<usize>,
    pub b_qkv: Range<usize>,
    pub w_proj: Range<usize>,
    pub b_proj: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w_fc: Range<usize>,
    pub b_fc: Range<usize>,
    pub w_fc2: Range<usize>,
    pub b_fc2: Range<usize>,
}

/// Where each tensor lives in the flat parameter vector. Weight matrices are
/// `[in × out]` row-major.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub w_head: Range<usize>,
    pub b_head: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let (v, d) = (cfg.vocab_size, cfg.d_model);
        let wte = take(v * d);
        let wpe = take(cfg.context_len * d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                w_qkv: take(d * 3 * d),
                b_qkv: take(3 * d),
                w_proj: take(d * d),
                b_proj: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_fc: take(d * 4 * d),
                b_fc: take(4 * d),
                w_fc2: take(4 * d * d),
                b_fc2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_head = take(d * v);
        let b_head = take(v);
        Self {
            wte,
            wpe,
            layers,
            lnf_g,
            lnf_b,
            w_head,
            b_head,
            total: at,
        }
    }

    fn weight_ranges(&self) -> Vec<Range<usize>> {
        let mut out = vec![self.wte.clone(), self.wpe.clone()];
        for l in &self.layers {
            out.extend([l.w_qkv.clone(), l.w_proj.clone(), l.w_fc.clone(), l.w_fc2.clone()]);
        }
        out.push(self.w_head.clone());
        out
    }

    fn gain_ranges(&self) -> Vec<Range<usize>> {
        let mut out: Vec<_> = self
            .layers
            .iter()
            .flat_map(|l| [l.ln1_g.clone(), l.ln2_g.clone()])
            .collect();
        out.push(self.lnf_g.clone());
        out
    }
}

/// Model weights plus architecture.
#[derive(Debug, Clone)]
pub struct TinyLM {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f32>,
}

impl PartialEq for TinyLM {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TinyLM {
    /// Weights `N(0, 0.02)`, biases 0, layer-norm gains 1, all drawn from
    /// `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0f32; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        for r in layout.weight_ranges() {
            for p in &mut params[r] {
                *p = normal.sample(&mut rng) as f32;
            }
        }
        for r in layout.gain_ranges() {
            params[r].iter_mut().for_each(|p| *p = 1.0);
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch {
                left: params.len(),
                right: layout.total,
            });
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f32> {
        self.params
    }

    pub(crate) fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| p as f64).collect()
    }

    /// Zeroes the output projection and bias, making every prediction uniform.
    pub fn zero_head(&mut self) {
        let (w, b) = (self.layout.w_head.clone(), self.layout.b_head.clone());
        self.params[w].iter_mut().for_each(|p| *p = 0.0);
        self.params[b].iter_mut().for_each(|p| *p = 0.0);
    }

    /// `exp` of the mean next-token cross-entropy over `tokens`, scored in
    /// non-overlapping windows of `context_len`; the first token of each
    /// window is context only. A trailing window shorter than 2 is dropped.
    pub fn perplexity(&self, tokens: &[usize]) -> Result<f64> {
        let ctx = self.config.context_len;
        let full = tokens.len() / ctx;
        let tail = tokens.len() % ctx;
        if full == 0 && tail < 2 {
            return Err(Error::InvalidInput(
                "evaluation split needs at least 2 tokens".into(),
            ));
        }
        let v = self.config.vocab_size;
        let mut nll = 0.0f64;
        let mut count = 0usize;
        let mut score = |chunk: &[usize], batch: usize| -> Result<()> {
            let seq = chunk.len() / batch;
            let logits = self.forward_batch(chunk, batch)?.into_logits();
            for b in 0..batch {
                for t in 0..seq - 1 {
                    let row = &logits[(b * seq + t) * v..(b * seq + t + 1) * v];
                    let next = chunk[b * seq + t + 1];
                    nll += crate::prob::log_sum_exp(row) - row[next];
                    count += 1;
                }
            }
            Ok(())
        };
        const WINDOWS_PER_PASS: usize = 16;
        let mut w = 0;
        while w < full {
            let take = WINDOWS_PER_PASS.min(full - w);
            score(&tokens[w * ctx..(w + take) * ctx], take)?;
            w += take;
        }
        if tail >= 2 {
            score(&tokens[full * ctx..], 1)?;
        }
        Ok((nll / count as f64).exp())
    }
}

/// `θ₁ + β·(θ₁ − θ₀)`, evaluated in `f64` and stored back as `f32`.
/// `β = 0` returns `θ₁` and `β = −1` returns `θ₀`, both bit for bit.
pub fn interpolate(theta0: &[f32], theta1: &[f32], beta: f64) -> Result<Vec<f32>> {
    if theta0.len() != theta1.len() {
        return Err(Error::DimensionMismatch {
            left: theta0.len(),
            right: theta1.len(),
        });
    }
    if beta == -1.0 {
        // The endpoint is returned verbatim: θ₁ − θ₀ need not be exact in f64.
        return Ok(theta0.to_vec());
    }
    Ok(theta0
        .iter()
        .zip(theta1)
        .map(|(&a, &b)| {
            let (a, b) = (a as f64, b as f64);
            (b + beta * (b - a)) as f32
        })
        .collect())
}
