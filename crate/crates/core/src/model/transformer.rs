//! Forward and reverse-mode passes of the byte-level transformer.
//!
//! Pre-norm blocks: `x += Attn(LN(x)); x += MLP(LN(x))`, learned positional
//! table, GELU (tanh form) MLP with 4× expansion, untied output head.
//! Parameters are stored as `f32`; the passes upcast them once and run in
//! `f64`. Activations are row-major `[B·T × width]`.

use super::linalg::{accumulate_column_sums, add_bias, matmul, matmul_at, matmul_bt};
use super::{Layout, TinyLM};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    att: Vec<f64>,
    attn_out: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    fc_pre: Vec<f64>,
    fc_act: Vec<f64>,
    x_out: Vec<f64>,
}

/// Activations retained by [`TinyLM::forward_batch`] for the backward pass.
pub struct ForwardCache {
    batch: usize,
    seq_len: usize,
    tokens: Vec<usize>,
    weights: Vec<f64>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Vec<f64>,
    logits: Vec<f64>,
}

impl ForwardCache {
    /// `[B·T × V]` logits.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Residual stream after block `layer`, `[B·T × D]`.
    pub fn layer_output(&self, layer: usize) -> &[f64] {
        &self.layers[layer].x_out
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> LnCache {
    let d = gain.len();
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    LnCache { xhat, rstd }
}

/// Accumulates into `dx`, `dgain`, `dbias`.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let d = gain.len();
    for (r, &s) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxhat = dyr[j] * gain[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[j];
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for j in 0..d {
            let dxhat = dyr[j] * gain[j];
            dx[r * d + j] += s * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

/// Causal multi-head attention over `qkv = [q | k | v]` rows of width `3D`.
/// Writes `[B·T × D]` into `out` and returns the attention weights
/// `[B × H × T × T]` (zeros above the diagonal).
fn attention(qkv: &[f64], batch: usize, seq: usize, d: usize, heads: usize, out: &mut [f64]) -> Vec<f64> {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut att = vec![0.0; batch * heads * seq * seq];
    let mut scores = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let att_bh = &mut att[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            for t in 0..seq {
                let q = &qkv[(b * seq + t) * 3 * d + h * hd..][..hd];
                let mut max = f64::NEG_INFINITY;
                for s in 0..=t {
                    let k = &qkv[(b * seq + s) * 3 * d + d + h * hd..][..hd];
                    let dot: f64 = q.iter().zip(k).map(|(a, c)| a * c).sum();
                    scores[s] = dot * scale;
                    max = max.max(scores[s]);
                }
                let mut total = 0.0;
                for score in scores.iter_mut().take(t + 1) {
                    *score = (*score - max).exp();
                    total += *score;
                }
                let row = &mut att_bh[t * seq..(t + 1) * seq];
                let o = &mut out[(b * seq + t) * d + h * hd..][..hd];
                o.iter_mut().for_each(|v| *v = 0.0);
                for s in 0..=t {
                    let w = scores[s] / total;
                    row[s] = w;
                    let v = &qkv[(b * seq + s) * 3 * d + 2 * d + h * hd..][..hd];
                    o.iter_mut().zip(v).for_each(|(a, c)| *a += w * c);
                }
            }
        }
    }
    att
}

fn attention_backward(
    dout: &[f64],
    qkv: &[f64],
    att: &[f64],
    batch: usize,
    seq: usize,
    d: usize,
    heads: usize,
    dqkv: &mut [f64],
) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut datt = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let att_bh = &att[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            for t in 0..seq {
                let row = &att_bh[t * seq..(t + 1) * seq];
                let dyo = &dout[(b * seq + t) * d + h * hd..][..hd];
                let mut weighted = 0.0;
                for s in 0..=t {
                    let v_off = (b * seq + s) * 3 * d + 2 * d + h * hd;
                    let v = &qkv[v_off..v_off + hd];
                    datt[s] = dyo.iter().zip(v).map(|(a, c)| a * c).sum();
                    weighted += row[s] * datt[s];
                    let dv = &mut dqkv[v_off..v_off + hd];
                    dv.iter_mut().zip(dyo).for_each(|(a, c)| *a += row[s] * c);
                }
                let q_off = (b * seq + t) * 3 * d + h * hd;
                for s in 0..=t {
                    let dscore = row[s] * (datt[s] - weighted) * scale;
                    if dscore == 0.0 {
                        continue;
                    }
                    let k_off = (b * seq + s) * 3 * d + d + h * hd;
                    for j in 0..hd {
                        dqkv[q_off + j] += dscore * qkv[k_off + j];
                        dqkv[k_off + j] += dscore * qkv[q_off + j];
                    }
                }
            }
        }
    }
}

impl TinyLM {
    fn check_batch(&self, tokens: &[usize], batch: usize) -> Result<usize> {
        if batch == 0 || tokens.is_empty() || !tokens.len().is_multiple_of(batch) {
            return Err(Error::InvalidInput(format!(
                "{} tokens do not split into {batch} equal sequences",
                tokens.len()
            )));
        }
        let seq = tokens.len() / batch;
        if seq > self.config().context_len {
            return Err(Error::InvalidInput(format!(
                "sequence length {seq} exceeds context length {}",
                self.config().context_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config().vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.config().vocab_size
            )));
        }
        Ok(seq)
    }

    /// Logits `[T × V]` for a single sequence.
    pub fn forward(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(tokens, 1)?.into_logits())
    }

    /// Runs `batch` equal-length sequences laid out back to back in `tokens`.
    pub fn forward_batch(&self, tokens: &[usize], batch: usize) -> Result<ForwardCache> {
        let seq = self.check_batch(tokens, batch)?;
        let cfg = *self.config();
        let layout = self.layout();
        let w = self.params_f64();
        let (d, v, n) = (cfg.d_model, cfg.vocab_size, tokens.len());
        let p = |range: std::ops::Range<usize>| &w[range];

        let mut x = vec![0.0; n * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let pos = i % seq;
            let e = &w[layout.wte.start + tok * d..][..d];
            let pe = &w[layout.wpe.start + pos * d..][..d];
            for j in 0..d {
                x[i * d + j] = e[j] + pe[j];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &layout.layers {
            let mut h1 = vec![0.0; n * d];
            let ln1 = layer_norm(&x, p(lo.ln1_g.clone()), p(lo.ln1_b.clone()), &mut h1);
            let mut qkv = vec![0.0; n * 3 * d];
            matmul(n, d, 3 * d, &h1, p(lo.w_qkv.clone()), &mut qkv, false);
            add_bias(&mut qkv, p(lo.b_qkv.clone()));
            let mut attn_out = vec![0.0; n * d];
            let att = attention(&qkv, batch, seq, d, cfg.n_heads, &mut attn_out);
            matmul(n, d, d, &attn_out, p(lo.w_proj.clone()), &mut x, true);
            add_bias(&mut x, p(lo.b_proj.clone()));

            let mut h2 = vec![0.0; n * d];
            let ln2 = layer_norm(&x, p(lo.ln2_g.clone()), p(lo.ln2_b.clone()), &mut h2);
            let mut fc_pre = vec![0.0; n * 4 * d];
            matmul(n, d, 4 * d, &h2, p(lo.w_fc.clone()), &mut fc_pre, false);
            add_bias(&mut fc_pre, p(lo.b_fc.clone()));
            let fc_act: Vec<f64> = fc_pre.iter().map(|&u| gelu(u)).collect();
            matmul(n, 4 * d, d, &fc_act, p(lo.w_fc2.clone()), &mut x, true);
            add_bias(&mut x, p(lo.b_fc2.clone()));

            layers.push(LayerCache {
                ln1,
                h1,
                qkv,
                att,
                attn_out,
                ln2,
                h2,
                fc_pre,
                fc_act,
                x_out: x.clone(),
            });
        }

        let mut hf = vec![0.0; n * d];
        let lnf = layer_norm(&x, p(layout.lnf_g.clone()), p(layout.lnf_b.clone()), &mut hf);
        let mut logits = vec![0.0; n * v];
        matmul(n, d, v, &hf, p(layout.w_head.clone()), &mut logits, false);
        add_bias(&mut logits, p(layout.b_head.clone()));

        Ok(ForwardCache {
            batch,
            seq_len: seq,
            tokens: tokens.to_vec(),
            weights: w,
            layers,
            lnf,
            hf,
            logits,
        })
    }

    /// Gradient of `Σ grad_logits ⊙ logits` with respect to every parameter,
    /// recomputing the forward pass for `tokens` (one sequence).
    pub fn backward(&self, tokens: &[usize], grad_logits: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_batch(tokens, 1)?;
        self.backward_cached(&cache, grad_logits)
    }

    /// Reverse pass over a cache produced by [`TinyLM::forward_batch`].
    pub fn backward_cached(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Vec<f64>> {
        let cfg = *self.config();
        let layout: &Layout = self.layout();
        let (d, v) = (cfg.d_model, cfg.vocab_size);
        let n = cache.tokens.len();
        if grad_logits.len() != n * v {
            return Err(Error::DimensionMismatch {
                left: grad_logits.len(),
                right: n * v,
            });
        }
        let w = &cache.weights;
        let mut grads = vec![0.0; layout.total];

        // Output head.
        let (wh, bh) = (layout.w_head.clone(), layout.b_head.clone());
        matmul_at(d, n, v, &cache.hf, grad_logits, &mut grads[wh.clone()], true);
        accumulate_column_sums(grad_logits, &mut grads[bh]);
        let mut dhf = vec![0.0; n * d];
        matmul_bt(n, v, d, grad_logits, &w[wh], &mut dhf, false);
        let mut dx = vec![0.0; n * d];
        let (gg, gb) = split_pair(&mut grads, layout.lnf_g.clone(), layout.lnf_b.clone());
        layer_norm_backward(&dhf, &cache.lnf, &w[layout.lnf_g.clone()], &mut dx, gg, gb);
        self.backward_blocks(cache, dx, grads)
    }

    fn backward_blocks(&self, cache: &ForwardCache, mut dx: Vec<f64>, mut grads: Vec<f64>) -> Result<Vec<f64>> {
        let cfg = *self.config();
        let layout = self.layout();
        let d = cfg.d_model;
        let n = cache.tokens.len();
        let w = &cache.weights;

        for (lo, lc) in layout.layers.iter().zip(&cache.layers).rev() {
            // MLP branch.
            matmul_at(4 * d, n, d, &lc.fc_act, &dx, &mut grads[lo.w_fc2.clone()], true);
            accumulate_column_sums(&dx, &mut grads[lo.b_fc2.clone()]);
            let mut dpre = vec![0.0; n * 4 * d];
            matmul_bt(n, d, 4 * d, &dx, &w[lo.w_fc2.clone()], &mut dpre, false);
            dpre.iter_mut().zip(&lc.fc_pre).for_each(|(g, &u)| *g *= gelu_grad(u));
            matmul_at(d, n, 4 * d, &lc.h2, &dpre, &mut grads[lo.w_fc.clone()], true);
            accumulate_column_sums(&dpre, &mut grads[lo.b_fc.clone()]);
            let mut dh2 = vec![0.0; n * d];
            matmul_bt(n, 4 * d, d, &dpre, &w[lo.w_fc.clone()], &mut dh2, false);
            {
                let (gg, gb) = split_pair(&mut grads, lo.ln2_g.clone(), lo.ln2_b.clone());
                layer_norm_backward(&dh2, &lc.ln2, &w[lo.ln2_g.clone()], &mut dx, gg, gb);
            }

            // Attention branch.
            matmul_at(d, n, d, &lc.attn_out, &dx, &mut grads[lo.w_proj.clone()], true);
            accumulate_column_sums(&dx, &mut grads[lo.b_proj.clone()]);
            let mut dout = vec![0.0; n * d];
            matmul_bt(n, d, d, &dx, &w[lo.w_proj.clone()], &mut dout, false);
            let mut dqkv = vec![0.0; n * 3 * d];
            attention_backward(&dout, &lc.qkv, &lc.att, cache.batch, cache.seq_len, d, cfg.n_heads, &mut dqkv);
            matmul_at(d, n, 3 * d, &lc.h1, &dqkv, &mut grads[lo.w_qkv.clone()], true);
            accumulate_column_sums(&dqkv, &mut grads[lo.b_qkv.clone()]);
            let mut dh1 = vec![0.0; n * d];
            matmul_bt(n, 3 * d, d, &dqkv, &w[lo.w_qkv.clone()], &mut dh1, false);
            {
                let (gg, gb) = split_pair(&mut grads, lo.ln1_g.clone(), lo.ln1_b.clone());
                layer_norm_backward(&dh1, &lc.ln1, &w[lo.ln1_g.clone()], &mut dx, gg, gb);
            }
        }

        for (i, &tok) in cache.tokens.iter().enumerate() {
            let pos = i % cache.seq_len;
            let row = &dx[i * d..(i + 1) * d];
            let e = layout.wte.start + tok * d;
            grads[e..e + d].iter_mut().zip(row).for_each(|(g, r)| *g += r);
            let pe = layout.wpe.start + pos * d;
            grads[pe..pe + d].iter_mut().zip(row).for_each(|(g, r)| *g += r);
        }
        Ok(grads)
    }
}

/// Two disjoint, ordered ranges of one buffer as separate mutable slices.
fn split_pair(
    buf: &mut [f64],
    first: std::ops::Range<usize>,
    second: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(first.end <= second.start);
    let (lo, hi) = buf.split_at_mut(second.start);
    (&mut lo[first], &mut hi[..second.end - second.start])
}
