use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Weights of one single-head transformer layer: attention with bias-free
/// query/key/value maps, an output projection, a GELU feed-forward block and
/// two post-residual layer norms.
///
/// The same parameter set serves the frozen backbone layers, the semantic
/// encoder (self-attention) and the generative decoder (cross-attention).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

pub const LAYER_PARAM_NAMES: [&str; 13] = [
    "wq", "wk", "wv", "wo", "bo", "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2", "ln2_gain",
    "ln2_bias",
];

impl LayerParams {
    /// Fan-in scaled normal init: `N(0, 1/d)` and `N(0, 1/ffn)` for `w2`.
    pub fn init<R: Rng + ?Sized>(d: usize, ffn: usize, rng: &mut R) -> Self {
        Self::init_scaled(d, ffn, 1.0 / (d as f64).sqrt(), 1.0 / (ffn as f64).sqrt(), rng)
    }

    /// Every weight matrix drawn from `N(0, std²)`.
    pub fn init_with_std<R: Rng + ?Sized>(d: usize, ffn: usize, std: f64, rng: &mut R) -> Self {
        Self::init_scaled(d, ffn, std, std, rng)
    }

    fn init_scaled<R: Rng + ?Sized>(d: usize, ffn: usize, s: f64, s2: f64, rng: &mut R) -> Self {
        LayerParams {
            wq: Tensor::randn(&[d, d], s, rng),
            wk: Tensor::randn(&[d, d], s, rng),
            wv: Tensor::randn(&[d, d], s, rng),
            wo: Tensor::randn(&[d, d], s, rng),
            bo: Tensor::zeros(&[d]),
            ln1_gain: Tensor::ones(&[d]),
            ln1_bias: Tensor::zeros(&[d]),
            w1: Tensor::randn(&[d, ffn], s, rng),
            b1: Tensor::zeros(&[ffn]),
            w2: Tensor::randn(&[ffn, d], s2, rng),
            b2: Tensor::zeros(&[d]),
            ln2_gain: Tensor::ones(&[d]),
            ln2_bias: Tensor::zeros(&[d]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 13] {
        [
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.bo,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        let [wq, wk, wv, wo, bo, ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias] =
            self.tensors().map(|t| tape.leaf(t.clone(), trainable));
        LayerVars {
            wq,
            wk,
            wv,
            wo,
            bo,
            ln1_gain,
            ln1_bias,
            w1,
            b1,
            w2,
            b2,
            ln2_gain,
            ln2_bias,
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// [`LayerParams`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

impl LayerVars {
    /// Inverse of [`LayerVars::all`].
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        let [wq, wk, wv, wo, bo, ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias]: [Var; 13] = v
            .try_into()
            .map_err(|_| Error::Shape(format!("a layer has 13 parameter tensors, got {}", v.len())))?;
        Ok(LayerVars {
            wq,
            wk,
            wv,
            wo,
            bo,
            ln1_gain,
            ln1_bias,
            w1,
            b1,
            w2,
            b2,
            ln2_gain,
            ln2_bias,
        })
    }

    pub fn all(&self) -> [Var; 13] {
        [
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.bo,
            self.ln1_gain,
            self.ln1_bias,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.ln2_gain,
            self.ln2_bias,
        ]
    }
}

pub struct Attention {
    /// `softmax(QKᵀ/√d) V`, shape `[B, m, d]`.
    pub output: Var,
    /// Attention weights, shape `[B, m, n]`; zero on masked keys.
    pub weights: Var,
}

/// Expands a per-key validity mask `[B, n]` to every query row `[B, m, n]`.
pub fn expand_key_mask(key_valid: &[bool], batch: usize, queries: usize) -> Vec<bool> {
    let n = key_valid.len() / batch;
    let mut out = Vec::with_capacity(batch * queries * n);
    for b in 0..batch {
        for _ in 0..queries {
            out.extend_from_slice(&key_valid[b * n..(b + 1) * n]);
        }
    }
    out
}

/// Single-head scaled dot-product attention with queries from `q_in[B, m, d]`
/// and keys/values from `kv_in[B, n, d]`. Keys with `key_valid[b * n + j]`
/// false get no weight.
pub fn attention(
    tape: &mut Tape,
    p: &LayerVars,
    q_in: Var,
    kv_in: Var,
    key_valid: &[bool],
) -> Result<Attention> {
    let (sq, skv) = (tape.shape(q_in).to_vec(), tape.shape(kv_in).to_vec());
    if sq.len() != 3 || skv.len() != 3 || sq[0] != skv[0] || sq[2] != skv[2] {
        return Err(Error::Shape(format!(
            "attention: queries {sq:?} and keys {skv:?} disagree"
        )));
    }
    let (batch, m, n, d) = (sq[0], sq[1], skv[1], sq[2]);
    if key_valid.len() != batch * n {
        return Err(Error::Shape(format!(
            "attention: key mask of {} entries for {batch}x{n} keys",
            key_valid.len()
        )));
    }
    for b in 0..batch {
        if !key_valid[b * n..(b + 1) * n].iter().any(|&v| v) {
            return Err(Error::Contract(format!(
                "example {b} has no valid (non-pad) positions"
            )));
        }
    }
    let q = tape.matmul(q_in, p.wq)?;
    let k = tape.matmul(kv_in, p.wk)?;
    let v = tape.matmul(kv_in, p.wv)?;
    let scores = tape.bmm_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let mask = expand_key_mask(key_valid, batch, m);
    let weights = tape.masked_softmax_rows(scores, &mask)?;
    let output = tape.bmm(weights, v)?;
    Ok(Attention { output, weights })
}

/// Full layer: attention, output projection, residual onto the queries,
/// layer norm, feed-forward, residual, layer norm.
pub fn layer_forward(
    tape: &mut Tape,
    p: &LayerVars,
    q_in: Var,
    kv_in: Var,
    key_valid: &[bool],
    eps: f64,
) -> Result<Var> {
    let attn = attention(tape, p, q_in, kv_in, key_valid)?;
    let proj = tape.matmul(attn.output, p.wo)?;
    let proj = tape.add_bias(proj, p.bo)?;
    let res = tape.add(q_in, proj)?;
    let h = tape.layer_norm(res, p.ln1_gain, p.ln1_bias, eps)?;
    let f = tape.matmul(h, p.w1)?;
    let f = tape.add_bias(f, p.b1)?;
    let f = tape.gelu(f)?;
    let f = tape.matmul(f, p.w2)?;
    let f = tape.add_bias(f, p.b2)?;
    let res = tape.add(h, f)?;
    tape.layer_norm(res, p.ln2_gain, p.ln2_bias, eps)
}
