//! The prompt-tuning architecture.
//!
//! Dataflow of the full variant:
//!
//! ```text
//! [template, input] -> frozen backbone -> E_se -> semantic encoder -> H_se
//!     H_se[mask] -> tied LM head -> label-word logits        (classification)
//!     soft prompt (query) x H_se (key/value) -> decoder -> H_sp -> mean -> pooled
//! ```
//!
//! The backbone output is a pure function of the tokens, so callers encode
//! each example once ([`Backbone::encode`]) and reuse the result.

mod checkpoint;
pub mod layers;
mod prompt_init;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedArray, CHECKPOINT_SCHEMA_VERSION};
pub use layers::{attention, layer_forward, Attention, LayerParams, LayerVars};
pub use prompt_init::{init_soft_prompt, SoftInit};

use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::taskgen::{tokenize, FewShotTask, HardTemplate, TokenizedInput};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Maximum sequence length `o` of the backbone.
    pub max_seq_len: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    /// Soft-prompt length `l`.
    pub prompt_len: usize,
    /// Number of frozen backbone layers.
    pub frozen_depth: usize,
    pub num_classes: usize,
    pub mask_token_id: usize,
    pub pad_token_id: usize,
    /// Contrastive temperature.
    pub temperature: f64,
    /// One verbalizer token per class.
    pub label_word_ids: Vec<usize>,
    pub backbone_seed: u64,
    pub layer_norm_eps: f64,
    /// Standard deviation of the frozen token embeddings (and so of the
    /// tied verbalizer head).
    pub token_embedding_std: f64,
    pub position_embedding_std: f64,
    /// Standard deviation of the trainable layers' weight matrices.
    pub trainable_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 128,
            max_seq_len: 32,
            embed_dim: 32,
            ffn_dim: 64,
            prompt_len: 10,
            frozen_depth: 2,
            num_classes: 2,
            mask_token_id: 1,
            pad_token_id: 0,
            temperature: 0.1,
            label_word_ids: vec![2, 3],
            backbone_seed: 20_240_101,
            layer_norm_eps: 1e-5,
            token_embedding_std: 0.3,
            position_embedding_std: 0.03,
            trainable_init_std: 1.0 / 32f64.sqrt(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        if self.prompt_len < 1 {
            return fail("prompt_len must be >= 1".into());
        }
        if self.embed_dim < 2 {
            return fail(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 || self.ffn_dim == 0 {
            return fail("vocab_size, max_seq_len and ffn_dim must be positive".into());
        }
        if self.mask_token_id == self.pad_token_id {
            return fail("mask and pad tokens must differ".into());
        }
        if self.mask_token_id >= self.vocab_size || self.pad_token_id >= self.vocab_size {
            return fail("mask and pad tokens must be inside the vocabulary".into());
        }
        if self.label_word_ids.len() != self.num_classes {
            return fail(format!(
                "{} label words for {} classes",
                self.label_word_ids.len(),
                self.num_classes
            ));
        }
        for (i, &w) in self.label_word_ids.iter().enumerate() {
            if w >= self.vocab_size {
                return fail(format!("label word {w} outside vocabulary"));
            }
            if self.label_word_ids[..i].contains(&w) {
                return fail(format!("label word {w} repeated"));
            }
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.token_embedding_std > 0.0) || !(self.position_embedding_std >= 0.0) {
            return fail("embedding standard deviations must be positive".into());
        }
        if !(self.trainable_init_std > 0.0) {
            return fail("trainable_init_std must be positive".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be > 0".into());
        }
        Ok(())
    }
}

/// Which dataflow the model runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Hard prompt on the input, soft prompt in the decoder, both losses.
    Full,
    /// No contrastive head; MLM loss only.
    WoCl,
    /// No decoder: soft prompt prepended to the backbone states.
    WoGd,
    /// No soft prompt: decoder queries are the encoder states themselves.
    WoSp,
    /// No hard prompt: a bare mask token replaces the template.
    WoHp,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::WoCl,
        Variant::WoGd,
        Variant::WoSp,
        Variant::WoHp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoCl => "wo_cl",
            Variant::WoGd => "wo_gd",
            Variant::WoSp => "wo_sp",
            Variant::WoHp => "wo_hp",
        }
    }

    pub fn has_contrastive_head(self) -> bool {
        self != Variant::WoCl
    }

    /// Template actually fed to the backbone under this variant.
    pub fn effective_template(self, template: &HardTemplate, mask_token_id: usize) -> HardTemplate {
        match self {
            Variant::WoHp => HardTemplate::bare_mask(mask_token_id),
            _ => template.clone(),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Frozen parameters: embeddings and the backbone encoder layers. The LM
/// head is the transposed token embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: ModelConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerParams>,
    lm_head: Tensor,
}

/// Backbone output for a batch, plus what the trainable layers need to know
/// about padding and the mask slot.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    /// `E_se`, shape `[b, o, d]`.
    pub states: Tensor,
    /// Per-position validity, `b * o` entries.
    pub valid: Vec<bool>,
    pub mask_positions: Vec<usize>,
}

impl EncodedBatch {
    pub fn batch_size(&self) -> usize {
        self.mask_positions.len()
    }

    pub fn seq_len(&self) -> usize {
        self.states.shape()[1]
    }

    /// Example `i` as a batch of one.
    pub fn example(&self, i: usize) -> EncodedBatch {
        self.select(&[i])
    }

    /// Gathers the listed examples into a new batch.
    pub fn select(&self, idx: &[usize]) -> EncodedBatch {
        let (o, d) = (self.states.shape()[1], self.states.shape()[2]);
        let src = self.states.data();
        let mut states = Vec::with_capacity(idx.len() * o * d);
        let mut valid = Vec::with_capacity(idx.len() * o);
        for &i in idx {
            states.extend_from_slice(&src[i * o * d..(i + 1) * o * d]);
            valid.extend_from_slice(&self.valid[i * o..(i + 1) * o]);
        }
        EncodedBatch {
            states: Tensor::new(vec![idx.len(), o, d], states).expect("consistent batch"),
            valid,
            mask_positions: idx.iter().map(|&i| self.mask_positions[i]).collect(),
        }
    }
}

fn init_rows<R: rand::Rng>(rows: usize, d: usize, std: f64, rng: &mut R) -> Tensor {
    Tensor::randn(&[rows, d], std, rng)
}

impl Backbone {
    /// Seeded random stand-in for a pretrained encoder.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.backbone_seed, tags::BACKBONE);
        let d = config.embed_dim;
        let token_embedding = init_rows(config.vocab_size, d, config.token_embedding_std, &mut rng);
        let position_embedding = init_rows(config.max_seq_len, d, config.position_embedding_std, &mut rng);
        let layers = (0..config.frozen_depth)
            .map(|_| LayerParams::init(d, config.ffn_dim, &mut rng))
            .collect();
        Ok(Self::from_parts(config.clone(), token_embedding, position_embedding, layers))
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        token_embedding: Tensor,
        position_embedding: Tensor,
        layers: Vec<LayerParams>,
    ) -> Self {
        let (v, d) = (config.vocab_size, config.embed_dim);
        let mut lm = vec![0.0; v * d];
        for (i, row) in token_embedding.data().chunks(d).enumerate() {
            for (j, &x) in row.iter().enumerate() {
                lm[j * v + i] = x;
            }
        }
        Backbone {
            lm_head: Tensor::new(vec![d, v], lm).expect("lm head shape"),
            config,
            token_embedding,
            position_embedding,
            layers,
        }
    }

    /// `[d, V]` verbalizer projection, tied to the token embeddings.
    pub fn lm_head(&self) -> &Tensor {
        &self.lm_head
    }

    /// Every frozen tensor with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("backbone.token_embedding".to_string(), &self.token_embedding),
            ("backbone.position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layers::LAYER_PARAM_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("backbone.layer{i}.{name}"), t));
            }
        }
        out
    }

    /// FNV-1a over the bit patterns of every frozen value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.named_tensors() {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Runs the frozen encoder on tokenized inputs. No gradient state is
    /// created: every tensor on the tape is a constant.
    pub fn encode(&self, inputs: &[TokenizedInput]) -> Result<EncodedBatch> {
        let cfg = &self.config;
        let (o, d) = (cfg.max_seq_len, cfg.embed_dim);
        if inputs.is_empty() {
            return Err(Error::Contract("cannot encode an empty batch".into()));
        }
        let mut ids = Vec::with_capacity(inputs.len() * o);
        let mut valid = Vec::with_capacity(inputs.len() * o);
        for (i, inp) in inputs.iter().enumerate() {
            if inp.ids.len() != o || inp.valid.len() != o {
                return Err(Error::Shape(format!(
                    "input {i} has length {}, expected {o}",
                    inp.ids.len()
                )));
            }
            if inp.mask_pos >= o || !inp.valid[inp.mask_pos] || inp.ids[inp.mask_pos] != cfg.mask_token_id {
                return Err(Error::Contract(format!("input {i} has no valid mask position")));
            }
            ids.extend_from_slice(&inp.ids);
            valid.extend_from_slice(&inp.valid);
        }
        let b = inputs.len();
        let mut tape = Tape::new();
        let table = tape.constant(self.token_embedding.clone());
        let tok = tape.embedding(table, &ids)?;
        let pos = tape.constant(self.position_embedding.clone());
        let pos = tape.expand_batch(pos, b)?;
        let pos = tape.reshape(pos, &[b * o, d])?;
        let x = tape.add(tok, pos)?;
        let mut x = tape.reshape(x, &[b, o, d])?;
        for layer in &self.layers {
            let vars = layer.register(&mut tape, false);
            x = layer_forward(&mut tape, &vars, x, x, &valid, cfg.layer_norm_eps)?;
        }
        Ok(EncodedBatch {
            states: tape.value(x).clone(),
            valid,
            mask_positions: inputs.iter().map(|t| t.mask_pos).collect(),
        })
    }

    /// Splices `[template, input]` for every input and encodes the batch.
    pub fn encode_text(&self, template: &HardTemplate, inputs: &[Vec<usize>]) -> Result<EncodedBatch> {
        let cfg = &self.config;
        if let Some(pos) = template.tokens.iter().position(|&t| t == cfg.mask_token_id) {
            if pos >= cfg.max_seq_len {
                return Err(Error::Template(format!(
                    "mask slot at {pos} is truncated by max_seq_len {}",
                    cfg.max_seq_len
                )));
            }
        }
        let tokenized = inputs
            .iter()
            .map(|x| {
                if let Some(&bad) = x.iter().chain(&template.tokens).find(|&&t| t >= cfg.vocab_size) {
                    return Err(Error::Vocabulary {
                        id: bad,
                        vocab_size: cfg.vocab_size,
                    });
                }
                tokenize(x, cfg.max_seq_len, template, cfg.mask_token_id, cfg.pad_token_id)
            })
            .collect::<Result<Vec<_>>>()?;
        self.encode(&tokenized)
    }
}

/// All parameters: the shared frozen backbone and the trainable groups
/// (semantic encoder, generative decoder, soft prompt).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub backbone: Arc<Backbone>,
    pub semantic: LayerParams,
    pub decoder: LayerParams,
    pub soft_prompt: Tensor,
}

/// Trainable parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TrainableVars {
    pub semantic: LayerVars,
    pub decoder: LayerVars,
    pub soft_prompt: Var,
}

impl TrainableVars {
    /// Same order as [`ModelState::trainable`].
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.semantic.all().to_vec();
        v.extend(self.decoder.all());
        v.push(self.soft_prompt);
        v
    }

    /// Inverse of [`TrainableVars::all`].
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        if v.len() != 27 {
            return Err(Error::Shape(format!("expected 27 trainable tensors, got {}", v.len())));
        }
        Ok(TrainableVars {
            semantic: LayerVars::from_slice(&v[..13])?,
            decoder: LayerVars::from_slice(&v[13..26])?,
            soft_prompt: v[26],
        })
    }
}

pub struct ForwardOutput {
    /// `[b, num_classes]`
    pub label_logits: Var,
    /// `[b, V]` logits at the mask slot.
    pub vocab_logits: Var,
    /// `[b, d]` pooled prompt states, absent without a contrastive head.
    pub pooled: Option<Var>,
}

/// Parameter group names, in [`ModelState::trainable`] order.
pub fn trainable_names() -> Vec<String> {
    let mut names: Vec<String> = layers::LAYER_PARAM_NAMES.iter().map(|n| format!("semantic.{n}")).collect();
    names.extend(layers::LAYER_PARAM_NAMES.iter().map(|n| format!("decoder.{n}")));
    names.push("soft_prompt".into());
    names
}

/// Index of the highest logit; ties go to the lowest class.
pub fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ModelState {
    /// Fresh trainable groups for `seed`; the soft prompt follows `strategy`.
    pub fn new(backbone: Arc<Backbone>, seed: u64, strategy: SoftInit, task: &FewShotTask) -> Result<Self> {
        let cfg = &backbone.config;
        let mut rs = rng::stream(seed, tags::SEMANTIC);
        let semantic = LayerParams::init_with_std(cfg.embed_dim, cfg.ffn_dim, cfg.trainable_init_std, &mut rs);
        let mut rd = rng::stream(seed, tags::DECODER);
        let decoder = LayerParams::init_with_std(cfg.embed_dim, cfg.ffn_dim, cfg.trainable_init_std, &mut rd);
        let soft_prompt = init_soft_prompt(strategy, &backbone, task, seed)?;
        Ok(ModelState {
            backbone,
            semantic,
            decoder,
            soft_prompt,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.backbone.config
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.semantic.tensors().to_vec();
        v.extend(self.decoder.tensors());
        v.push(&self.soft_prompt);
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.semantic.tensors_mut().into_iter().collect();
        v.extend(self.decoder.tensors_mut());
        v.push(&mut self.soft_prompt);
        v
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.numel()).sum()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> TrainableVars {
        TrainableVars {
            semantic: self.semantic.register(tape, trainable),
            decoder: self.decoder.register(tape, trainable),
            soft_prompt: tape.leaf(self.soft_prompt.clone(), trainable),
        }
    }

    /// Semantic encoder on `[b, n, d]` states with per-position validity.
    pub fn sem_encode_on(&self, tape: &mut Tape, vars: &TrainableVars, x: Var, valid: &[bool]) -> Result<Var> {
        layer_forward(tape, &vars.semantic, x, x, valid, self.config().layer_norm_eps)
    }

    /// Generative decoder: `queries[b, m, d]` attend over `memory[b, n, d]`.
    pub fn gen_decode_on(
        &self,
        tape: &mut Tape,
        vars: &TrainableVars,
        queries: Var,
        memory: Var,
        valid: &[bool],
    ) -> Result<Var> {
        layer_forward(tape, &vars.decoder, queries, memory, valid, self.config().layer_norm_eps)
    }

    /// Full-vocabulary logits at the mask rows and the label-word columns.
    pub fn verbalize_on(&self, tape: &mut Tape, h_se: Var, mask_positions: &[usize]) -> Result<(Var, Var)> {
        let rows = tape.gather_rows(h_se, mask_positions)?;
        let head = tape.constant(self.backbone.lm_head().clone());
        let vocab_logits = tape.matmul(rows, head)?;
        let label_logits = tape.index_cols(vocab_logits, &self.config().label_word_ids)?;
        Ok((label_logits, vocab_logits))
    }

    /// Records the forward pass of `variant` on `tape`.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        vars: &TrainableVars,
        batch: &EncodedBatch,
        variant: Variant,
    ) -> Result<ForwardOutput> {
        let b = batch.batch_size();
        let o = batch.seq_len();
        let l = self.soft_prompt.shape()[0];
        if self.soft_prompt.shape()[1] != batch.states.shape()[2] {
            return Err(Error::Shape(format!(
                "soft prompt {:?} does not match state width {:?}",
                self.soft_prompt.shape(),
                batch.states.shape()
            )));
        }
        let e_se = tape.constant(batch.states.clone());

        if variant == Variant::WoGd {
            let prompt = tape.expand_batch(vars.soft_prompt, b)?;
            let x = tape.concat_axis1(prompt, e_se)?;
            let mut valid = Vec::with_capacity(b * (l + o));
            for i in 0..b {
                valid.extend(std::iter::repeat_n(true, l));
                valid.extend_from_slice(&batch.valid[i * o..(i + 1) * o]);
            }
            let h_se = self.sem_encode_on(tape, vars, x, &valid)?;
            let shifted: Vec<usize> = batch.mask_positions.iter().map(|p| p + l).collect();
            let (label_logits, vocab_logits) = self.verbalize_on(tape, h_se, &shifted)?;
            let prompt_states = tape.slice_axis1(h_se, 0, l)?;
            let pooled = tape.mean_axis1(prompt_states)?;
            return Ok(ForwardOutput {
                label_logits,
                vocab_logits,
                pooled: Some(pooled),
            });
        }

        let h_se = self.sem_encode_on(tape, vars, e_se, &batch.valid)?;
        let (label_logits, vocab_logits) = self.verbalize_on(tape, h_se, &batch.mask_positions)?;
        let pooled = match variant {
            Variant::WoCl => None,
            Variant::WoSp => {
                let h_sp = self.gen_decode_on(tape, vars, h_se, h_se, &batch.valid)?;
                Some(tape.masked_mean_axis1(h_sp, &batch.valid)?)
            }
            Variant::Full | Variant::WoHp => {
                let prompt = tape.expand_batch(vars.soft_prompt, b)?;
                let h_sp = self.gen_decode_on(tape, vars, prompt, h_se, &batch.valid)?;
                Some(tape.mean_axis1(h_sp)?)
            }
            Variant::WoGd => unreachable!(),
        };
        Ok(ForwardOutput {
            label_logits,
            vocab_logits,
            pooled,
        })
    }

    /// Inference forward pass: `(label logits, vocab logits, pooled)`.
    pub fn forward(&self, batch: &EncodedBatch, variant: Variant) -> Result<(Tensor, Tensor, Option<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let out = self.forward_on(&mut tape, &vars, batch, variant)?;
        Ok((
            tape.value(out.label_logits).clone(),
            tape.value(out.vocab_logits).clone(),
            out.pooled.map(|p| tape.value(p).clone()),
        ))
    }

    /// Class predictions for a batch. Only the textual path runs, except
    /// under `WoGd` where the prompt sits on the input.
    pub fn predict(&self, batch: &EncodedBatch, variant: Variant) -> Result<Vec<usize>> {
        let logits = if variant == Variant::WoGd {
            self.forward(batch, variant)?.0
        } else {
            let mut tape = Tape::new();
            let vars = self.register(&mut tape, false);
            let x = tape.constant(batch.states.clone());
            let h_se = self.sem_encode_on(&mut tape, &vars, x, &batch.valid)?;
            let (logits, _) = self.verbalize_on(&mut tape, h_se, &batch.mask_positions)?;
            tape.value(logits).clone()
        };
        Ok((0..batch.batch_size()).map(|i| argmax_first(logits.row(i))).collect())
    }

    /// `H_se` for a batch of backbone states.
    pub fn sem_encode(&self, e_se: &Tensor, valid: &[bool]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = tape.constant(e_se.clone());
        let h = self.sem_encode_on(&mut tape, &vars, x, valid)?;
        Ok(tape.value(h).clone())
    }

    /// `H_sp` for the soft prompt attending over `h_se`.
    pub fn gen_decode(&self, h_se: &Tensor, valid: &[bool]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let b = h_se.shape()[0];
        let mem = tape.constant(h_se.clone());
        let prompt = tape.expand_batch(vars.soft_prompt, b)?;
        let h = self.gen_decode_on(&mut tape, &vars, prompt, mem, valid)?;
        Ok(tape.value(h).clone())
    }

    /// `(label logits, vocab logits)` at the mask rows of `h_se`.
    pub fn verbalize(&self, h_se: &Tensor, mask_positions: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let h = tape.constant(h_se.clone());
        let (label, vocab) = self.verbalize_on(&mut tape, h, mask_positions)?;
        Ok((tape.value(label).clone(), tape.value(vocab).clone()))
    }
}

/// Mean over the prompt axis: `[b, l, d] -> [b, d]`.
pub fn pool_prompt(h_sp: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.constant(h_sp.clone());
    let p = tape.mean_axis1(h)?;
    Ok(tape.value(p).clone())
}
