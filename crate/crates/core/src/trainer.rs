//! Mini-batch training with AdamW and dev-set model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Backbone, EncodedBatch, ModelState, SoftInit, TrainableVars, Variant};
use crate::objectives::{mlm_loss_on, supcon_loss_on, total_loss_on};
use crate::rng::{self, tags};
use crate::taskgen::{tokenize, Example, FewShotTask, HardTemplate};
use crate::tensor::{grad_check, GradCheckReport, Tape, Tensor, Var};

/// Examples per inference chunk; bounds tape memory on large splits.
const EVAL_CHUNK: usize = 64;

/// Learning-rate schedule over optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear interpolation from the base rate to `end_factor` times it.
    Linear { end_factor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize, total_steps: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Linear { end_factor } => {
                if total_steps <= 1 {
                    return base;
                }
                let t = step as f64 / (total_steps - 1) as f64;
                base * (1.0 + (end_factor - 1.0) * t)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub variant: Variant,
    pub soft_init: SoftInit,
    pub lr_schedule: LrSchedule,
    /// Reshuffle the training split every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            variant: Variant::Full,
            soft_init: SoftInit::Random,
            lr_schedule: LrSchedule::Constant,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be >= 1".into()));
        }
        if self.variant.has_contrastive_head() && self.batch_size < 2 {
            return Err(Error::Contract(
                "batch_size must be >= 2 when the contrastive loss is active".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Contract("learning rate and weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamWState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamWConfig {
    fn from(c: &TrainConfig) -> Self {
        AdamWConfig {
            lr: c.learning_rate,
            weight_decay: c.weight_decay,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
        }
    }
}

/// One AdamW update with decoupled weight decay:
///
/// ```text
/// p -= lr * wd * p
/// m  = b1 m + (1 - b1) g;   v = b2 v + (1 - b2) g^2
/// p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
///
/// `names` labels the parameter groups in error messages.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamWState,
    cfg: &AdamWConfig,
    names: &[String],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adamw: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.len() != params[i].len() {
            return Err(Error::Shape(format!("adamw: gradient size mismatch for parameter {i}")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.iter_mut().enumerate() {
            let g = grads[i][j];
            *x -= cfg.lr * cfg.weight_decay * *x;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// One split encoded by the frozen backbone, with gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSplit {
    pub batch: EncodedBatch,
    pub labels: Vec<usize>,
}

impl EncodedSplit {
    pub fn encode(backbone: &Backbone, template: &HardTemplate, examples: &[Example]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Contract("cannot encode an empty split".into()));
        }
        let cfg = &backbone.config;
        let mut parts = Vec::new();
        for chunk in examples.chunks(EVAL_CHUNK) {
            let tokenized = chunk
                .iter()
                .map(|ex| tokenize(&ex.tokens, cfg.max_seq_len, template, cfg.mask_token_id, cfg.pad_token_id))
                .collect::<Result<Vec<_>>>()?;
            parts.push(backbone.encode(&tokenized)?);
        }
        let batch = concat_batches(&parts);
        Ok(EncodedSplit {
            batch,
            labels: examples.iter().map(|e| e.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn concat_batches(parts: &[EncodedBatch]) -> EncodedBatch {
    let shape = parts[0].states.shape();
    let (o, d) = (shape[1], shape[2]);
    let mut states = Vec::new();
    let mut valid = Vec::new();
    let mut masks = Vec::new();
    for p in parts {
        states.extend_from_slice(p.states.data());
        valid.extend_from_slice(&p.valid);
        masks.extend_from_slice(&p.mask_positions);
    }
    let b = masks.len();
    EncodedBatch {
        states: Tensor::new(vec![b, o, d], states).expect("consistent parts"),
        valid,
        mask_positions: masks,
    }
}

/// A task with every split pushed through the frozen backbone under one
/// template. Shared read-only across runs using that template.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTask {
    pub template: HardTemplate,
    pub train: EncodedSplit,
    pub dev: EncodedSplit,
    pub test: EncodedSplit,
}

impl EncodedTask {
    pub fn new(backbone: &Backbone, task: &FewShotTask, template: &HardTemplate) -> Result<Self> {
        if task.train.is_empty() {
            return Err(Error::Contract("training split is empty".into()));
        }
        Ok(EncodedTask {
            template: template.clone(),
            train: EncodedSplit::encode(backbone, template, &task.train)?,
            dev: EncodedSplit::encode(backbone, template, &task.dev)?,
            test: EncodedSplit::encode(backbone, template, &task.test)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_total: f64,
    pub l_mlm: f64,
    pub l_cl: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the highest dev accuracy (earliest on ties); `None` when
    /// no epoch ran.
    pub selected_epoch: Option<usize>,
    pub test_accuracy: f64,
    /// Not serialized, so the JSON of identical runs is identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunHistory {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fraction of examples whose argmax label-word logit equals the gold label.
pub fn evaluate(state: &ModelState, split: &EncodedSplit, variant: Variant) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty set".into()));
    }
    let mut correct = 0usize;
    let n = split.len();
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let preds = state.predict(&split.batch.select(chunk), variant)?;
        correct += preds
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == split.labels[i])
            .count();
    }
    Ok(correct as f64 / n as f64)
}

/// Pooled prompt states `[n, d]` for every example of a split.
pub fn pooled_embeddings(state: &ModelState, split: &EncodedSplit, variant: Variant) -> Result<Tensor> {
    if !variant.has_contrastive_head() {
        return Err(Error::Contract(format!("variant {variant} has no pooled prompt states")));
    }
    let idx: Vec<usize> = (0..split.len()).collect();
    let mut data = Vec::new();
    let mut d = 0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (_, _, pooled) = state.forward(&split.batch.select(chunk), variant)?;
        let pooled = pooled.expect("contrastive variants produce pooled states");
        d = pooled.shape()[1];
        data.extend_from_slice(pooled.data());
    }
    Tensor::new(vec![split.len(), d], data)
}

/// Loss values of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_total: f64,
    pub l_mlm: f64,
    pub l_cl: f64,
}

/// Records the total loss of one mini-batch on `tape` and returns
/// `(total, mlm, contrastive)`. The contrastive term is absent for variants
/// without a contrastive head and for batches with fewer than two examples
/// or a single class.
pub fn total_loss_graph(
    state: &ModelState,
    tape: &mut Tape,
    vars: &TrainableVars,
    batch: &EncodedBatch,
    labels: &[usize],
    variant: Variant,
) -> Result<(Var, Var, Option<Var>)> {
    let cfg = state.config();
    let out = state.forward_on(tape, vars, batch, variant)?;
    let l_mlm = mlm_loss_on(tape, out.vocab_logits, labels, &cfg.label_word_ids)?;
    let l_cl = match out.pooled {
        Some(pooled) if labels.len() >= 2 && labels.iter().any(|&y| y != labels[0]) => {
            Some(supcon_loss_on(tape, pooled, labels, cfg.temperature)?)
        }
        _ => None,
    };
    let total = total_loss_on(tape, l_mlm, l_cl)?;
    Ok((total, l_mlm, l_cl))
}

/// Forward and backward for one mini-batch. Returns the losses and the
/// gradients of every trainable tensor, in [`ModelState::trainable`] order.
pub fn compute_gradients(
    state: &ModelState,
    batch: &EncodedBatch,
    labels: &[usize],
    variant: Variant,
) -> Result<(StepLosses, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = state.register(&mut tape, true);
    let (total, l_mlm, l_cl) = total_loss_graph(state, &mut tape, &vars, batch, labels, variant)?;
    tape.backward(total)?;
    let losses = StepLosses {
        l_total: tape.value(total).item()?,
        l_mlm: tape.value(l_mlm).item()?,
        l_cl: match l_cl {
            Some(v) => tape.value(v).item()?,
            None => 0.0,
        },
    };
    let grads = vars
        .all()
        .into_iter()
        .map(|v| tape.grad(v).expect("trainable leaves carry gradients").to_vec())
        .collect();
    Ok((losses, grads))
}

/// Compares analytic gradients of the total loss with respect to every
/// trainable entry against central finite differences with step `h`.
pub fn grad_check_total_loss(
    state: &ModelState,
    batch: &EncodedBatch,
    labels: &[usize],
    variant: Variant,
    h: f64,
) -> Result<GradCheckReport> {
    let params: Vec<Tensor> = state.trainable().into_iter().cloned().collect();
    grad_check(
        |tape, vars| {
            let vars = TrainableVars::from_slice(vars)?;
            Ok(total_loss_graph(state, tape, &vars, batch, labels, variant)?.0)
        },
        &params,
        h,
    )
}

/// Trains the semantic encoder, decoder and soft prompt of `state` and
/// returns the dev-best state with its history. The backbone is shared and
/// never written.
pub fn train(mut state: ModelState, data: &EncodedTask, cfg: &TrainConfig) -> Result<(ModelState, RunHistory)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let started = Instant::now();
    let names = crate::model::trainable_names();
    let sizes: Vec<usize> = state.trainable().iter().map(|t| t.numel()).collect();
    let mut adam = AdamWState::new(&sizes);
    let mut adam_cfg = AdamWConfig::from(cfg);
    let mut shuffle_rng = rng::stream(cfg.seed, tags::SHUFFLE);

    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelState)> = None;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut sum_total, mut sum_mlm, mut sum_cl) = (0.0, 0.0, 0.0);
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.train.batch.select(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.train.labels[i]).collect();
            let (losses, grads) = compute_gradients(&state, &batch, &labels, cfg.variant)?;
            sum_total += losses.l_total;
            sum_mlm += losses.l_mlm;
            sum_cl += losses.l_cl;
            adam_cfg.lr = cfg.lr_schedule.rate(cfg.learning_rate, step, total_steps);
            let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            let mut params: Vec<&mut [f64]> = state.trainable_mut().into_iter().map(|t| t.data_mut()).collect();
            adamw_step(&mut params, &grad_refs, &mut adam, &adam_cfg, &names)?;
            step += 1;
        }
        let batches = steps_per_epoch as f64;
        let dev_accuracy = evaluate(&state, &data.dev, cfg.variant)?;
        epochs.push(EpochRecord {
            epoch,
            l_total: sum_total / batches,
            l_mlm: sum_mlm / batches,
            l_cl: sum_cl / batches,
            dev_accuracy,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| dev_accuracy > *acc) {
            best = Some((epoch, dev_accuracy, state.clone()));
        }
    }

    let (selected_epoch, selected) = match best {
        Some((epoch, _, s)) => (Some(epoch), s),
        None => (None, state),
    };
    let test_accuracy = evaluate(&selected, &data.test, cfg.variant)?;
    let history = RunHistory {
        epochs,
        selected_epoch,
        test_accuracy,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((selected, history))
}

/// Builds a fresh state for `cfg`, encodes the task under the variant's
/// effective template and trains.
pub fn train_on_task(
    backbone: std::sync::Arc<Backbone>,
    task: &FewShotTask,
    template: &HardTemplate,
    cfg: &TrainConfig,
) -> Result<(ModelState, RunHistory)> {
    let effective = cfg.variant.effective_template(template, backbone.config.mask_token_id);
    let data = EncodedTask::new(&backbone, task, &effective)?;
    let state = ModelState::new(backbone, cfg.seed, cfg.soft_init, task)?;
    train(state, &data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, 0.1, -4.0];
        let mut st = AdamWState::new(&[3]);
        adamw_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut st, &cfg(0.0, 0.1), &[]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_moves_by_lr_per_step() {
        let mut p = vec![0.0, 0.0];
        let g = vec![0.7, -3.0];
        let mut st = AdamWState::new(&[2]);
        let c = cfg(1e-3, 0.0);
        let mut prev = p.clone();
        for _ in 0..2000 {
            prev.clone_from(&p);
            adamw_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut st, &c, &[]).unwrap();
        }
        assert!(((p[0] - prev[0]) + 1e-3).abs() < 1e-9);
        assert!(((p[1] - prev[1]) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn single_step_matches_hand_recurrence() {
        // minimize 0.5 * 3 x^2 from x = 2
        let x0: f64 = 2.0;
        let g = 3.0 * x0;
        let (lr, wd, b1, b2, eps) = (0.01, 0.1, 0.9, 0.999, 1e-8);
        let decayed = x0 - lr * wd * x0;
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let want = decayed - lr * (m / (1.0 - b1)) / ((v / (1.0 - b2)).sqrt() + eps);

        let mut p = vec![x0];
        let mut st = AdamWState::new(&[1]);
        adamw_step(&mut [p.as_mut_slice()], &[[g].as_slice()], &mut st, &cfg(lr, wd), &[]).unwrap();
        assert!((p[0] - want).abs() < 1e-12);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn nan_gradient_names_group() {
        let mut p = vec![0.0];
        let mut st = AdamWState::new(&[1]);
        let err = adamw_step(
            &mut [p.as_mut_slice()],
            &[[f64::NAN].as_slice()],
            &mut st,
            &cfg(1e-3, 0.0),
            &["semantic.wq".to_string()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("semantic.wq")));
    }

    #[test]
    fn linear_schedule_interpolates() {
        let s = LrSchedule::Linear { end_factor: 0.0 };
        assert_eq!(s.rate(1.0, 0, 11), 1.0);
        assert!((s.rate(1.0, 5, 11) - 0.5).abs() < 1e-15);
        assert_eq!(s.rate(1.0, 10, 11), 0.0);
        assert_eq!(LrSchedule::Constant.rate(0.3, 7, 11), 0.3);
    }
}
