//! Training objectives: supervised contrastive loss over pooled prompt
//! states, verbalizer MLM loss at the mask slot, and their unweighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Guard for zero vectors in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_cl: f64,
    pub l_mlm: f64,
    pub l_total: f64,
}

/// `u·v / (max(‖u‖, eps) · max(‖v‖, eps))` on the tape. Both inputs are 1-D.
pub fn cosine_sim_on(tape: &mut Tape, u: Var, v: Var, eps: f64) -> Result<Var> {
    let d = tape.shape(u).to_vec();
    if d.len() != 1 || tape.shape(v) != d.as_slice() {
        return Err(Error::Shape(format!(
            "cosine_sim needs two equal-length vectors, got {d:?} and {:?}",
            tape.shape(v)
        )));
    }
    let u2 = tape.reshape(u, &[1, d[0]])?;
    let v2 = tape.reshape(v, &[1, d[0]])?;
    let un = tape.l2_normalize_rows(u2, eps)?;
    let vn = tape.l2_normalize_rows(v2, eps)?;
    let prod = tape.mul(un, vn)?;
    tape.sum(prod)
}

pub fn cosine_sim(u: &Tensor, v: &Tensor, eps: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(u.clone()), tape.constant(v.clone()));
    let s = cosine_sim_on(&mut tape, a, b, eps)?;
    tape.value(s).item()
}

/// Positive-pair weights `1 / (b · |P(i)|)` at `(i, j)` for `j ∈ P(i)`,
/// where `P(i)` are the other batch entries sharing `i`'s label.
fn positive_weights(labels: &[usize]) -> Vec<f64> {
    let b = labels.len();
    let mut w = vec![0.0; b * b];
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let share = 1.0 / (b as f64 * positives.len() as f64);
        for j in positives {
            w[i * b + j] = share;
        }
    }
    w
}

/// Supervised contrastive loss over `pooled[b, d]`.
///
/// For anchor `i`, each positive `j` contributes
/// `-log(exp(s_ij/τ) / Σ_{k≠i} exp(s_ik/τ))`, averaged over the positives
/// and then over all `b` anchors. The self pair is excluded from both the
/// positives and the normalizer; anchors without positives contribute 0.
pub fn supcon_loss_on(tape: &mut Tape, pooled: Var, labels: &[usize], temperature: f64) -> Result<Var> {
    let shape = tape.shape(pooled).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape(format!(
            "supcon_loss: embeddings {shape:?} with {} labels",
            labels.len()
        )));
    }
    let b = shape[0];
    if b < 2 {
        return Err(Error::Contract(format!("supcon_loss needs b >= 2, got {b}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!("temperature must be > 0, got {temperature}")));
    }
    let normed = tape.l2_normalize_rows(pooled, COSINE_EPS)?;
    let normed_t = tape.transpose(normed)?;
    let sims = tape.matmul(normed, normed_t)?;
    let logits = tape.scale(sims, 1.0 / temperature)?;
    let off_diagonal: Vec<bool> = (0..b * b).map(|k| k / b != k % b).collect();
    let log_prob = tape.masked_log_softmax_rows(logits, &off_diagonal)?;
    let total = tape.weighted_sum(log_prob, &positive_weights(labels))?;
    tape.scale(total, -1.0)
}

pub fn supcon_loss(pooled: &Tensor, labels: &[usize], temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pooled.clone());
    let l = supcon_loss_on(&mut tape, p, labels, temperature)?;
    tape.value(l).item()
}

/// Mean negative log-likelihood of each example's label word under the
/// full-vocabulary softmax of `vocab_logits[b, V]`.
pub fn mlm_loss_on(tape: &mut Tape, vocab_logits: Var, labels: &[usize], label_word_ids: &[usize]) -> Result<Var> {
    let shape = tape.shape(vocab_logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape(format!(
            "mlm_loss: logits {shape:?} with {} labels",
            labels.len()
        )));
    }
    let targets = labels
        .iter()
        .map(|&y| {
            label_word_ids
                .get(y)
                .copied()
                .filter(|&w| w < shape[1])
                .ok_or_else(|| Error::Contract(format!("label {y} has no valid label word")))
        })
        .collect::<Result<Vec<_>>>()?;
    let log_prob = tape.log_softmax_rows(vocab_logits)?;
    let picked = tape.pick(log_prob, &targets)?;
    let mean = tape.mean(picked)?;
    tape.scale(mean, -1.0)
}

pub fn mlm_loss(vocab_logits: &Tensor, labels: &[usize], label_word_ids: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(vocab_logits.clone());
    let l = mlm_loss_on(&mut tape, z, labels, label_word_ids)?;
    tape.value(l).item()
}

/// `l_mlm + l_cl`, or `l_mlm` alone when there is no contrastive head.
pub fn total_loss_on(tape: &mut Tape, l_mlm: Var, l_cl: Option<Var>) -> Result<Var> {
    match l_cl {
        Some(cl) => tape.add(l_mlm, cl),
        None => Ok(l_mlm),
    }
}

pub fn total_loss(l_mlm: f64, l_cl: f64) -> LossBundle {
    LossBundle {
        l_cl,
        l_mlm,
        l_total: l_mlm + l_cl,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        let u = Tensor::new(vec![3], vec![1.0, 2.0, -0.5]).unwrap();
        assert!((cosine_sim(&u, &u, COSINE_EPS).unwrap() - 1.0).abs() < 1e-15);
        let a = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.0, 3.0]).unwrap();
        assert_eq!(cosine_sim(&a, &b, COSINE_EPS).unwrap(), 0.0);
        let z = Tensor::zeros(&[2]);
        assert_eq!(cosine_sim(&z, &a, COSINE_EPS).unwrap(), 0.0);
    }

    #[test]
    fn supcon_without_positives_is_zero() {
        let h = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(supcon_loss(&h, &[0, 1], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn supcon_identical_embeddings_one_class_is_ln3() {
        let h = Tensor::new(vec![4, 2], vec![0.3, -1.0, 0.3, -1.0, 0.3, -1.0, 0.3, -1.0]).unwrap();
        let l = supcon_loss(&h, &[1, 1, 1, 1], 0.1).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn supcon_contract_errors() {
        let one = Tensor::ones(&[1, 3]);
        assert!(matches!(supcon_loss(&one, &[0], 0.1), Err(Error::Contract(_))));
        let two = Tensor::ones(&[2, 3]);
        assert!(matches!(supcon_loss(&two, &[0, 0], 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn mlm_uniform_and_saturated() {
        let z = Tensor::zeros(&[3, 128]);
        let l = mlm_loss(&z, &[0, 1, 0], &[2, 3]).unwrap();
        assert!((l - 128f64.ln()).abs() < 1e-12);
        let mut z = Tensor::zeros(&[1, 128]);
        z.data_mut()[3] = 30.0;
        assert!(mlm_loss(&z, &[1], &[2, 3]).unwrap() < 1e-10);
    }

    #[test]
    fn mlm_rejects_unknown_label() {
        let z = Tensor::zeros(&[1, 8]);
        assert!(matches!(mlm_loss(&z, &[2], &[2, 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn total_is_plain_sum() {
        assert_eq!(total_loss(2.0, 3.0).l_total, 5.0);
        assert_eq!(total_loss(1.25, 0.0).l_total, 1.25);
    }
}
