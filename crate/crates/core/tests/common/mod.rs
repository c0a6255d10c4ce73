#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stablept::model::{Backbone, EncodedBatch, LayerParams, ModelConfig, ModelState, SoftInit};
use stablept::taskgen::{generate_task, HardTemplate};
use stablept::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config(d: usize, ffn: usize, l: usize, o: usize, backbone_seed: u64) -> ModelConfig {
    ModelConfig {
        embed_dim: d,
        ffn_dim: ffn,
        prompt_len: l,
        max_seq_len: o,
        backbone_seed,
        ..ModelConfig::default()
    }
}

/// Layer with fan-in weights and gains/biases moved off their identity
/// values so that every parameter has a generic gradient.
pub fn generic_layer<R: Rng>(d: usize, ffn: usize, rng: &mut R) -> LayerParams {
    let mut p = LayerParams::init(d, ffn, rng);
    for t in [&mut p.ln1_gain, &mut p.ln2_gain] {
        let noise = Tensor::randn(&[d], 0.1, rng);
        for (g, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *g += n;
        }
    }
    p.bo = Tensor::randn(&[d], 0.1, rng);
    p.ln1_bias = Tensor::randn(&[d], 0.1, rng);
    p.ln2_bias = Tensor::randn(&[d], 0.1, rng);
    p.b1 = Tensor::randn(&[ffn], 0.1, rng);
    p.b2 = Tensor::randn(&[d], 0.1, rng);
    p
}

/// Random inputs of length `min_len..=max_len` over the non-special ids.
pub fn random_inputs<R: Rng>(b: usize, min_len: usize, max_len: usize, vocab: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..b)
        .map(|_| {
            let n = rng.random_range(min_len..=max_len);
            (0..n).map(|_| rng.random_range(2..vocab)).collect()
        })
        .collect()
}

/// A state at a generic random point plus a padded micro-batch.
pub struct Point {
    pub state: ModelState,
    pub batch: EncodedBatch,
    pub labels: Vec<usize>,
}

pub fn random_point(seed: u64, b: usize, o: usize, d: usize, l: usize) -> Point {
    let ffn = 2 * d;
    let cfg = small_config(d, ffn, l, o, 1000 + seed);
    let backbone = Arc::new(Backbone::new(&cfg).unwrap());
    let mut r = rng(seed);
    let template = HardTemplate::new(0, vec![5, 1, 6], cfg.mask_token_id, cfg.pad_token_id).unwrap();
    let inputs = random_inputs(b, o - template.len() - 3, o - template.len(), cfg.vocab_size, &mut r);
    let batch = backbone.encode_text(&template, &inputs).unwrap();
    let task = generate_task(2, 0.0, seed).unwrap();
    let mut state = ModelState::new(backbone, seed, SoftInit::Random, &task).unwrap();
    state.semantic = generic_layer(d, ffn, &mut r);
    state.decoder = generic_layer(d, ffn, &mut r);
    state.soft_prompt = Tensor::randn(&[l, d], 1.0, &mut r);
    let labels = (0..b).map(|i| i % 2).collect();
    Point { state, batch, labels }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
