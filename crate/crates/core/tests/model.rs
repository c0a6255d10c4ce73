mod common;

use std::sync::Arc;

use rand::Rng;

use common::oracle;
use stablept::model::{
    attention, load_checkpoint, save_checkpoint, Backbone, ModelConfig, ModelState, SoftInit, Variant,
};
use stablept::taskgen::{build_templates, generate_task, HardTemplate};
use stablept::{Tape, Tensor};

struct Shape {
    b: usize,
    n: usize,
    d: usize,
    l: usize,
}

fn random_shape(seed: u64) -> Shape {
    let mut r = common::rng(seed);
    Shape {
        b: r.random_range(1..5),
        n: r.random_range(2..10),
        d: r.random_range(2..10),
        l: r.random_range(1..7),
    }
}

fn random_valid<R: Rng>(b: usize, n: usize, rng: &mut R) -> Vec<bool> {
    (0..b)
        .flat_map(|_| {
            let len = rng.random_range(1..=n);
            (0..n).map(move |j| j < len)
        })
        .collect()
}

/// Random state of width `d` whose trainable groups sit at a generic point.
fn state_for(s: &Shape, seed: u64) -> ModelState {
    let p = common::random_point(seed, 2, 8, s.d, s.l);
    p.state
}

#[test]
fn attention_core_matches_loop_oracle() {
    for seed in 0..50 {
        let s = random_shape(seed);
        let mut r = common::rng(seed + 1000);
        let m = r.random_range(1..6);
        let state = state_for(&s, seed);
        let q = Tensor::randn(&[s.b, m, s.d], 1.0, &mut r);
        let kv = Tensor::randn(&[s.b, s.n, s.d], 1.0, &mut r);
        let valid = random_valid(s.b, s.n, &mut r);
        for layer in [&state.semantic, &state.decoder] {
            let mut tape = Tape::new();
            let vars = layer.register(&mut tape, false);
            let (qv, kvv) = (tape.constant(q.clone()), tape.constant(kv.clone()));
            let out = attention(&mut tape, &vars, qv, kvv, &valid).unwrap();
            let want = oracle::attention(&q, &kv, &valid, layer);
            let err = common::max_abs_diff(tape.value(out.output).data(), &want);
            assert!(err < 1e-12, "seed {seed}: {err:e}");
        }
    }
}

#[test]
fn sem_encode_and_gen_decode_match_loop_oracle() {
    for seed in 0..50 {
        let s = random_shape(seed);
        let mut r = common::rng(seed + 2000);
        let state = state_for(&s, seed);
        let eps = state.config().layer_norm_eps;
        let e = Tensor::randn(&[s.b, s.n, s.d], 1.0, &mut r);
        let valid = random_valid(s.b, s.n, &mut r);

        let h = state.sem_encode(&e, &valid).unwrap();
        let want = oracle::layer(&e, &e, &valid, &state.semantic, eps);
        let err = common::max_abs_diff(h.data(), &want);
        assert!(err < 1e-12, "sem_encode seed {seed}: {err:e}");

        let sp = state.gen_decode(&h, &valid).unwrap();
        assert_eq!(sp.shape(), &[s.b, s.l, s.d]);
        let mut queries = Vec::new();
        for _ in 0..s.b {
            queries.extend_from_slice(state.soft_prompt.data());
        }
        let queries = Tensor::new(vec![s.b, s.l, s.d], queries).unwrap();
        let want = oracle::layer(&queries, &h, &valid, &state.decoder, eps);
        let err = common::max_abs_diff(sp.data(), &want);
        assert!(err < 1e-12, "gen_decode seed {seed}: {err:e}");
    }
}

#[test]
fn verbalizer_is_dot_product_with_label_embeddings() {
    let p = common::random_point(4, 3, 12, 8, 2);
    let h = p.state.sem_encode(&p.batch.states, &p.batch.valid).unwrap();
    let (label, vocab) = p.state.verbalize(&h, &p.batch.mask_positions).unwrap();
    let cfg = p.state.config();
    let d = cfg.embed_dim;
    for (i, &pos) in p.batch.mask_positions.iter().enumerate() {
        let row = &h.data()[(i * 12 + pos) * d..(i * 12 + pos + 1) * d];
        for v in 0..cfg.vocab_size {
            let want: f64 = row.iter().zip(p.state.backbone.token_embedding.row(v)).map(|(a, b)| a * b).sum();
            assert!((vocab.row(i)[v] - want).abs() < 1e-12);
        }
        for (c, &w) in cfg.label_word_ids.iter().enumerate() {
            assert_eq!(label.row(i)[c], vocab.row(i)[w]);
        }
    }
}

fn scramble(state: &ModelState, seed: u64, decoder_too: bool) -> ModelState {
    let mut r = common::rng(seed);
    let mut s = state.clone();
    let d = s.config().embed_dim;
    let ffn = s.config().ffn_dim;
    s.soft_prompt = Tensor::randn(s.soft_prompt.shape(), 3.0, &mut r);
    if decoder_too {
        s.decoder = common::generic_layer(d, ffn, &mut r);
    }
    s
}

#[test]
fn label_logits_never_read_the_soft_prompt() {
    for seed in 0..5 {
        let p = common::random_point(seed, 4, 12, 8, 3);
        let other = scramble(&p.state, seed + 77, true);
        let (a, _, pa) = p.state.forward(&p.batch, Variant::Full).unwrap();
        let (b, _, pb) = other.forward(&p.batch, Variant::Full).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(pa.unwrap().data(), pb.unwrap().data());

        let (a, _, _) = p.state.forward(&p.batch, Variant::WoGd).unwrap();
        let (b, _, _) = other.forward(&p.batch, Variant::WoGd).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }
}

#[test]
fn predictions_do_not_depend_on_batch_mates() {
    let cfg = ModelConfig::default();
    let backbone = Arc::new(Backbone::new(&cfg).unwrap());
    let task = generate_task(2, 0.0, 3).unwrap();
    let state = ModelState::new(backbone.clone(), 9, SoftInit::Random, &task).unwrap();
    let template = &build_templates(1, 11)[0];
    let inputs: Vec<Vec<usize>> = task.test[..6].iter().map(|e| e.tokens.clone()).collect();
    let together = backbone.encode_text(template, &inputs).unwrap();
    let (all, _, pooled_all) = state.forward(&together, Variant::Full).unwrap();
    for i in 0..inputs.len() {
        let alone = backbone.encode_text(template, &inputs[i..i + 1]).unwrap();
        assert_eq!(alone.states.data(), together.example(i).states.data());
        let (one, _, pooled) = state.forward(&alone, Variant::Full).unwrap();
        assert!(common::max_abs_diff(one.data(), all.row(i)) < 1e-12);
        assert!(common::max_abs_diff(pooled.unwrap().data(), pooled_all.as_ref().unwrap().row(i)) < 1e-12);
    }
}

#[test]
fn pad_positions_do_not_leak() {
    let cfg = ModelConfig::default();
    let backbone = Backbone::new(&cfg).unwrap();
    let template = HardTemplate::new(0, vec![5, 1, 6], 1, 0).unwrap();
    let short = backbone.encode_text(&template, &[vec![30, 31, 24]]).unwrap();
    let mut tweaked = short.clone();
    let d = cfg.embed_dim;
    let task = generate_task(2, 0.0, 1).unwrap();
    let state = ModelState::new(Arc::new(backbone), 2, SoftInit::Random, &task).unwrap();
    for j in 6..cfg.max_seq_len {
        for c in 0..d {
            tweaked.states.data_mut()[j * d + c] = 1e3 * (c as f64 + 1.0);
        }
    }
    for v in Variant::ALL {
        let (a, _, pa) = state.forward(&short, v).unwrap();
        let (b, _, pb) = state.forward(&tweaked, v).unwrap();
        assert_eq!(a.data(), b.data(), "{v}");
        assert_eq!(pa.map(|t| t.into_data()), pb.map(|t| t.into_data()), "{v}");
    }
}

#[test]
fn construction_is_deterministic() {
    let cfg = ModelConfig::default();
    let a = Backbone::new(&cfg).unwrap();
    let b = Backbone::new(&cfg).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let other = Backbone::new(&ModelConfig { backbone_seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.checksum(), other.checksum());
    let a = Arc::new(a);
    let task = generate_task(2, 0.0, 1).unwrap();
    for strategy in SoftInit::ALL {
        let s1 = ModelState::new(a.clone(), 5, strategy, &task).unwrap();
        let s2 = ModelState::new(a.clone(), 5, strategy, &task).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.soft_prompt.shape(), &[cfg.prompt_len, cfg.embed_dim]);
    }
}

#[test]
fn soft_prompt_strategies_use_token_embeddings() {
    let cfg = ModelConfig::default();
    let backbone = Arc::new(Backbone::new(&cfg).unwrap());
    let task = generate_task(2, 0.0, 1).unwrap();
    let label = ModelState::new(backbone.clone(), 5, SoftInit::Label, &task).unwrap();
    for r in 0..cfg.prompt_len {
        let w = cfg.label_word_ids[r % 2];
        assert_eq!(label.soft_prompt.row(r), backbone.token_embedding.row(w));
    }
    let train: std::collections::HashSet<usize> = task.train_tokens().into_iter().collect();
    let from_task = ModelState::new(backbone.clone(), 5, SoftInit::Task, &task).unwrap();
    for r in 0..cfg.prompt_len {
        assert!(train.iter().any(|&t| backbone.token_embedding.row(t) == from_task.soft_prompt.row(r)));
    }
    let random = ModelState::new(backbone, 5, SoftInit::Random, &task).unwrap();
    let sd = (random.soft_prompt.data().iter().map(|v| v * v).sum::<f64>() / random.soft_prompt.numel() as f64).sqrt();
    assert!((sd - 0.02).abs() < 0.005);
}

#[test]
fn forward_shapes() {
    let p = common::random_point(1, 3, 12, 8, 4);
    for v in Variant::ALL {
        let (label, vocab, pooled) = p.state.forward(&p.batch, v).unwrap();
        assert_eq!(label.shape(), &[3, 2]);
        assert_eq!(vocab.shape(), &[3, 128]);
        match pooled {
            Some(t) => assert_eq!(t.shape(), &[3, 8]),
            None => assert_eq!(v, Variant::WoCl),
        }
        assert_eq!(p.state.predict(&p.batch, v).unwrap().len(), 3);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let p = common::random_point(2, 2, 12, 8, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&p.state, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.backbone.checksum(), p.state.backbone.checksum());
    assert_eq!(back.semantic, p.state.semantic);
    assert_eq!(back.decoder, p.state.decoder);
    assert_eq!(back.soft_prompt, p.state.soft_prompt);
}

#[test]
fn bad_config_is_rejected() {
    let bad = ModelConfig { embed_dim: 0, ..ModelConfig::default() };
    assert_eq!(Backbone::new(&bad).unwrap_err().kind(), "contract");
    let bad = ModelConfig { temperature: 0.0, ..ModelConfig::default() };
    assert!(Backbone::new(&bad).is_err());
}
