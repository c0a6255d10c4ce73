use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Backbone;
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::taskgen::FewShotTask;
use crate::tensor::Tensor;

/// Soft-prompt initialization strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftInit {
    /// i.i.d. `N(0, 0.02^2)` entries.
    Random,
    /// Label-word embeddings, cycled to the prompt length.
    Label,
    /// Embeddings of tokens drawn uniformly from the vocabulary.
    Vocab,
    /// Embeddings of tokens drawn from the 1000 most frequent corpus tokens.
    Top1k,
    /// Embeddings of tokens drawn from the task's training split.
    Task,
}

pub const RANDOM_INIT_STD: f64 = 0.02;

impl SoftInit {
    pub const ALL: [SoftInit; 5] = [
        SoftInit::Random,
        SoftInit::Label,
        SoftInit::Vocab,
        SoftInit::Top1k,
        SoftInit::Task,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SoftInit::Random => "random",
            SoftInit::Label => "label",
            SoftInit::Vocab => "vocab",
            SoftInit::Top1k => "top1k",
            SoftInit::Task => "task",
        }
    }
}

impl std::str::FromStr for SoftInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "");
        SoftInit::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Contract(format!("unknown soft-prompt init {s:?}")))
    }
}

impl std::fmt::Display for SoftInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn rows_of(backbone: &Backbone, ids: &[usize]) -> Tensor {
    let d = backbone.config.embed_dim;
    let mut data = Vec::with_capacity(ids.len() * d);
    for &i in ids {
        data.extend_from_slice(backbone.token_embedding.row(i));
    }
    Tensor::new(vec![ids.len(), d], data).expect("prompt rows")
}

/// Initial soft prompt `[l, d]` for `strategy`. All sampling is driven by
/// `seed`.
pub fn init_soft_prompt(strategy: SoftInit, backbone: &Backbone, task: &FewShotTask, seed: u64) -> Result<Tensor> {
    let cfg = &backbone.config;
    let l = cfg.prompt_len;
    let mut rng = rng::stream(seed, tags::SOFT_PROMPT);
    let ids: Vec<usize> = match strategy {
        SoftInit::Random => return Ok(Tensor::randn(&[l, cfg.embed_dim], RANDOM_INIT_STD, &mut rng)),
        SoftInit::Label => (0..l).map(|r| cfg.label_word_ids[r % cfg.label_word_ids.len()]).collect(),
        SoftInit::Vocab => (0..l).map(|_| rng.random_range(0..cfg.vocab_size)).collect(),
        SoftInit::Top1k => {
            let ranked = task.tokens_by_frequency();
            let top = &ranked[..ranked.len().min(1000).min(cfg.vocab_size)];
            if top.is_empty() {
                return Err(Error::Contract("task corpus is empty".into()));
            }
            (0..l).map(|_| *top.choose(&mut rng).expect("nonempty")).collect()
        }
        SoftInit::Task => {
            let pool = task.train_tokens();
            if pool.is_empty() {
                return Err(Error::Contract("task strategy needs a nonempty training split".into()));
            }
            (0..l).map(|_| *pool.choose(&mut rng).expect("nonempty")).collect()
        }
    };
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Vocabulary {
            id: bad,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(rows_of(backbone, &ids))
}
