//! Synthetic few-shot classification tasks and hard-prompt templates.
//!
//! Tokens are bare integer ids. The standard vocabulary of 128 ids is laid
//! out as:
//!
//! | ids      | role                          |
//! |----------|-------------------------------|
//! | 0        | pad                           |
//! | 1        | mask                          |
//! | 2, 3     | label words (class 0, 1)      |
//! | 4..24    | template paraphrase pool      |
//! | 24..27   | class-0 signal tokens         |
//! | 27..30   | class-1 signal tokens         |
//! | 30..42   | distractors                   |
//! | 42..128  | unused by generated text      |

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tags};

pub const TRAIN_SIZE: usize = 64;
pub const DEV_SIZE: usize = 64;
pub const TEST_SIZE: usize = 512;
pub const MIN_INPUT_LEN: usize = 8;
pub const MAX_INPUT_LEN: usize = 20;
pub const MIN_TEMPLATE_LEN: usize = 4;
pub const MAX_TEMPLATE_LEN: usize = 10;
const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: usize,
    pub pad_token_id: usize,
    pub mask_token_id: usize,
    pub label_word_ids: Vec<usize>,
    pub template_pool: Range<usize>,
    pub class_sets: Vec<Range<usize>>,
    pub distractors: Range<usize>,
}

impl Vocabulary {
    pub fn standard() -> Self {
        Vocabulary {
            size: 128,
            pad_token_id: 0,
            mask_token_id: 1,
            label_word_ids: vec![2, 3],
            template_pool: 4..24,
            class_sets: vec![24..27, 27..30],
            distractors: 30..42,
        }
    }

    /// Class whose signal set contains `token`, if any.
    pub fn signal_class(&self, token: usize) -> Option<usize> {
        self.class_sets.iter().position(|r| r.contains(&token))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotTask {
    pub vocab: Vocabulary,
    pub num_classes: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

/// Parameters that regenerate a task exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub schema_version: u32,
    pub num_classes: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub vocab_size: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    split: String,
    tokens: Vec<usize>,
    label: usize,
}

fn sample_example<R: Rng>(vocab: &Vocabulary, label: usize, noise_level: f64, rng: &mut R) -> Example {
    let len = rng.random_range(MIN_INPUT_LEN..=MAX_INPUT_LEN);
    let k = rng.random_range(2..=4);
    let signal_class = if rng.random::<f64>() < noise_level {
        let others: Vec<usize> = (0..vocab.class_sets.len()).filter(|&c| c != label).collect();
        *others.choose(rng).expect("at least two classes")
    } else {
        label
    };
    let set = vocab.class_sets[signal_class].clone();
    let mut tokens: Vec<usize> = (0..k).map(|_| rng.random_range(set.clone())).collect();
    tokens.extend((k..len).map(|_| rng.random_range(vocab.distractors.clone())));
    tokens.shuffle(rng);
    Example { tokens, label }
}

/// Generates a balanced task: 64 train and 64 dev examples with 32 per
/// class, and 512 test examples with 256 per class. No token sequence occurs
/// twice across the three splits.
pub fn generate_task(num_classes: usize, noise_level: f64, seed: u64) -> Result<FewShotTask> {
    if num_classes != 2 {
        return Err(Error::Contract(format!(
            "only binary tasks are supported, got {num_classes} classes"
        )));
    }
    if !(0.0..0.5).contains(&noise_level) {
        return Err(Error::Contract(format!(
            "noise_level must lie in [0, 0.5), got {noise_level}"
        )));
    }
    let vocab = Vocabulary::standard();
    let mut rng = rng::stream(seed, tags::TASK_SPLITS);
    let mut seen = HashSet::new();
    let mut split = |size: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let per_class = size / num_classes;
        let mut out = Vec::with_capacity(size);
        for label in 0..num_classes {
            let mut made = 0;
            while made < per_class {
                let ex = sample_example(&vocab, label, noise_level, rng);
                if seen.insert(ex.tokens.clone()) {
                    out.push(ex);
                    made += 1;
                }
            }
        }
        out.shuffle(rng);
        out
    };
    let train = split(TRAIN_SIZE, &mut rng);
    let dev = split(DEV_SIZE, &mut rng);
    let test = split(TEST_SIZE, &mut rng);
    Ok(FewShotTask {
        vocab,
        num_classes,
        noise_level,
        seed,
        train,
        dev,
        test,
    })
}

impl FewShotTask {
    pub fn label_word_ids(&self) -> &[usize] {
        &self.vocab.label_word_ids
    }

    pub fn manifest(&self) -> TaskManifest {
        TaskManifest {
            schema_version: SCHEMA_VERSION,
            num_classes: self.num_classes,
            noise_level: self.noise_level,
            seed: self.seed,
            vocab_size: self.vocab.size,
            train_size: self.train.len(),
            dev_size: self.dev.len(),
            test_size: self.test.len(),
        }
    }

    pub fn from_manifest(manifest: &TaskManifest) -> Result<Self> {
        generate_task(manifest.num_classes, manifest.noise_level, manifest.seed)
    }

    /// Tokens of the whole corpus ordered by descending frequency, ties by
    /// id. Only tokens that occur are listed.
    pub fn tokens_by_frequency(&self) -> Vec<usize> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for ex in self.train.iter().chain(&self.dev).chain(&self.test) {
            for &t in &ex.tokens {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.into_iter().map(|(t, _)| t).collect()
    }

    /// Distinct tokens of the training split, ascending.
    pub fn train_tokens(&self) -> Vec<usize> {
        let set: std::collections::BTreeSet<usize> =
            self.train.iter().flat_map(|e| e.tokens.iter().copied()).collect();
        set.into_iter().collect()
    }

    /// Writes one JSON object per example: `{"split", "tokens", "label"}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (name, split) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            for ex in split {
                let rec = JsonlRecord {
                    split: name.to_string(),
                    tokens: ex.tokens.clone(),
                    label: ex.label,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Reads the `(train, dev, test)` splits written by [`FewShotTask::write_jsonl`].
pub fn read_jsonl(path: &Path) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line)?;
        let ex = Example {
            tokens: rec.tokens,
            label: rec.label,
        };
        match rec.split.as_str() {
            "train" => train.push(ex),
            "dev" => dev.push(ex),
            "test" => test.push(ex),
            other => return Err(Error::Serde(format!("unknown split {other:?}"))),
        }
    }
    Ok((train, dev, test))
}

/// A discrete prompt with exactly one mask slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardTemplate {
    pub id: usize,
    pub tokens: Vec<usize>,
}

impl HardTemplate {
    pub fn new(id: usize, tokens: Vec<usize>, mask_token_id: usize, pad_token_id: usize) -> Result<Self> {
        let masks = tokens.iter().filter(|&&t| t == mask_token_id).count();
        if masks != 1 {
            return Err(Error::Template(format!(
                "template {id} has {masks} mask tokens, expected exactly one"
            )));
        }
        if tokens.contains(&pad_token_id) {
            return Err(Error::Template(format!("template {id} contains a pad token")));
        }
        Ok(HardTemplate { id, tokens })
    }

    /// The bare `[mask]` template used when hard prompts are ablated.
    pub fn bare_mask(mask_token_id: usize) -> Self {
        HardTemplate {
            id: usize::MAX,
            tokens: vec![mask_token_id],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `n` distinct templates over the paraphrase pool of the standard
/// vocabulary, 4 to 10 tokens long including the mask slot.
pub fn build_templates(n: usize, style_seed: u64) -> Vec<HardTemplate> {
    let vocab = Vocabulary::standard();
    let pool: Vec<usize> = vocab.template_pool.clone().collect();
    let mut rng = rng::stream(style_seed, tags::TEMPLATES);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(MIN_TEMPLATE_LEN..=MAX_TEMPLATE_LEN);
        let mut tokens: Vec<usize> = pool.choose_multiple(&mut rng, len - 1).copied().collect();
        let at = rng.random_range(0..len);
        tokens.insert(at, vocab.mask_token_id);
        if seen.insert(tokens.clone()) {
            let id = out.len();
            out.push(
                HardTemplate::new(id, tokens, vocab.mask_token_id, vocab.pad_token_id)
                    .expect("generated templates are well formed"),
            );
        }
    }
    out
}

/// `[template, input]` spliced, truncated and padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedInput {
    pub ids: Vec<usize>,
    pub mask_pos: usize,
    pub valid: Vec<bool>,
}

impl TokenizedInput {
    /// Non-pad prefix of the sequence.
    pub fn unpadded(&self) -> &[usize] {
        let n = self.valid.iter().filter(|&&v| v).count();
        &self.ids[..n]
    }
}

pub fn tokenize(
    raw: &[usize],
    max_len: usize,
    template: &HardTemplate,
    mask_token_id: usize,
    pad_token_id: usize,
) -> Result<TokenizedInput> {
    if template.len() > max_len {
        return Err(Error::Contract(format!(
            "template of length {} does not fit a sequence of length {max_len}",
            template.len()
        )));
    }
    let mut ids: Vec<usize> = template.tokens.clone();
    ids.extend(raw.iter().take(max_len - template.len()));
    let mask_pos = ids
        .iter()
        .position(|&t| t == mask_token_id)
        .ok_or_else(|| Error::Template(format!("template {} lost its mask slot", template.id)))?;
    if ids[mask_pos + 1..].contains(&mask_token_id) {
        return Err(Error::Template("sequence contains more than one mask token".into()));
    }
    let used = ids.len();
    ids.resize(max_len, pad_token_id);
    let valid = (0..max_len).map(|i| i < used).collect();
    Ok(TokenizedInput { ids, mask_pos, valid })
}
