use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layers::{LayerParams, LAYER_PARAM_NAMES};
use super::{Backbone, ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

/// Self-contained JSON checkpoint: config plus every parameter array,
/// frozen ones included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
}

fn named(name: String, t: &Tensor) -> NamedArray {
    NamedArray {
        name,
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    }
}

impl Checkpoint {
    pub fn from_state(state: &ModelState) -> Self {
        let mut params: Vec<NamedArray> = state
            .backbone
            .named_tensors()
            .into_iter()
            .map(|(n, t)| named(n, t))
            .collect();
        for (group, layer) in [("semantic", &state.semantic), ("decoder", &state.decoder)] {
            for (n, t) in LAYER_PARAM_NAMES.iter().zip(layer.tensors()) {
                params.push(named(format!("{group}.{n}"), t));
            }
        }
        params.push(named("soft_prompt".into(), &state.soft_prompt));
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: state.config().clone(),
            params,
        }
    }

    fn take(&self, name: &str) -> Result<Tensor> {
        let arr = self
            .params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Serde(format!("checkpoint is missing {name}")))?;
        Tensor::new(arr.shape.clone(), arr.data.clone())
    }

    fn layer(&self, prefix: &str) -> Result<LayerParams> {
        let t = |n: &str| self.take(&format!("{prefix}.{n}"));
        Ok(LayerParams {
            wq: t("wq")?,
            wk: t("wk")?,
            wv: t("wv")?,
            wo: t("wo")?,
            bo: t("bo")?,
            ln1_gain: t("ln1_gain")?,
            ln1_bias: t("ln1_bias")?,
            w1: t("w1")?,
            b1: t("b1")?,
            w2: t("w2")?,
            b2: t("b2")?,
            ln2_gain: t("ln2_gain")?,
            ln2_bias: t("ln2_bias")?,
        })
    }

    pub fn into_state(self) -> Result<ModelState> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint schema version {}",
                self.schema_version
            )));
        }
        self.config.validate()?;
        let layers = (0..self.config.frozen_depth)
            .map(|i| self.layer(&format!("backbone.layer{i}")))
            .collect::<Result<Vec<_>>>()?;
        let backbone = Backbone::from_parts(
            self.config.clone(),
            self.take("backbone.token_embedding")?,
            self.take("backbone.position_embedding")?,
            layers,
        );
        Ok(ModelState {
            backbone: Arc::new(backbone),
            semantic: self.layer("semantic")?,
            decoder: self.layer("decoder")?,
            soft_prompt: self.take("soft_prompt")?,
        })
    }
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_state(state))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.into_state()
}
