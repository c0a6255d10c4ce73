//! Input-separated prompt tuning.
//!
//! A frozen backbone encodes `[template, input]`; a trainable semantic
//! encoder layer refines those states and feeds the verbalizer at the mask
//! slot. A soft prompt never touches the input: it queries the encoder states
//! through a cross-attention decoder layer, and its pooled output is trained
//! with a supervised contrastive loss. Classification therefore never reads
//! the soft prompt directly.
//!
//! Module map:
//! - [`tensor`]: dense tensors, reverse-mode tape, gradient checking
//! - [`model`]: backbone, semantic encoder, generative decoder, verbalizer
//! - [`objectives`]: supervised contrastive and verbalizer MLM losses
//! - [`trainer`]: AdamW, the training loop and evaluation
//! - [`taskgen`]: synthetic few-shot tasks and hard templates
//! - [`metrics`]: accuracy statistics and cluster-separability metrics
//! - [`harness`]: stability, ablation and prompt-length experiments

pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod taskgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
