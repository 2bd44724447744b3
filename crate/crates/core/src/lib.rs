//! Desk-scale training engine and experiment harness for GRPO and
//! AMIR-GRPO: a group-relative clipped-surrogate objective, optionally
//! augmented with an implicit preference regularizer mined from intra-group
//! reward rankings, exercised on tiny autoregressive policies over
//! synthetic verifiable tasks.
//!
//! Modules:
//! - [`diffmath`]: dense f64 tensors, reverse-mode differentiation, AdamW
//! - [`policy`]: tiny causal sequence model, sampling, checkpoints
//! - [`tasks`]: verifiable task families and the reward stack
//! - [`grpo`]: advantage normalization, clipped surrogate, k3 KL, the
//!   sequence-level ratio variant
//! - [`amir`]: pair mining, preference logit and loss, adaptive lambda
//! - [`trainer`]: the training loop, evaluation, configuration
//! - [`evalkit`]: Pass@k, perplexity, margins, coverage, failure density
//! - [`logs`]: on-disk artifact schemas

pub mod amir;
pub mod diffmath;
pub mod error;
pub mod evalkit;
pub mod grpo;
pub mod logs;
pub mod policy;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
