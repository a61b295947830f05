//! Training-time mechanisms at desk scale.
//!
//! A linear patch encoder stands in for a vision transformer. Downstream of
//! it each feature is contextualized against a FIFO memory of image-level
//! keys, the grid is attention-pooled, projected, and trained with a
//! symmetric InfoNCE loss against an EMA target network, optionally plus a
//! retrieval-based cross-entropy over labeled memory. Everything runs in
//! `f64` on a small reverse-mode [`tape::Tape`] so gradients can be checked
//! against finite differences.

use alloc::format;

use crate::{Error, Result};

pub mod memory;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use memory::{MemorySnapshot, PretrainBank};
pub use ops::PoolingMode;
pub use params::{ema_update, ModelParams, ModelShape};
pub use tensor::Matrix;
pub use trainer::{
    toy_train_step, LossBreakdown, PretrainState, ToyBatch, ToyConfig, ToyData, TrainConfig,
};

/// Default memory length of the pretraining bank.
pub const DEFAULT_MEMORY_SIZE: usize = 153_600;

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the memory read-out in contextualization.
    pub lambda: f64,
    /// Contrastive temperature; projections are rescaled to norm `1/√τ`.
    pub tau: f64,
    /// Weight of each supervised cross-entropy term.
    pub alpha: f64,
    pub ema_decay: f64,
    pub pooling: PoolingMode,
    /// Temperature of the cosine cross-attention over memory.
    pub beta_p: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.2,
            tau: 0.1,
            alpha: 0.05,
            ema_decay: 0.99,
            pooling: PoolingMode::Qkv,
            beta_p: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("lambda", self.lambda)?;
        unit("ema_decay", self.ema_decay)?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha = {} must be non-negative", self.alpha)));
        }
        if !(self.beta_p > 0.0 && self.beta_p.is_finite()) {
            return Err(Error::config(format!("beta_p = {} must be positive", self.beta_p)));
        }
        Ok(())
    }
}
