//! Retrieval-based dense scene understanding.
//!
//! A memory bank of L2-normalized patch features paired with patch-level
//! labels is built from an annotated prompt set. New feature grids are
//! decoded by cross-attending each patch over its nearest bank entries and
//! blending their labels; the blended patch predictions are upsampled
//! bilinearly to pixel resolution.
//!
//! The crate is `no_std` (with `alloc`). File formats, timing and the
//! command-line front end live in the `nnscene` companion crate.
//!
//! Modules:
//! - [`feature`]: feature grids, pixel labels, patch-label construction.
//! - [`synth`]: deterministic synthetic scenes and clustered key sets.
//! - [`bank`]: memory-bank sampling and construction.
//! - [`index`]: exact and partitioned/block-quantized cosine search.
//! - [`decode`]: cross-attention label decoding.
//! - [`upsample`]: half-pixel bilinear upsampling and finalization.
//! - [`metrics`]: mean IoU and depth RMSE.
//! - [`pretrain`]: contextual pretraining, attention pooling and losses
//!   on a small reverse-mode tape, plus a toy trainer.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bank;
pub mod decode;
mod error;
pub mod feature;
pub mod index;
pub mod math;
pub mod metrics;
pub mod pretrain;
pub mod rng;
pub mod synth;
pub mod upsample;

pub use error::{Error, Result};
pub use feature::{FeatureGrid, FeatureSet, LabelGrid, PatchLabel, PixelLabels, Task};

/// Side length in pixels of the square patch behind one feature-grid cell.
pub const PATCH_SIZE: usize = 16;

/// Pixels per patch.
pub const PATCH_PIXELS: usize = PATCH_SIZE * PATCH_SIZE;

/// Class id marking pixels excluded from training and evaluation.
pub const IGNORE_ID: u16 = u16::MAX;
