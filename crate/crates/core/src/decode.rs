//! Cross-attention decoding of feature grids against a memory bank.
//!
//! For a query patch with retrieved neighbors `(cosᵢ, labelᵢ)`, attention
//! weights are `softmax(cosᵢ / β)` and the prediction is the weighted sum
//! of neighbor label rows. The softmax runs over the retrieved top-k only.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::bank::MemoryBank;
use crate::feature::{FeatureGrid, PatchLabel, Task};
use crate::index::{AnnIndex, KeySet, SearchParams};
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub k: usize,
    /// Softmax temperature β.
    pub temperature: f64,
    pub search: SearchParams,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: 30,
            temperature: 0.02,
            search: SearchParams::default(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Softmax of `cos / β` with max subtraction.
pub fn attention_weights(scores: &[f32], temperature: f64) -> Vec<f64> {
    let mut logits: Vec<f64> = scores.iter().map(|&s| s as f64 / temperature).collect();
    math::softmax_in_place(&mut logits);
    logits
}

/// Weighted sum of label rows: the raw attention output before any
/// task-specific normalization.
pub fn aggregate_labels(weights: &[f64], labels: &[&[f32]]) -> Vec<f64> {
    let width = labels.first().map_or(0, |l| l.len());
    let mut out = vec![0.0f64; width];
    for (&w, label) in weights.iter().zip(labels) {
        for (o, &v) in out.iter_mut().zip(label.iter()) {
            *o += w * v as f64;
        }
    }
    out
}

/// One decoded patch.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPatch {
    /// Class distribution (segmentation) or single depth value.
    pub values: Vec<f64>,
    /// Set when every neighbor lacked usable label mass; `values` then holds
    /// the uniform distribution (segmentation) or zero depth.
    pub flagged: bool,
}

impl DecodedPatch {
    pub fn to_label(&self, task: Task) -> PatchLabel {
        match task {
            Task::Segmentation { .. } => PatchLabel::Segmentation {
                histogram: self.values.iter().map(|&v| v as f32).collect(),
                ignore_fraction: 0.0,
            },
            Task::Depth => PatchLabel::Depth {
                mean_depth: self.values[0] as f32,
                valid_fraction: if self.flagged { 0.0 } else { 1.0 },
            },
        }
    }
}

/// Turns an aggregated label row into a prediction.
///
/// Segmentation drops the ignore mass and renormalizes the class histogram.
/// Depth divides the valid-weighted depth sum by the aggregated valid
/// fraction, so rows are weighted by how much of their patch was valid.
pub fn finalize_aggregate(task: Task, aggregate: &[f64], depth_sum: Option<f64>) -> DecodedPatch {
    match task {
        Task::Segmentation { num_classes } => {
            let hist = &aggregate[..num_classes];
            let mass: f64 = hist.iter().sum();
            if mass > 0.0 {
                DecodedPatch {
                    values: hist.iter().map(|&h| h / mass).collect(),
                    flagged: false,
                }
            } else {
                DecodedPatch {
                    values: vec![1.0 / num_classes as f64; num_classes],
                    flagged: true,
                }
            }
        }
        Task::Depth => {
            let valid = aggregate[1];
            let weighted = depth_sum.unwrap_or(aggregate[0] * valid);
            if valid > 0.0 {
                DecodedPatch {
                    values: vec![weighted / valid],
                    flagged: false,
                }
            } else {
                DecodedPatch {
                    values: vec![0.0],
                    flagged: true,
                }
            }
        }
    }
}

/// Decodes one patch from its neighbors' cosine scores and label rows.
pub fn decode_patch(
    task: Task,
    neighbors: &[(f32, &[f32])],
    temperature: f64,
) -> Result<DecodedPatch> {
    if neighbors.is_empty() {
        return Err(Error::Empty("decode needs at least one neighbor"));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    if let Some((_, l)) = neighbors.iter().find(|(_, l)| l.len() != task.label_width()) {
        return Err(Error::Dimension {
            expected: task.label_width(),
            actual: l.len(),
        });
    }
    let scores: Vec<f32> = neighbors.iter().map(|&(s, _)| s).collect();
    let labels: Vec<&[f32]> = neighbors.iter().map(|&(_, l)| l).collect();
    let weights = attention_weights(&scores, temperature);
    let aggregate = aggregate_labels(&weights, &labels);
    let depth_sum = match task {
        Task::Depth => Some(
            weights
                .iter()
                .zip(&labels)
                .map(|(&w, l)| w * l[0] as f64 * l[1] as f64)
                .sum(),
        ),
        Task::Segmentation { .. } => None,
    };
    Ok(finalize_aggregate(task, &aggregate, depth_sum))
}

/// Grid of decoded patch predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPredictions {
    pub task: Task,
    pub height: usize,
    pub width: usize,
    /// `height × width × task.output_channels()`.
    pub values: Vec<f32>,
    pub flagged: Vec<bool>,
}

impl PatchPredictions {
    pub fn channels(&self) -> usize {
        self.task.output_channels()
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        let c = self.channels();
        &self.values[index * c..(index + 1) * c]
    }
}

/// Decodes every patch of `grid` independently against `bank`.
pub fn decode_image(
    grid: &FeatureGrid,
    index: &AnnIndex,
    bank: &MemoryBank,
    cfg: &DecodeConfig,
) -> Result<PatchPredictions> {
    cfg.validate()?;
    if grid.dim != bank.dim {
        return Err(Error::Dimension {
            expected: bank.dim,
            actual: grid.dim,
        });
    }
    if index.len() != bank.len() {
        return Err(Error::shape(format!(
            "index covers {} rows, bank holds {}",
            index.len(),
            bank.len()
        )));
    }
    let task = bank.task;
    let keys = KeySet::from(bank);
    let mut values = Vec::with_capacity(grid.num_patches() * task.output_channels());
    let mut flagged = Vec::with_capacity(grid.num_patches());
    for hits in index.search_batch(keys, &grid.features, cfg.k, &cfg.search)? {
        let neighbors: Vec<(f32, &[f32])> = hits
            .iter()
            .map(|n| (n.score, bank.value(n.row as usize)))
            .collect();
        let decoded = decode_patch(task, &neighbors, cfg.temperature)?;
        values.extend(decoded.values.iter().map(|&v| v as f32));
        flagged.push(decoded.flagged);
    }
    Ok(PatchPredictions {
        task,
        height: grid.height,
        width: grid.width,
        values,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{build_bank, SamplerConfig};
    use crate::feature::patchify_labels;
    use crate::synth::{generate_synthetic_scene_set, SceneConfig};

    const SEG2: Task = Task::Segmentation { num_classes: 2 };

    #[test]
    fn single_neighbor_returns_its_label() {
        let label = [0.25f32, 0.75, 0.0];
        for beta in [1e-3, 0.02, 1.0, 50.0] {
            let out = decode_patch(SEG2, &[(0.3, &label)], beta).unwrap();
            assert_eq!(out.values, vec![0.25, 0.75]);
        }
    }

    #[test]
    fn two_neighbors_unit_temperature() {
        let (a, b) = ([1.0f32, 0.0, 0.0], [0.0f32, 1.0, 0.0]);
        let out = decode_patch(SEG2, &[(1.0, &a), (0.0, &b)], 1.0).unwrap();
        let e = core::f64::consts::E;
        assert!((out.values[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((out.values[0] - 0.73106).abs() < 1e-5);
        assert!((out.values[1] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn two_neighbors_sharp_temperature() {
        let (a, b) = ([1.0f32, 0.0, 0.0], [0.0f32, 1.0, 0.0]);
        let out = decode_patch(SEG2, &[(1.0, &a), (0.0, &b)], 0.02).unwrap();
        // σ(−50) = 1 / (1 + e^50)
        let tail = 1.0 / (1.0 + libm::exp(50.0));
        assert!((out.values[1] - tail).abs() < 1e-30);
        assert!((out.values[1] - 1.9e-22).abs() < 0.05e-22);
        assert!((out.values[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_ignore_neighbors_flagged_uniform() {
        let ignored = [0.0f32, 0.0, 1.0];
        let out = decode_patch(SEG2, &[(0.9, &ignored), (0.1, &ignored)], 0.1).unwrap();
        assert!(out.flagged);
        assert_eq!(out.values, vec![0.5, 0.5]);
    }

    #[test]
    fn ignore_mass_is_removed() {
        let half = [0.5f32, 0.0, 0.5];
        let out = decode_patch(SEG2, &[(1.0, &half)], 1.0).unwrap();
        assert_eq!(out.values, vec![1.0, 0.0]);
    }

    #[test]
    fn depth_weights_by_valid_fraction() {
        let (a, b) = ([2.0f32, 1.0], [8.0f32, 0.0]);
        let out = decode_patch(Task::Depth, &[(0.5, &a), (0.5, &b)], 1.0).unwrap();
        assert_eq!(out.values, vec![2.0]);
        let none = decode_patch(Task::Depth, &[(0.5, &b)], 1.0).unwrap();
        assert!(none.flagged);
    }

    #[test]
    fn empty_neighbors_rejected() {
        assert!(decode_patch(SEG2, &[], 1.0).is_err());
    }

    #[test]
    fn self_retrieval_recovers_labels() {
        let set = generate_synthetic_scene_set(&SceneConfig {
            num_images: 1,
            ..SceneConfig::default()
        })
        .unwrap();
        let cfg = SamplerConfig {
            capacity: 1000,
            aug_epochs: 1,
            downsample: false,
            seed: 0,
        };
        let bank = build_bank(&set, &cfg).unwrap().bank;
        let index = AnnIndex::build_exact((&bank).into()).unwrap();
        let image = &set.images()[0];
        let dc = DecodeConfig {
            k: 1,
            ..DecodeConfig::default()
        };
        let pred = decode_image(&image.grid, &index, &bank, &dc).unwrap();
        let truth = patchify_labels(&image.labels, set.task, 8, 8).unwrap();
        for p in 0..64 {
            let expected: Vec<f32> = truth.row(p)[..4].to_vec();
            assert_eq!(pred.patch(p), &expected[..]);
        }
    }

    #[test]
    fn empty_grid_decodes_to_nothing() {
        let set = generate_synthetic_scene_set(&SceneConfig {
            num_images: 1,
            ..SceneConfig::default()
        })
        .unwrap();
        let cfg = SamplerConfig {
            capacity: 1000,
            aug_epochs: 1,
            downsample: false,
            seed: 0,
        };
        let bank = build_bank(&set, &cfg).unwrap().bank;
        let index = AnnIndex::build_exact((&bank).into()).unwrap();
        let grid = FeatureGrid::new(9, 0, 0, 64, Vec::new()).unwrap();
        let pred = decode_image(&grid, &index, &bank, &DecodeConfig::default()).unwrap();
        assert!(pred.values.is_empty());
        let wrong = FeatureGrid::new(9, 1, 1, 3, vec![1.0; 3]).unwrap();
        assert!(decode_image(&wrong, &index, &bank, &DecodeConfig::default()).is_err());
    }
}
