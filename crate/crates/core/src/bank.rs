//! Evaluation memory bank: sampling patches from a prompt set and storing
//! their normalized features together with patch labels.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::feature::{patchify_labels, FeatureSet, LabelGrid, PatchLabel, Task};
use crate::rng::{stream, StreamRng};
use crate::{math, Error, Result};

/// Score offset that pushes label-free patches behind every labeled one.
pub const EMPTY_PATCH_PENALTY: f64 = 1e6;

const SAMPLER_STREAM: u64 = 0x5341_4d50;

/// Where a bank row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub image_id: u64,
    pub epoch: u32,
    pub patch: u32,
}

/// Flat table of unit-norm keys and flattened patch-label rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub dim: usize,
    pub task: Task,
    /// `len × dim`, row-major, each row L2-normalized.
    pub keys: Vec<f32>,
    /// `len × task.label_width()`.
    pub values: Vec<f32>,
    pub provenance: Vec<Provenance>,
}

impl MemoryBank {
    pub fn empty(dim: usize, task: Task) -> Self {
        MemoryBank {
            dim,
            task,
            keys: Vec::new(),
            values: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn key(&self, row: usize) -> &[f32] {
        &self.keys[row * self.dim..(row + 1) * self.dim]
    }

    pub fn value(&self, row: usize) -> &[f32] {
        let w = self.task.label_width();
        &self.values[row * w..(row + 1) * w]
    }

    pub fn label(&self, row: usize) -> PatchLabel {
        PatchLabel::from_row(self.task, self.value(row))
    }

    /// Appends a row, normalizing `feature` into the stored key.
    pub fn push(&mut self, feature: &[f32], value: &[f32], provenance: Provenance) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: feature.len(),
            });
        }
        if value.len() != self.task.label_width() {
            return Err(Error::Dimension {
                expected: self.task.label_width(),
                actual: value.len(),
            });
        }
        let start = self.keys.len();
        self.keys.extend_from_slice(feature);
        if !math::normalize(&mut self.keys[start..]) {
            self.keys.truncate(start);
            return Err(Error::input(format!(
                "zero or non-finite feature for image {} patch {}",
                provenance.image_id, provenance.patch
            )));
        }
        self.values.extend_from_slice(value);
        self.provenance.push(provenance);
        Ok(())
    }

    /// Checks buffer sizes and key norms.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.keys.len() != n * self.dim || self.values.len() != n * self.task.label_width() {
            return Err(Error::shape(format!(
                "bank of {n} rows holds {} key and {} value entries",
                self.keys.len(),
                self.values.len()
            )));
        }
        for row in 0..n {
            let norm = math::norm(self.key(row));
            if (norm - 1.0).abs() > 1e-5 {
                return Err(Error::input(format!("bank key {row} has norm {norm}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Maximum bank length |M|.
    pub capacity: usize,
    pub aug_epochs: usize,
    /// Sample a fixed per-image budget instead of storing every patch.
    pub downsample: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            capacity: 10_240_000,
            aug_epochs: 2,
            downsample: true,
            seed: 0,
        }
    }
}

/// Patches taken from each (image, epoch): `⌊capacity / (images · epochs)⌋`.
pub fn features_per_image(capacity: usize, num_images: usize, aug_epochs: usize) -> usize {
    match num_images.checked_mul(aug_epochs) {
        Some(0) | None => 0,
        Some(slots) => capacity / slots,
    }
}

/// Slots needed to store every patch of every image in every epoch.
pub fn required_capacity(num_images: usize, height: usize, width: usize, aug_epochs: usize) -> Option<usize> {
    num_images
        .checked_mul(height)?
        .checked_mul(width)?
        .checked_mul(aug_epochs)
}

/// Per-patch class scores: for each patch, the sum over the classes it
/// contains of the number of patches containing that class.
pub fn class_scores(labels: &LabelGrid) -> Vec<f64> {
    let num_classes = labels.task.num_classes();
    let mut kappa = alloc::vec![0u64; num_classes];
    for row in labels.rows() {
        for (c, &mass) in row[..num_classes].iter().enumerate() {
            if mass > 0.0 {
                kappa[c] += 1;
            }
        }
    }
    labels
        .rows()
        .map(|row| {
            row[..num_classes]
                .iter()
                .zip(&kappa)
                .filter(|(&mass, _)| mass > 0.0)
                .map(|(_, &k)| k as f64)
                .sum()
        })
        .collect()
}

/// Combines class scores with per-patch uniform draws `x` into final scores
/// `class_score · x + 10⁶ · [patch has no class]`.
pub fn final_scores(labels: &LabelGrid, class_scores: &[f64], draws: &[f64]) -> Vec<f64> {
    class_scores
        .iter()
        .zip(draws)
        .zip(labels.rows())
        .map(|((&score, &x), row)| {
            let empty = row[..labels.task.num_classes()].iter().all(|&m| m <= 0.0);
            score * x + if empty { EMPTY_PATCH_PENALTY } else { 0.0 }
        })
        .collect()
}

/// Final sampling scores of a segmentation label grid, drawing one
/// `U[0, 1)` variate per patch from `rng`. Lower scores are kept first.
pub fn segmentation_patch_scores(labels: &LabelGrid, rng: &mut StreamRng) -> Result<Vec<f64>> {
    if !labels.task.is_segmentation() {
        return Err(Error::input("patch scores are defined for segmentation only"));
    }
    let scores = class_scores(labels);
    let draws: Vec<f64> = (0..labels.len()).map(|_| rng.random::<f64>()).collect();
    Ok(final_scores(labels, &scores, &draws))
}

/// Indices of the `n` lowest scores, ties going to the lower index.
pub fn lowest_scores(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Chooses `n` patches of one image for the bank.
///
/// Segmentation keeps the `n` lowest final scores. Depth shuffles all
/// patches, moves those without any valid pixel behind the rest, and keeps
/// the first `n`.
pub fn select_patches(labels: &LabelGrid, n: usize, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if n > labels.len() {
        return Err(Error::input(format!(
            "cannot select {n} of {} patches",
            labels.len()
        )));
    }
    match labels.task {
        Task::Segmentation { .. } => {
            let scores = segmentation_patch_scores(labels, rng)?;
            Ok(lowest_scores(&scores, n))
        }
        Task::Depth => {
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(rng);
            // Stable partition: valid patches first, shuffled order kept.
            let (mut valid, invalid): (Vec<usize>, Vec<usize>) =
                order.into_iter().partition(|&p| labels.row(p)[1] > 0.0);
            valid.extend(invalid);
            valid.truncate(n);
            Ok(valid)
        }
    }
}

/// Result of [`build_bank`].
#[derive(Debug, Clone, PartialEq)]
pub struct BankBuild {
    pub bank: MemoryBank,
    /// Patches per (image, epoch) actually taken when downsampling.
    pub per_image: usize,
    /// Patches dropped because the bank was full (store-all mode only).
    pub truncated: usize,
}

/// Builds the evaluation memory bank from the first `cfg.aug_epochs` epochs
/// of `set`. Rows are ordered by (epoch, image, selection rank).
pub fn build_bank(set: &FeatureSet, cfg: &SamplerConfig) -> Result<BankBuild> {
    if cfg.capacity == 0 {
        return Err(Error::config("memory bank capacity must be at least 1"));
    }
    if cfg.aug_epochs == 0 {
        return Err(Error::config("at least one augmentation epoch is required"));
    }
    if cfg.aug_epochs > set.num_epochs() {
        return Err(Error::config(format!(
            "{} augmentation epochs requested, feature set has {}",
            cfg.aug_epochs,
            set.num_epochs()
        )));
    }
    let num_images = set.num_images();
    let per_image = if cfg.downsample {
        let n = features_per_image(cfg.capacity, num_images, cfg.aug_epochs);
        if n == 0 && num_images > 0 {
            return Err(Error::config(format!(
                "capacity {} over {num_images} images x {} epochs leaves 0 features per image",
                cfg.capacity, cfg.aug_epochs
            )));
        }
        n
    } else {
        0
    };

    let mut bank = MemoryBank::empty(set.dim, set.task);
    let mut truncated = 0usize;
    for (epoch, images) in set.epochs.iter().take(cfg.aug_epochs).enumerate() {
        for image in images {
            let grid = &image.grid;
            let labels = patchify_labels(&image.labels, set.task, grid.height, grid.width)?;
            let selected: Vec<usize> = if cfg.downsample {
                if let Task::Segmentation { num_classes } = set.task {
                    let bound = grid.num_patches() as f64 * num_classes as f64;
                    if bound >= EMPTY_PATCH_PENALTY {
                        return Err(Error::config(format!(
                            "class scores up to {bound} would overlap the empty-patch offset"
                        )));
                    }
                }
                let mut rng = stream(cfg.seed, &[SAMPLER_STREAM, grid.image_id, epoch as u64]);
                // Budgets above the grid size keep the whole grid.
                select_patches(&labels, per_image.min(grid.num_patches()), &mut rng)?
            } else {
                (0..grid.num_patches()).collect()
            };
            for p in selected {
                if bank.len() >= cfg.capacity {
                    truncated += 1;
                    continue;
                }
                bank.push(
                    grid.patch(p),
                    labels.row(p),
                    Provenance {
                        image_id: grid.image_id,
                        epoch: epoch as u32,
                        patch: p as u32,
                    },
                )?;
            }
        }
    }
    Ok(BankBuild {
        bank,
        per_image,
        truncated,
    })
}
