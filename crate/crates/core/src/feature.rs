//! Feature grids, pixel labels and patch-level label construction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, IGNORE_ID, PATCH_PIXELS, PATCH_SIZE};

/// Dense prediction task carried by labels and banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Segmentation { num_classes: usize },
    Depth,
}

impl Task {
    /// Width of one flattened patch-label row.
    ///
    /// Segmentation rows are `[histogram.., ignore_fraction]`, depth rows
    /// are `[mean_depth, valid_fraction]`.
    pub fn label_width(&self) -> usize {
        match *self {
            Task::Segmentation { num_classes } => num_classes + 1,
            Task::Depth => 2,
        }
    }

    /// Channels of a decoded prediction: one per class, or one depth value.
    pub fn output_channels(&self) -> usize {
        match *self {
            Task::Segmentation { num_classes } => num_classes,
            Task::Depth => 1,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            Task::Segmentation { num_classes } => num_classes,
            Task::Depth => 0,
        }
    }

    pub fn is_segmentation(&self) -> bool {
        matches!(self, Task::Segmentation { .. })
    }
}

/// An `H × W` grid of `D`-dimensional patch features in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub features: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(
        image_id: u64,
        height: usize,
        width: usize,
        dim: usize,
        features: Vec<f32>,
    ) -> Result<Self> {
        let grid = FeatureGrid {
            image_id,
            height,
            width,
            dim,
            features,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::shape("feature dimension must be at least 1"));
        }
        if self.features.len() != self.height * self.width * self.dim {
            return Err(Error::shape(format!(
                "feature grid {}x{}x{} holds {} values",
                self.height,
                self.width,
                self.dim,
                self.features.len()
            )));
        }
        if let Some(i) = self.features.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature value {i} of image {}",
                self.image_id
            )));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    pub fn patches(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.features.chunks_exact(self.dim)
    }
}

/// Per-pixel ground truth at `16·H × 16·W` resolution.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelLabels {
    Segmentation {
        height: usize,
        width: usize,
        /// Class id per pixel, [`IGNORE_ID`] for unlabeled pixels.
        classes: Vec<u16>,
    },
    Depth {
        height: usize,
        width: usize,
        depth: Vec<f32>,
        valid: Vec<bool>,
    },
}

impl PixelLabels {
    pub fn height(&self) -> usize {
        match self {
            PixelLabels::Segmentation { height, .. } | PixelLabels::Depth { height, .. } => *height,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            PixelLabels::Segmentation { width, .. } | PixelLabels::Depth { width, .. } => *width,
        }
    }

    pub fn is_segmentation(&self) -> bool {
        matches!(self, PixelLabels::Segmentation { .. })
    }

    /// Checks buffer sizes and value ranges against `task`.
    pub fn validate(&self, task: Task) -> Result<()> {
        let n = self.height() * self.width();
        match (self, task) {
            (PixelLabels::Segmentation { classes, .. }, Task::Segmentation { num_classes }) => {
                if classes.len() != n {
                    return Err(Error::shape(format!(
                        "segmentation labels hold {} pixels, expected {n}",
                        classes.len()
                    )));
                }
                if let Some(&c) = classes
                    .iter()
                    .find(|&&c| c != IGNORE_ID && c as usize >= num_classes)
                {
                    return Err(Error::input(format!(
                        "class id {c} out of range for {num_classes} classes"
                    )));
                }
                Ok(())
            }
            (PixelLabels::Depth { depth, valid, .. }, Task::Depth) => {
                if depth.len() != n || valid.len() != n {
                    return Err(Error::shape(format!(
                        "depth labels hold {}/{} pixels, expected {n}",
                        depth.len(),
                        valid.len()
                    )));
                }
                if depth.iter().zip(valid).any(|(d, &v)| v && !d.is_finite()) {
                    return Err(Error::NonFinite("valid depth pixel".into()));
                }
                Ok(())
            }
            _ => Err(Error::input("pixel labels do not match the task")),
        }
    }
}

/// Label of a single patch.
#[derive(Debug, Clone, PartialEq)]
pub enum PatchLabel {
    Segmentation {
        histogram: Vec<f32>,
        ignore_fraction: f32,
    },
    Depth {
        mean_depth: f32,
        valid_fraction: f32,
    },
}

impl PatchLabel {
    /// Rebuilds a label from its flattened row (see [`Task::label_width`]).
    pub fn from_row(task: Task, row: &[f32]) -> Self {
        match task {
            Task::Segmentation { num_classes } => PatchLabel::Segmentation {
                histogram: row[..num_classes].to_vec(),
                ignore_fraction: row[num_classes],
            },
            Task::Depth => PatchLabel::Depth {
                mean_depth: row[0],
                valid_fraction: row[1],
            },
        }
    }

    pub fn to_row(&self) -> Vec<f32> {
        match self {
            PatchLabel::Segmentation {
                histogram,
                ignore_fraction,
            } => {
                let mut row = histogram.clone();
                row.push(*ignore_fraction);
                row
            }
            PatchLabel::Depth {
                mean_depth,
                valid_fraction,
            } => vec![*mean_depth, *valid_fraction],
        }
    }

    /// Whether the patch carries no usable label at all.
    pub fn is_empty(&self) -> bool {
        match self {
            PatchLabel::Segmentation { histogram, .. } => histogram.iter().all(|&m| m <= 0.0),
            PatchLabel::Depth { valid_fraction, .. } => *valid_fraction <= 0.0,
        }
    }
}

/// Flattened `H × W` grid of patch labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub task: Task,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl LabelGrid {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, index: usize) -> &[f32] {
        let w = self.task.label_width();
        &self.values[index * w..(index + 1) * w]
    }

    pub fn label(&self, index: usize) -> PatchLabel {
        PatchLabel::from_row(self.task, self.row(index))
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.task.label_width())
    }
}

/// Averages pixel labels over each 16×16 block of an `H × W` patch grid.
///
/// Segmentation blocks become class histograms with IGNORE pixels counted
/// in a separate `ignore_fraction`; depth blocks average valid pixels only
/// and record the fraction of valid pixels.
pub fn patchify_labels(
    labels: &PixelLabels,
    task: Task,
    height: usize,
    width: usize,
) -> Result<LabelGrid> {
    if labels.height() != PATCH_SIZE * height || labels.width() != PATCH_SIZE * width {
        return Err(Error::shape(format!(
            "pixel labels {}x{} do not cover a {height}x{width} patch grid",
            labels.height(),
            labels.width()
        )));
    }
    labels.validate(task)?;
    let label_width = task.label_width();
    let mut values = vec![0.0f32; height * width * label_width];
    let px_width = labels.width();

    for py in 0..height {
        for px in 0..width {
            let out = &mut values[(py * width + px) * label_width..][..label_width];
            let pixels = (0..PATCH_SIZE).flat_map(|dy| {
                let row = (py * PATCH_SIZE + dy) * px_width + px * PATCH_SIZE;
                row..row + PATCH_SIZE
            });
            match labels {
                PixelLabels::Segmentation { classes, .. } => {
                    let num_classes = task.num_classes();
                    let mut counts = vec![0u32; num_classes + 1];
                    for p in pixels {
                        let c = classes[p];
                        if c == IGNORE_ID {
                            counts[num_classes] += 1;
                        } else {
                            counts[c as usize] += 1;
                        }
                    }
                    for (o, &c) in out.iter_mut().zip(&counts) {
                        *o = c as f32 / PATCH_PIXELS as f32;
                    }
                }
                PixelLabels::Depth { depth, valid, .. } => {
                    let (mut sum, mut count) = (0.0f64, 0u32);
                    for p in pixels.filter(|&p| valid[p]) {
                        sum += depth[p] as f64;
                        count += 1;
                    }
                    out[0] = if count > 0 {
                        (sum / count as f64) as f32
                    } else {
                        0.0
                    };
                    out[1] = count as f32 / PATCH_PIXELS as f32;
                }
            }
        }
    }
    Ok(LabelGrid {
        task,
        height,
        width,
        values,
    })
}

/// One annotated image: its feature grid and aligned pixel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub grid: FeatureGrid,
    pub labels: PixelLabels,
}

/// A prompt set: one collection of labeled images per augmentation epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub task: Task,
    pub dim: usize,
    pub epochs: Vec<Vec<LabeledImage>>,
}

impl FeatureSet {
    pub fn new(task: Task, dim: usize, epochs: Vec<Vec<LabeledImage>>) -> Result<Self> {
        let set = FeatureSet { task, dim, epochs };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs.is_empty() {
            return Err(Error::shape("feature set needs at least one epoch"));
        }
        let n = self.epochs[0].len();
        for (e, epoch) in self.epochs.iter().enumerate() {
            if epoch.len() != n {
                return Err(Error::shape(format!(
                    "epoch {e} holds {} images, epoch 0 holds {n}",
                    epoch.len()
                )));
            }
            for image in epoch {
                image.grid.validate()?;
                if image.grid.dim != self.dim {
                    return Err(Error::Dimension {
                        expected: self.dim,
                        actual: image.grid.dim,
                    });
                }
                image.labels.validate(self.task)?;
                if image.labels.height() != PATCH_SIZE * image.grid.height
                    || image.labels.width() != PATCH_SIZE * image.grid.width
                {
                    return Err(Error::shape(format!(
                        "image {} labels are {}x{} for a {}x{} grid",
                        image.grid.image_id,
                        image.labels.height(),
                        image.labels.width(),
                        image.grid.height,
                        image.grid.width
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_epochs(&self) -> usize {
        self.epochs.len()
    }

    /// Images per epoch.
    pub fn num_images(&self) -> usize {
        self.epochs.first().map_or(0, Vec::len)
    }

    /// Images of the first (unaugmented) epoch.
    pub fn images(&self) -> &[LabeledImage] {
        &self.epochs[0]
    }
}
