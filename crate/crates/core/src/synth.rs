//! Deterministic synthetic data: labeled scene sets and clustered key sets.
//!
//! Scenes are made of parallel bands (all horizontal or all vertical per
//! image), each band a single class. Every patch feature is the unit
//! normalization of its class prototype plus isotropic Gaussian noise, and
//! prototypes are orthonormal. Band layouts keep every 2×2 patch
//! neighborhood split along at most one axis, so a perfect patch-level
//! prediction stays perfect after bilinear upsampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::feature::{FeatureGrid, FeatureSet, LabeledImage, PixelLabels, Task};
use crate::rng::{stream, StreamRng};
use crate::{Error, Result, PATCH_SIZE};

const PROTOTYPE_STREAM: u64 = 0x5052_4f54;
const LAYOUT_STREAM: u64 = 0x4c41_594f;
const NOISE_STREAM: u64 = 0x4e4f_4953;

/// Depth range of synthetic depth scenes, in arbitrary metric units.
pub const DEPTH_RANGE: (f32, f32) = (0.5, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Segmentation,
    Depth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    /// Class count for segmentation; depth scenes use two prototypes.
    pub num_classes: usize,
    pub noise_sigma: f64,
    pub epochs: usize,
    /// Drives prototypes, layouts and noise.
    pub seed: u64,
    /// Added to image indices to form image ids. Sets generated with the
    /// same seed and disjoint id ranges share prototypes but not images.
    pub first_image_id: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            kind: SceneKind::Segmentation,
            num_images: 8,
            height: 8,
            width: 8,
            dim: 64,
            num_classes: 4,
            noise_sigma: 0.1,
            epochs: 1,
            seed: 0,
            first_image_id: 0,
        }
    }
}

impl SceneConfig {
    pub fn task(&self) -> Task {
        match self.kind {
            SceneKind::Segmentation => Task::Segmentation {
                num_classes: self.num_classes,
            },
            SceneKind::Depth => Task::Depth,
        }
    }

    fn prototype_count(&self) -> usize {
        match self.kind {
            SceneKind::Segmentation => self.num_classes,
            SceneKind::Depth => 2,
        }
    }
}

/// Orthonormal class prototypes (`count × dim`, row-major) for `seed`.
pub fn prototypes(count: usize, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if count > dim {
        return Err(Error::config(format!(
            "{count} orthonormal prototypes do not fit in dimension {dim}"
        )));
    }
    let mut rng = stream(seed, &[PROTOTYPE_STREAM]);
    let mut basis: Vec<f64> = Vec::with_capacity(count * dim);
    while basis.len() < count * dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in basis.chunks_exact(dim) {
            let proj = crate::math::dot_f64(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let n = crate::math::norm_f64(&v);
        // Resample on (vanishingly unlikely) near-degenerate draws.
        if n > 1e-6 {
            basis.extend(v.iter().map(|x| x / n));
        }
    }
    Ok(basis)
}

fn noisy_feature(
    center: &[f64],
    sigma: f64,
    rng: &mut StreamRng,
    out: &mut Vec<f32>,
) {
    let start = out.len();
    let mut sq = 0.0;
    let mut buf = Vec::with_capacity(center.len());
    for &c in center {
        let noise: f64 = rng.sample(StandardNormal);
        let x = c + sigma * noise;
        sq += x * x;
        buf.push(x);
    }
    let n = libm::sqrt(sq);
    out.extend(buf.iter().map(|x| (x / n) as f32));
    debug_assert_eq!(out.len() - start, center.len());
}

/// Band layout: orientation plus per-band class and extent in patches.
struct Layout {
    vertical: bool,
    /// `(end_exclusive, class)` along the split axis.
    bands: Vec<(usize, usize)>,
}

impl Layout {
    fn sample(rng: &mut StreamRng, height: usize, width: usize, num_classes: usize) -> Self {
        let vertical = rng.random_bool(0.5);
        let extent = if vertical { width } else { height };
        let max_bands = extent.min(4);
        let n_bands = rng.random_range(1..=max_bands);
        let mut cuts: Vec<usize> = Vec::new();
        while cuts.len() < n_bands - 1 {
            let c = rng.random_range(1..extent);
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
        cuts.sort_unstable();
        cuts.push(extent);
        let bands = cuts
            .into_iter()
            .map(|end| (end, rng.random_range(0..num_classes)))
            .collect();
        Layout { vertical, bands }
    }

    fn class_at(&self, y: usize, x: usize) -> usize {
        let pos = if self.vertical { x } else { y };
        self.bands
            .iter()
            .find(|(end, _)| pos < *end)
            .map(|&(_, c)| c)
            .unwrap_or(0)
    }
}

/// Smooth depth field: plane plus a sinusoidal ripple, plus a strip of
/// invalid pixels along the left border on some images.
struct DepthField {
    base: f64,
    grad_x: f64,
    grad_y: f64,
    ripple: f64,
    freq: f64,
    phase: f64,
    invalid_cols: usize,
}

impl DepthField {
    fn sample(rng: &mut StreamRng, width_px: usize) -> Self {
        DepthField {
            base: rng.random_range(2.0..5.0),
            grad_x: rng.random_range(-2.0..2.0),
            grad_y: rng.random_range(0.0..3.0),
            ripple: rng.random_range(0.0..0.5),
            freq: rng.random_range(1.0..4.0),
            phase: rng.random_range(0.0..core::f64::consts::TAU),
            invalid_cols: if rng.random_bool(0.25) {
                rng.random_range(1..=width_px / 2)
            } else {
                0
            },
        }
    }

    /// Depth at normalized coordinates `u, v ∈ [0, 1]`.
    fn at(&self, u: f64, v: f64) -> f32 {
        let d = self.base
            + self.grad_x * (u - 0.5)
            + self.grad_y * v
            + self.ripple * libm::sin(self.freq * core::f64::consts::TAU * u + self.phase);
        d.clamp(DEPTH_RANGE.0 as f64, DEPTH_RANGE.1 as f64) as f32
    }
}

/// Generates a labeled synthetic scene set. Bitwise deterministic in `cfg`.
pub fn generate_synthetic_scene_set(cfg: &SceneConfig) -> Result<FeatureSet> {
    if cfg.height == 0 || cfg.width == 0 || cfg.dim == 0 {
        return Err(Error::config("grid height, width and dim must be at least 1"));
    }
    if cfg.epochs == 0 {
        return Err(Error::config("at least one epoch is required"));
    }
    if cfg.kind == SceneKind::Segmentation && cfg.num_classes == 0 {
        return Err(Error::config("segmentation scenes need at least one class"));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::config("noise sigma must be finite and non-negative"));
    }
    let protos = prototypes(cfg.prototype_count(), cfg.dim, cfg.seed)?;
    let (hp, wp) = (cfg.height * PATCH_SIZE, cfg.width * PATCH_SIZE);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut images = Vec::with_capacity(cfg.num_images);
        for i in 0..cfg.num_images {
            let image_id = cfg.first_image_id + i as u64;
            let mut layout_rng = stream(cfg.seed, &[LAYOUT_STREAM, image_id]);
            let mut noise_rng = stream(cfg.seed, &[NOISE_STREAM, image_id, epoch as u64]);
            let mut features = Vec::with_capacity(cfg.height * cfg.width * cfg.dim);
            let labels = match cfg.kind {
                SceneKind::Segmentation => {
                    let layout =
                        Layout::sample(&mut layout_rng, cfg.height, cfg.width, cfg.num_classes);
                    for y in 0..cfg.height {
                        for x in 0..cfg.width {
                            let c = layout.class_at(y, x);
                            let center = &protos[c * cfg.dim..(c + 1) * cfg.dim];
                            noisy_feature(center, cfg.noise_sigma, &mut noise_rng, &mut features);
                        }
                    }
                    let classes = (0..hp * wp)
                        .map(|p| {
                            let (y, x) = (p / wp / PATCH_SIZE, p % wp / PATCH_SIZE);
                            layout.class_at(y, x) as u16
                        })
                        .collect();
                    PixelLabels::Segmentation {
                        height: hp,
                        width: wp,
                        classes,
                    }
                }
                SceneKind::Depth => {
                    let field = DepthField::sample(&mut layout_rng, wp);
                    let depth: Vec<f32> = (0..hp * wp)
                        .map(|p| {
                            let u = ((p % wp) as f64 + 0.5) / wp as f64;
                            let v = ((p / wp) as f64 + 0.5) / hp as f64;
                            field.at(u, v)
                        })
                        .collect();
                    let valid: Vec<bool> = (0..hp * wp).map(|p| p % wp >= field.invalid_cols).collect();
                    let (lo, hi) = (DEPTH_RANGE.0 as f64, DEPTH_RANGE.1 as f64);
                    for y in 0..cfg.height {
                        for x in 0..cfg.width {
                            let u = (x as f64 + 0.5) / cfg.width as f64;
                            let v = (y as f64 + 0.5) / cfg.height as f64;
                            let t = (field.at(u, v) as f64 - lo) / (hi - lo);
                            let angle = t * core::f64::consts::FRAC_PI_2;
                            let center: Vec<f64> = (0..cfg.dim)
                                .map(|d| {
                                    libm::cos(angle) * protos[d]
                                        + libm::sin(angle) * protos[cfg.dim + d]
                                })
                                .collect();
                            noisy_feature(&center, cfg.noise_sigma, &mut noise_rng, &mut features);
                        }
                    }
                    PixelLabels::Depth {
                        height: hp,
                        width: wp,
                        depth,
                        valid,
                    }
                }
            };
            let grid = FeatureGrid::new(image_id, cfg.height, cfg.width, cfg.dim, features)?;
            images.push(LabeledImage { grid, labels });
        }
        epochs.push(images);
    }
    FeatureSet::new(cfg.task(), cfg.dim, epochs)
}

/// `n` unit vectors drawn around `clusters` random unit centers, with
/// per-coordinate Gaussian spread `spread`. Returned row-major (`n × dim`).
pub fn clustered_unit_vectors(
    n: usize,
    dim: usize,
    clusters: usize,
    spread: f64,
    seed: u64,
) -> Vec<f32> {
    let clusters = clusters.max(1);
    let mut center_rng = stream(seed, &[PROTOTYPE_STREAM, clusters as u64]);
    let mut centers = vec![0.0f64; clusters * dim];
    for c in centers.chunks_exact_mut(dim) {
        loop {
            c.iter_mut()
                .for_each(|x| *x = StandardNormal.sample(&mut center_rng));
            let n = crate::math::norm_f64(c);
            if n > 1e-9 {
                c.iter_mut().for_each(|x| *x /= n);
                break;
            }
        }
    }
    let mut rng = stream(seed, &[NOISE_STREAM, n as u64]);
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..clusters);
        noisy_feature(&centers[c * dim..(c + 1) * dim], spread, &mut rng, &mut out);
    }
    out
}
