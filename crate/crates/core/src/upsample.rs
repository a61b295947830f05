//! Bilinear upsampling of patch predictions and per-pixel finalization.

use alloc::vec;
use alloc::vec::Vec;

use crate::decode::PatchPredictions;
use crate::feature::Task;
use crate::{Error, Result};

/// Channel-interleaved `height × width × channels` map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl DenseMap {
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }
}

/// Source taps and weight for one output coordinate, half-pixel centers.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = libm::floor(src) as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Upsamples an `in_h × in_w × channels` map to `out_h × out_w` with
/// half-pixel-center bilinear interpolation (edge samples clamp).
pub fn upsample_bilinear(
    values: &[f32],
    in_h: usize,
    in_w: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) -> Result<DenseMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("upsampling target must be non-empty"));
    }
    if in_h == 0 || in_w == 0 || values.len() != in_h * in_w * channels {
        return Err(Error::shape("upsampling source does not match its shape"));
    }
    let ys = taps(out_h, in_h);
    let xs = taps(out_w, in_w);
    let mut out = vec![0.0f32; out_h * out_w * channels];
    let at = |y: usize, x: usize, c: usize| values[(y * in_w + x) * channels + c];
    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
            let dst = &mut out[(oy * out_w + ox) * channels..][..channels];
            for (c, d) in dst.iter_mut().enumerate() {
                let top = at(y0, x0, c) + (at(y0, x1, c) - at(y0, x0, c)) * wx;
                let bottom = at(y1, x0, c) + (at(y1, x1, c) - at(y1, x0, c)) * wx;
                *d = top + (bottom - top) * wy;
            }
        }
    }
    Ok(DenseMap {
        height: out_h,
        width: out_w,
        channels,
        values: out,
    })
}

/// Upsamples a grid of decoded patches to pixel resolution.
pub fn upsample_predictions(
    patches: &PatchPredictions,
    out_h: usize,
    out_w: usize,
) -> Result<DenseMap> {
    upsample_bilinear(
        &patches.values,
        patches.height,
        patches.width,
        patches.channels(),
        out_h,
        out_w,
    )
}

/// Per-pixel prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum DensePrediction {
    Segmentation {
        height: usize,
        width: usize,
        /// Argmax class per pixel.
        classes: Vec<u16>,
        /// Retained class distribution.
        distribution: DenseMap,
    },
    Depth {
        height: usize,
        width: usize,
        depth: Vec<f32>,
    },
}

/// Argmax (lowest class on ties) for segmentation, passthrough for depth.
pub fn finalize_prediction(map: DenseMap, task: Task) -> Result<DensePrediction> {
    match task {
        Task::Segmentation { num_classes } => {
            if map.channels != num_classes {
                return Err(Error::Dimension {
                    expected: num_classes,
                    actual: map.channels,
                });
            }
            let classes = map
                .values
                .chunks_exact(num_classes)
                .map(|dist| {
                    let mut best = 0usize;
                    for (c, &p) in dist.iter().enumerate() {
                        if p > dist[best] {
                            best = c;
                        }
                    }
                    best as u16
                })
                .collect();
            Ok(DensePrediction::Segmentation {
                height: map.height,
                width: map.width,
                classes,
                distribution: map,
            })
        }
        Task::Depth => {
            if map.channels != 1 {
                return Err(Error::Dimension {
                    expected: 1,
                    actual: map.channels,
                });
            }
            Ok(DensePrediction::Depth {
                height: map.height,
                width: map.width,
                depth: map.values,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let map = upsample_bilinear(&[5.0; 6], 2, 3, 1, 32, 48).unwrap();
        assert!(map.values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn two_samples_to_width_four() {
        let map = upsample_bilinear(&[0.0, 1.0], 1, 2, 1, 1, 4).unwrap();
        assert_eq!(map.values, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(upsample_bilinear(&[1.0], 1, 1, 1, 0, 4).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let map = DenseMap {
            height: 1,
            width: 2,
            channels: 2,
            values: vec![0.5, 0.5, 0.0, 1.0],
        };
        let DensePrediction::Segmentation { classes, .. } =
            finalize_prediction(map, Task::Segmentation { num_classes: 2 }).unwrap()
        else {
            panic!("expected segmentation");
        };
        assert_eq!(classes, vec![0, 1]);
    }

    #[test]
    fn depth_passthrough_is_exact() {
        let values = vec![1.5f32, -0.0, 3.25e-7, 9.0];
        let map = DenseMap {
            height: 2,
            width: 2,
            channels: 1,
            values: values.clone(),
        };
        let DensePrediction::Depth { depth, .. } = finalize_prediction(map, Task::Depth).unwrap()
        else {
            panic!("expected depth");
        };
        assert_eq!(
            depth.iter().map(|d| d.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|d| d.to_bits()).collect::<Vec<_>>()
        );
    }
}
