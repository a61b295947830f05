//! Lloyd k-means with k-means++ seeding, in Euclidean and spherical form.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::rng::StreamRng;

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding over the rows of `data`. Rows already chosen have zero
/// weight; when every remaining weight is zero the first row is reused.
fn plus_plus_init(data: &[f32], dim: usize, k: usize, rng: &mut StreamRng) -> Vec<f32> {
    let n = data.len() / dim;
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut weight: Vec<f64> = data
        .chunks_exact(dim)
        .map(|row| sq_dist(row, &centers[..dim]) as f64)
        .collect();
    while centers.len() < k * dim {
        let total: f64 = weight.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in weight.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Guard against landing on a zero-weight row through rounding.
            if weight[pick] == 0.0 {
                pick = weight.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            }
            pick
        } else {
            0
        };
        let start = centers.len();
        centers.extend_from_slice(&data[pick * dim..(pick + 1) * dim]);
        let center = &centers[start..];
        for (w, row) in weight.iter_mut().zip(data.chunks_exact(dim)) {
            *w = w.min(sq_dist(row, center) as f64);
        }
    }
    centers
}

/// Index of the nearest center by squared distance (lower index on ties).
pub fn nearest_center(row: &[f32], centers: &[f32], dim: usize) -> usize {
    let mut best = (f32::INFINITY, 0usize);
    for (c, center) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, center);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// Index of the center with the largest inner product (lower index on ties).
pub fn best_dot_center(row: &[f32], centers: &[f32], dim: usize) -> usize {
    let mut best = (f32::NEG_INFINITY, 0usize);
    for (c, center) in centers.chunks_exact(dim).enumerate() {
        let s = math::dot(row, center);
        if s > best.0 {
            best = (s, c);
        }
    }
    best.1
}

fn lloyd(
    data: &[f32],
    dim: usize,
    mut centers: Vec<f32>,
    iters: usize,
    spherical: bool,
) -> Vec<f32> {
    let k = centers.len() / dim;
    let mut assignment = vec![usize::MAX; data.len() / dim];
    for _ in 0..iters {
        let mut changed = false;
        for (a, row) in assignment.iter_mut().zip(data.chunks_exact(dim)) {
            let c = if spherical {
                best_dot_center(row, &centers, dim)
            } else {
                nearest_center(row, &centers, dim)
            };
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (&a, row) in assignment.iter().zip(data.chunks_exact(dim)) {
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous center.
            if counts[c] == 0 {
                continue;
            }
            let sum = &sums[c * dim..(c + 1) * dim];
            let center = &mut centers[c * dim..(c + 1) * dim];
            if spherical {
                let n = math::norm_f64(sum);
                if n > 0.0 {
                    for (o, &s) in center.iter_mut().zip(sum) {
                        *o = (s / n) as f32;
                    }
                }
            } else {
                for (o, &s) in center.iter_mut().zip(sum) {
                    *o = (s / counts[c] as f64) as f32;
                }
            }
        }
    }
    centers
}

/// Euclidean k-means over the rows of `data`. Returns `k × dim` centers.
pub fn kmeans(data: &[f32], dim: usize, k: usize, iters: usize, rng: &mut StreamRng) -> Vec<f32> {
    debug_assert!(k >= 1 && data.len() >= dim);
    let init = plus_plus_init(data, dim, k, rng);
    lloyd(data, dim, init, iters, false)
}

/// Spherical k-means over unit rows: assignment by inner product, centers
/// re-normalized to the unit sphere after every update.
pub fn spherical_kmeans(
    data: &[f32],
    dim: usize,
    k: usize,
    iters: usize,
    rng: &mut StreamRng,
) -> Vec<f32> {
    debug_assert!(k >= 1 && data.len() >= dim);
    let mut init = plus_plus_init(data, dim, k, rng);
    for c in init.chunks_exact_mut(dim) {
        math::normalize(c);
    }
    lloyd(data, dim, init, iters, true)
}
