//! Small dense-vector kernels shared across modules.

/// Inner product accumulated in `f32` with four independent lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    // 16 independent lanes keep the adds off a single dependency chain.
    let mut acc = [0.0f32; 16];
    let mut ca = a.chunks_exact(16);
    let mut cb = b.chunks_exact(16);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..16 {
            acc[l] += x[l] * y[l];
        }
    }
    for (l, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[l] += x * y;
    }
    let mut width = 8;
    while width > 0 {
        for l in 0..width {
            acc[l] += acc[l + width];
        }
        width /= 2;
    }
    acc[0]
}

#[inline]
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L2 norm of an `f32` vector, accumulated in `f64`.
pub fn norm(v: &[f32]) -> f64 {
    libm::sqrt(v.iter().map(|&x| (x as f64) * (x as f64)).sum())
}

pub fn norm_f64(v: &[f64]) -> f64 {
    libm::sqrt(dot_f64(v, v))
}

/// Scales `v` in place to unit L2 norm. Returns `false` (leaving `v`
/// untouched) when the norm is zero or not finite.
pub fn normalize(v: &mut [f32]) -> bool {
    let n = norm(v);
    if !(n > 0.0 && n.is_finite()) {
        return false;
    }
    for x in v.iter_mut() {
        *x = ((*x as f64) / n) as f32;
    }
    true
}

/// In-place softmax with max subtraction. Empty input is left unchanged.
pub fn softmax_in_place(logits: &mut [f64]) {
    let Some(max) = logits.iter().copied().reduce(f64::max) else {
        return;
    };
    let mut sum = 0.0;
    for x in logits.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in logits.iter_mut() {
        *x /= sum;
    }
}

/// `log(sum(exp(x)))` with max subtraction; `-inf` for empty input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let Some(max) = xs.iter().copied().reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.iter().map(|&x| libm::exp(x - max)).sum::<f64>())
}
