//! Lookup-latency sweep over bank sizes, CSV output and SVG plots.
//!
//! Each size gets a synthetic bank of clustered unit keys. One "image" of
//! `grid_height × grid_width` query patches is decoded through the normal
//! decoder path; only search plus decode is timed. Recall@k is measured
//! against the exact index for banks up to [`RECALL_LIMIT`] keys.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use nnscene_core::bank::{MemoryBank, Provenance};
use nnscene_core::decode::{decode_image, DecodeConfig};
use nnscene_core::index::{recall_at_k, AnnIndex, IndexParams, KeySet};
use nnscene_core::synth::clustered_unit_vectors;
use nnscene_core::{FeatureGrid, Task};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest bank size for which recall is measured.
pub const RECALL_LIMIT: usize = 1_000_000;

/// Minimum wall time of one measurement batch before repetitions stop
/// being doubled.
const MIN_BATCH: Duration = Duration::from_millis(20);
const MAX_REPEAT_DOUBLINGS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub bank_size: usize,
    pub index_mode: String,
    pub k: usize,
    pub leaves_to_search: usize,
    pub reorder_n: usize,
    pub mean_latency_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub recall_at_k: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dim: usize,
    pub clusters: usize,
    pub spread: f64,
    pub grid_height: usize,
    pub grid_width: usize,
    pub num_classes: usize,
    pub k: usize,
    pub temperature: f64,
    /// Timed repetitions after the warm-up.
    pub repetitions: usize,
    pub warmup: usize,
    /// Rows used to train each quantized index; 0 trains on all keys.
    pub training_sample: usize,
    /// Overrides the size-scaled index parameters when set.
    pub index_params: Option<IndexParams>,
    pub include_exact: bool,
    pub include_quantized: bool,
    /// Upper bound on the estimated resident bytes of one bank plus index.
    pub memory_budget: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dim: 64,
            clusters: 1000,
            spread: 0.07,
            grid_height: 32,
            grid_width: 32,
            num_classes: 4,
            k: 30,
            temperature: 0.02,
            repetitions: 3,
            warmup: 1,
            training_sample: 65_536,
            index_params: None,
            include_exact: true,
            include_quantized: true,
            memory_budget: 4 << 30,
            seed: 0,
        }
    }
}

impl BenchConfig {
    fn params_for(&self, size: usize) -> IndexParams {
        let mut p = self.index_params.unwrap_or_else(|| IndexParams::scaled_for(size));
        p.training_sample = self.training_sample;
        p.seed = self.seed;
        p
    }

    /// Estimated bytes held while benchmarking a bank of `size` keys.
    pub fn estimated_bytes(&self, size: usize) -> Option<usize> {
        let label = Task::Segmentation {
            num_classes: self.num_classes,
        }
        .label_width();
        let per_row = 4 * self.dim + 4 * label + 16;
        let index = if self.include_quantized {
            4 + (self.dim / self.params_for(size).dims_per_block).div_ceil(2)
        } else {
            0
        };
        size.checked_mul(per_row + index)
    }
}

fn synthetic_bank(size: usize, cfg: &BenchConfig) -> MemoryBank {
    let task = Task::Segmentation {
        num_classes: cfg.num_classes,
    };
    let width = task.label_width();
    let keys = clustered_unit_vectors(size, cfg.dim, cfg.clusters, cfg.spread, cfg.seed);
    let mut values = vec![0.0f32; size * width];
    for (row, v) in values.chunks_exact_mut(width).enumerate() {
        v[row % cfg.num_classes] = 1.0;
    }
    let provenance = (0..size)
        .map(|i| Provenance {
            image_id: i as u64,
            epoch: 0,
            patch: 0,
        })
        .collect();
    MemoryBank {
        dim: cfg.dim,
        task,
        keys,
        values,
        provenance,
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times `reps` decodes of `grid`, doubling the batch until it outlasts
/// the timer resolution. Returns per-image latencies in microseconds.
fn time_decode(
    grid: &FeatureGrid,
    index: &AnnIndex,
    bank: &MemoryBank,
    decode: &DecodeConfig,
    cfg: &BenchConfig,
) -> Result<Vec<f64>> {
    for _ in 0..cfg.warmup {
        decode_image(grid, index, bank, decode)?;
    }
    let mut per_batch = 1usize;
    for _ in 0..MAX_REPEAT_DOUBLINGS {
        let start = Instant::now();
        for _ in 0..per_batch {
            decode_image(grid, index, bank, decode)?;
        }
        if start.elapsed() >= MIN_BATCH {
            break;
        }
        per_batch *= 2;
    }
    let mut out = Vec::with_capacity(cfg.repetitions.max(1));
    for _ in 0..cfg.repetitions.max(1) {
        let start = Instant::now();
        for _ in 0..per_batch {
            std::hint::black_box(decode_image(grid, index, bank, decode)?);
        }
        out.push(start.elapsed().as_secs_f64() * 1e6 / per_batch as f64);
    }
    Ok(out)
}

fn mean_recall(
    index: &AnnIndex,
    exact: &AnnIndex,
    keys: KeySet<'_>,
    grid: &FeatureGrid,
    decode: &DecodeConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for q in grid.patches() {
        let approx = index.search(keys, q, decode.k, &decode.search)?;
        let truth = exact.search(keys, q, decode.k, &decode.search)?;
        total += recall_at_k(&approx, &truth, decode.k)?;
    }
    Ok(total / grid.num_patches() as f64)
}

/// Runs the sweep. Sizes must be ascending and positive; every size is
/// checked against the memory budget before any bank is built.
pub fn run_latency_sweep(sizes: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() {
        return Err(Error::Usage("no bank sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::Usage(format!("bank sizes {sizes:?} must be positive and ascending")));
    }
    if cfg.dim == 0 || cfg.num_classes == 0 || cfg.grid_height == 0 || cfg.grid_width == 0 {
        return Err(Error::Usage("bench dimensions must be positive".into()));
    }
    for &size in sizes {
        match cfg.estimated_bytes(size) {
            Some(b) if b <= cfg.memory_budget => {}
            est => {
                return Err(Error::Budget(format!(
                    "bank of {size} keys needs about {} bytes, budget is {}",
                    est.map_or_else(|| "overflowing".to_string(), |b| b.to_string()),
                    cfg.memory_budget
                )))
            }
        }
    }

    // Queries share the banks' cluster centers (same seed) with fresh noise.
    // The noise stream is keyed by the row count, so draw a count no bank
    // uses and keep the first rows.
    let n_queries = cfg.grid_height * cfg.grid_width;
    let mut drawn = n_queries;
    while sizes.contains(&drawn) {
        drawn += 1;
    }
    let mut query_data = clustered_unit_vectors(drawn, cfg.dim, cfg.clusters, cfg.spread, cfg.seed);
    query_data.truncate(n_queries * cfg.dim);
    let grid = FeatureGrid::new(u64::MAX, cfg.grid_height, cfg.grid_width, cfg.dim, query_data)?;

    let mut rows = Vec::new();
    for &size in sizes {
        let bank = synthetic_bank(size, cfg);
        let keys = KeySet::from(&bank);
        let exact = AnnIndex::build_exact(keys)?;
        let base = DecodeConfig {
            k: cfg.k,
            temperature: cfg.temperature,
            ..DecodeConfig::default()
        };
        let mut modes: Vec<(AnnIndex, DecodeConfig, usize, usize)> = Vec::new();
        if cfg.include_exact {
            modes.push((exact.clone(), base, 0, 0));
        }
        if cfg.include_quantized {
            let params = cfg.params_for(size);
            let q = AnnIndex::build_quantized(keys, &params)?;
            let decode = DecodeConfig {
                search: params.search_params(),
                ..base
            };
            modes.push((q, decode, params.leaves_to_search, params.reorder_n));
        }
        for (index, decode, leaves, reorder) in &modes {
            let mut lat = time_decode(&grid, index, &bank, decode, cfg)?;
            let recall = if size <= RECALL_LIMIT {
                Some(mean_recall(index, &exact, keys, &grid, decode)?)
            } else {
                None
            };
            let mean = lat.iter().sum::<f64>() / lat.len() as f64;
            lat.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                bank_size: size,
                index_mode: index.mode_name().to_string(),
                k: cfg.k,
                leaves_to_search: *leaves,
                reorder_n: *reorder,
                mean_latency_us: mean,
                p50_us: percentile(&lat, 0.5),
                p95_us: percentile(&lat, 0.95),
                recall_at_k: recall,
                seed: cfg.seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("writing bench csv", e))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Latency (ms, linear) against bank size (log scale), one polyline per
/// index mode in order of first appearance.
pub fn render_svg(rows: &[BenchRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Usage("cannot plot an empty benchmark".into()));
    }
    let mut modes: Vec<&str> = Vec::new();
    for r in rows {
        if !modes.contains(&r.index_mode.as_str()) {
            modes.push(&r.index_mode);
        }
    }
    let lx = |n: usize| (n.max(1) as f64).log10();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y1: f64 = 0.0;
    for r in rows {
        x0 = x0.min(lx(r.bank_size));
        x1 = x1.max(lx(r.bank_size));
        y1 = y1.max(r.mean_latency_us / 1e3);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let px = |n: usize| MARGIN + (lx(n) - x0) / (x1 - x0) * (SVG_W - 2.0 * MARGIN);
    let py = |ms: f64| SVG_H - MARGIN - ms / y1 * (SVG_H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m:.1} {t:.1} V{b:.1} H{r:.1}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN
    );
    let mut decade = x0.floor() as i32;
    while decade as f64 <= x1.ceil() {
        let v = decade as f64;
        if v >= x0 - 1e-9 && v <= x1 + 1e-9 {
            let x = MARGIN + (v - x0) / (x1 - x0) * (SVG_W - 2.0 * MARGIN);
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{y:.1}" font-size="12" text-anchor="middle">1e{decade}</text>"#,
                y = SVG_H - MARGIN + 18.0
            );
        }
        decade += 1;
    }
    let _ = writeln!(
        s,
        r#"<text x="{x:.1}" y="{y:.1}" font-size="12" text-anchor="end">{y1:.3} ms</text>"#,
        x = MARGIN - 6.0,
        y = MARGIN + 4.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{x:.1}" y="{y:.1}" font-size="13" text-anchor="middle">memory bank length</text>"#,
        x = SVG_W / 2.0,
        y = SVG_H - 15.0
    );
    for (i, mode) in modes.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.index_mode == *mode)
            .map(|r| format!("{:.2},{:.2}", px(r.bank_size), py(r.mean_latency_us / 1e3)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="12" fill="{color}">{mode}</text>"#,
            x = SVG_W - MARGIN + 6.0,
            y = MARGIN + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the plot to `path` and the CSV next to it (same stem, `.csv`).
pub fn emit_plot(rows: &[BenchRow], path: &Path) -> Result<()> {
    let svg = render_svg(rows)?;
    std::fs::write(path, svg).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let csv_path = path.with_extension("csv");
    let f = std::fs::File::create(&csv_path)
        .map_err(|e| Error::io(format!("creating {}", csv_path.display()), e))?;
    write_csv(rows, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_use_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.95), 4.0);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }

    #[test]
    fn budget_is_checked_before_building() {
        let cfg = BenchConfig {
            memory_budget: 1000,
            ..BenchConfig::default()
        };
        let err = run_latency_sweep(&[10, 1_000_000_000], &cfg).unwrap_err();
        assert!(matches!(err, Error::Budget(_)), "{err}");
    }
}
