//! Cosine top-k search over bank keys.
//!
//! [`AnnIndex::Exact`] scans every key. [`AnnIndex::Quantized`] partitions
//! keys into leaves with spherical k-means, scores the rows of the nearest
//! leaves through per-block codebook lookup tables, then rescores the best
//! `reorder_n` candidates exactly against the stored keys.
//!
//! Queries are normalized internally, so returned scores are cosines.
//! Results are sorted by descending score with ties going to the lower row.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::bank::MemoryBank;
use crate::{math, Error, Result};

pub mod kmeans;
mod quantized;

pub use quantized::{QuantizedIndex, CODEBOOK_SIZE};

/// Borrowed `len × dim` matrix of unit keys.
#[derive(Debug, Clone, Copy)]
pub struct KeySet<'a> {
    pub data: &'a [f32],
    pub dim: usize,
}

impl<'a> KeySet<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::shape(format!(
                "{} key values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(KeySet { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

impl<'a> From<&'a MemoryBank> for KeySet<'a> {
    fn from(bank: &'a MemoryBank) -> Self {
        KeySet {
            data: &bank.keys,
            dim: bank.dim,
        }
    }
}

/// Build-time parameters of the quantized index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexParams {
    pub num_leaves: usize,
    pub leaves_to_search: usize,
    pub dims_per_block: usize,
    pub reorder_n: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Rows used to train partitions and codebooks; 0 trains on all keys.
    pub training_sample: usize,
}

/// Reference configuration for banks of about ten million keys.
pub const TABLE_PARAMS: IndexParams = IndexParams {
    num_leaves: 512,
    leaves_to_search: 32,
    dims_per_block: 4,
    reorder_n: 120,
    kmeans_iters: 10,
    seed: 0,
    training_sample: 0,
};

impl Default for IndexParams {
    fn default() -> Self {
        TABLE_PARAMS
    }
}

impl IndexParams {
    /// Parameters scaled to a bank of `len` keys.
    ///
    /// Below `10 · 512²` keys the leaf count is `max(1, round(√len / 2))`
    /// and the searched leaves keep the reference ratio of 32 in 512
    /// (rounded up); larger banks use the reference values unchanged.
    pub fn scaled_for(len: usize) -> Self {
        let reference = TABLE_PARAMS;
        if len >= 10 * reference.num_leaves * reference.num_leaves {
            return reference;
        }
        let num_leaves = (libm::round(libm::sqrt(len as f64) / 2.0) as usize).clamp(1, len.max(1));
        let leaves_to_search = (num_leaves * reference.leaves_to_search)
            .div_ceil(reference.num_leaves)
            .clamp(1, num_leaves);
        IndexParams {
            num_leaves,
            leaves_to_search,
            ..reference
        }
    }

    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            leaves_to_search: self.leaves_to_search,
            reorder_n: self.reorder_n,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.num_leaves == 0 {
            return Err(Error::config("num_leaves must be at least 1"));
        }
        if self.leaves_to_search == 0 || self.leaves_to_search > self.num_leaves {
            return Err(Error::config(format!(
                "leaves_to_search {} must lie in 1..={}",
                self.leaves_to_search, self.num_leaves
            )));
        }
        if self.dims_per_block == 0 || dim % self.dims_per_block != 0 {
            return Err(Error::config(format!(
                "dims_per_block {} does not divide dimension {dim}",
                self.dims_per_block
            )));
        }
        Ok(())
    }
}

/// Query-time knobs of the quantized index; ignored by the exact index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    pub leaves_to_search: usize,
    pub reorder_n: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        TABLE_PARAMS.search_params()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: u32,
    pub score: f32,
}

/// Heap entry ordered so that the worst candidate is the maximum.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Worst(pub Neighbor);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .score
            .total_cmp(&self.0.score)
            .then(self.0.row.cmp(&other.0.row))
    }
}

/// Bounded collector of the best `k` neighbors.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, row: u32, score: f32) {
        let cand = Worst(Neighbor { row, score });
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(worst) = self.heap.peek() {
            if cand < *worst {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    /// Neighbors best-first.
    pub fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec().into_iter().map(|w| w.0).collect()
    }
}

/// Immutable search structure over the keys it was built from.
#[derive(Debug, Clone, PartialEq)]
pub enum AnnIndex {
    Exact { len: usize, dim: usize },
    Quantized(QuantizedIndex),
}

impl AnnIndex {
    /// Brute-force index.
    pub fn build_exact(keys: KeySet<'_>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Empty("cannot index an empty bank"));
        }
        Ok(AnnIndex::Exact {
            len: keys.len(),
            dim: keys.dim,
        })
    }

    /// Partitioned, block-quantized index with exact reordering.
    pub fn build_quantized(keys: KeySet<'_>, params: &IndexParams) -> Result<Self> {
        QuantizedIndex::build(keys, params).map(AnnIndex::Quantized)
    }

    pub fn len(&self) -> usize {
        match self {
            AnnIndex::Exact { len, .. } => *len,
            AnnIndex::Quantized(q) => q.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            AnnIndex::Exact { dim, .. } => *dim,
            AnnIndex::Quantized(q) => q.dim(),
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            AnnIndex::Exact { .. } => "exact",
            AnnIndex::Quantized(_) => "quantized",
        }
    }

    /// Top `min(k, len)` rows of `keys` by cosine similarity to `query`.
    pub fn search(
        &self,
        keys: KeySet<'_>,
        query: &[f32],
        k: usize,
        params: &SearchParams,
    ) -> Result<Vec<Neighbor>> {
        self.check_keys(keys)?;
        let query = normalized_query(query, self.dim())?;
        match self {
            AnnIndex::Exact { .. } => Ok(exact_search(keys, &query, k)),
            AnnIndex::Quantized(q) => q.search(keys, &query, k, params),
        }
    }

    /// Searches every query in `queries` (row-major, `dim` per row).
    /// Results match calling [`AnnIndex::search`] once per row.
    pub fn search_batch(
        &self,
        keys: KeySet<'_>,
        queries: &[f32],
        k: usize,
        params: &SearchParams,
    ) -> Result<Vec<Vec<Neighbor>>> {
        self.check_keys(keys)?;
        let dim = self.dim();
        if queries.len() % dim != 0 {
            return Err(Error::Dimension {
                expected: dim,
                actual: queries.len() % dim,
            });
        }
        let mut normed = Vec::with_capacity(queries.len());
        for q in queries.chunks_exact(dim) {
            normed.extend(normalized_query(q, dim)?);
        }
        match self {
            AnnIndex::Exact { .. } => Ok(exact_search_batch(keys, &normed, k)),
            AnnIndex::Quantized(q) => normed.chunks_exact(dim).map(|row| q.search(keys, row, k, params)).collect(),
        }
    }

    fn check_keys(&self, keys: KeySet<'_>) -> Result<()> {
        if keys.len() != self.len() || keys.dim != self.dim() {
            return Err(Error::shape(format!(
                "index covers {}x{} keys, got {}x{}",
                self.len(),
                self.dim(),
                keys.len(),
                keys.dim
            )));
        }
        Ok(())
    }
}

pub(crate) fn normalized_query(query: &[f32], dim: usize) -> Result<Vec<f32>> {
    if query.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: query.len(),
        });
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("query vector".into()));
    }
    let mut q = query.to_vec();
    if !math::normalize(&mut q) {
        return Err(Error::input("zero query vector"));
    }
    Ok(q)
}

fn exact_search(keys: KeySet<'_>, query: &[f32], k: usize) -> Vec<Neighbor> {
    let mut top = TopK::new(k.min(keys.len()));
    for (row, key) in keys.data.chunks_exact(keys.dim).enumerate() {
        top.push(row as u32, math::dot(query, key));
    }
    top.into_sorted()
}

/// Rows per key block in batched exact search; a block of 64-dim keys
/// stays in L2 while every query visits it.
const KEY_BLOCK: usize = 1024;

fn exact_search_batch(keys: KeySet<'_>, queries: &[f32], k: usize) -> Vec<Vec<Neighbor>> {
    let dim = keys.dim;
    let mut tops: Vec<TopK> = (0..queries.len() / dim).map(|_| TopK::new(k.min(keys.len()))).collect();
    for (b, block) in keys.data.chunks(KEY_BLOCK * dim).enumerate() {
        let base = b * KEY_BLOCK;
        for (query, top) in queries.chunks_exact(dim).zip(tops.iter_mut()) {
            for (i, key) in block.chunks_exact(dim).enumerate() {
                top.push((base + i) as u32, math::dot(query, key));
            }
        }
    }
    tops.into_iter().map(TopK::into_sorted).collect()
}

/// Fraction of the exact result's rows that the approximate result recovers.
///
/// Both lists must come from the same query with the same requested `k`:
/// equal lengths, at most `k` entries.
pub fn recall_at_k(approx: &[Neighbor], exact: &[Neighbor], k: usize) -> Result<f64> {
    if approx.len() != exact.len() || exact.len() > k || exact.is_empty() {
        return Err(Error::input(format!(
            "recall needs equal non-empty result lists of at most k={k}, got {} and {}",
            approx.len(),
            exact.len()
        )));
    }
    let hits = approx
        .iter()
        .filter(|a| exact.iter().any(|e| e.row == a.row))
        .count();
    Ok(hits as f64 / exact.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn basis3() -> Vec<f32> {
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    }

    #[test]
    fn orthonormal_lookup() {
        let data = basis3();
        let keys = KeySet::new(&data, 3).unwrap();
        let index = AnnIndex::build_exact(keys).unwrap();
        let hits = index
            .search(keys, &[0.0, 1.0, 0.0], 1, &SearchParams::default())
            .unwrap();
        assert_eq!(hits, vec![Neighbor { row: 1, score: 1.0 }]);
    }

    #[test]
    fn k_saturates_and_sorts() {
        let data = basis3();
        let keys = KeySet::new(&data, 3).unwrap();
        let index = AnnIndex::build_exact(keys).unwrap();
        let hits = index
            .search(keys, &[0.2, 0.5, 0.3], 10, &SearchParams::default())
            .unwrap();
        let rows: Vec<u32> = hits.iter().map(|n| n.row).collect();
        assert_eq!(rows, vec![1, 2, 0]);
    }

    #[test]
    fn ties_go_to_lower_row() {
        let data = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let keys = KeySet::new(&data, 2).unwrap();
        let index = AnnIndex::build_exact(keys).unwrap();
        let hits = index
            .search(keys, &[2.0, 0.0], 2, &SearchParams::default())
            .unwrap();
        assert_eq!(hits[0].row, 0);
        assert_eq!(hits[1].row, 2);
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn batch_matches_single_queries() {
        let dim = 8;
        let n = 3000;
        let data: Vec<f32> = (0..n * dim).map(|i| ((i * 37 % 101) as f32 - 50.0) / 7.0).collect();
        let queries: Vec<f32> = (0..5 * dim).map(|i| ((i * 13 % 29) as f32 - 14.0) / 3.0).collect();
        let keys = KeySet::new(&data, dim).unwrap();
        let exact = AnnIndex::build_exact(keys).unwrap();
        let params = IndexParams::scaled_for(n);
        let quant = AnnIndex::build_quantized(keys, &params).unwrap();
        for index in [exact, quant] {
            let p = params.search_params();
            let batch = index.search_batch(keys, &queries, 7, &p).unwrap();
            for (q, hits) in queries.chunks_exact(dim).zip(&batch) {
                assert_eq!(*hits, index.search(keys, q, 7, &p).unwrap());
            }
        }
    }

    #[test]
    fn zero_query_rejected() {
        let data = basis3();
        let keys = KeySet::new(&data, 3).unwrap();
        let index = AnnIndex::build_exact(keys).unwrap();
        assert!(index
            .search(keys, &[0.0; 3], 1, &SearchParams::default())
            .is_err());
    }

    #[test]
    fn empty_bank_rejected() {
        let keys = KeySet::new(&[], 3).unwrap();
        assert!(matches!(AnnIndex::build_exact(keys), Err(Error::Empty(_))));
    }

    fn ids(rows: &[u32]) -> Vec<Neighbor> {
        rows.iter().map(|&row| Neighbor { row, score: 0.0 }).collect()
    }

    #[test]
    fn recall_cases() {
        let exact = ids(&(0..30).collect::<Vec<_>>());
        assert_eq!(recall_at_k(&exact, &exact, 30).unwrap(), 1.0);
        let disjoint = ids(&(100..130).collect::<Vec<_>>());
        assert_eq!(recall_at_k(&disjoint, &exact, 30).unwrap(), 0.0);
        // 27 shared ids, 3 replaced.
        let mut partial: Vec<u32> = (0..27).collect();
        partial.extend([200, 201, 202]);
        assert!((recall_at_k(&ids(&partial), &exact, 30).unwrap() - 0.9).abs() < 1e-12);
        assert!(recall_at_k(&exact[..29], &exact, 30).is_err());
    }

    #[test]
    fn scaled_params() {
        let p = IndexParams::scaled_for(100_000);
        assert_eq!(p.num_leaves, 158);
        assert_eq!(p.leaves_to_search, 10);
        assert_eq!(IndexParams::scaled_for(1).num_leaves, 1);
        assert_eq!(IndexParams::scaled_for(20_000_000), TABLE_PARAMS);
    }
}
