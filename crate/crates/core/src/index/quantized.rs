use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use super::kmeans::{best_dot_center, kmeans, nearest_center, spherical_kmeans};
use super::{IndexParams, KeySet, Neighbor, SearchParams, TopK};
use crate::rng::stream;
use crate::{math, Error, Result};

/// Centers per block codebook; codes are 4 bits.
pub const CODEBOOK_SIZE: usize = 16;

const PARTITION_STREAM: u64 = 0x5041_5254;
const CODEBOOK_STREAM: u64 = 0x434f_4445;
const SAMPLE_STREAM: u64 = 0x5341_4d50;

/// Partitioned index with 4-bit block codes per row.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedIndex {
    dim: usize,
    len: usize,
    params: IndexParams,
    /// `num_leaves × dim` unit centroids.
    centroids: Vec<f32>,
    /// `num_blocks × 16 × dims_per_block`, trained on raw key sub-vectors.
    codebooks: Vec<f32>,
    /// Leaf of every row.
    assignment: Vec<u32>,
    /// Packed codes in row order; low nibble holds the even block.
    codes: Vec<u8>,
    /// Per leaf: member rows ascending, and their packed codes contiguously.
    leaf_rows: Vec<Vec<u32>>,
    leaf_codes: Vec<Vec<u8>>,
}

impl QuantizedIndex {
    pub fn build(keys: KeySet<'_>, params: &IndexParams) -> Result<Self> {
        params.validate(keys.dim)?;
        let len = keys.len();
        if len == 0 {
            return Err(Error::Empty("cannot index an empty bank"));
        }
        if params.num_leaves > len {
            return Err(Error::config(format!(
                "num_leaves {} exceeds bank length {len}",
                params.num_leaves
            )));
        }
        let dim = keys.dim;
        let dpb = params.dims_per_block;
        let num_blocks = dim / dpb;

        let training: Vec<f32> = if params.training_sample > 0 && params.training_sample < len {
            let mut rng = stream(params.seed, &[SAMPLE_STREAM]);
            let mut rows = sample(&mut rng, len, params.training_sample).into_vec();
            rows.sort_unstable();
            rows.iter().flat_map(|&r| keys.row(r).iter().copied()).collect()
        } else {
            keys.data.to_vec()
        };
        if training.len() / dim < params.num_leaves {
            return Err(Error::config(format!(
                "training sample of {} rows is smaller than num_leaves {}",
                training.len() / dim,
                params.num_leaves
            )));
        }

        let mut rng = stream(params.seed, &[PARTITION_STREAM]);
        let centroids = spherical_kmeans(
            &training,
            dim,
            params.num_leaves,
            params.kmeans_iters,
            &mut rng,
        );

        let mut codebooks = Vec::with_capacity(num_blocks * CODEBOOK_SIZE * dpb);
        for b in 0..num_blocks {
            let sub: Vec<f32> = training
                .chunks_exact(dim)
                .flat_map(|row| row[b * dpb..(b + 1) * dpb].iter().copied())
                .collect();
            let mut rng = stream(params.seed, &[CODEBOOK_STREAM, b as u64]);
            codebooks.extend(kmeans(
                &sub,
                dpb,
                CODEBOOK_SIZE,
                params.kmeans_iters,
                &mut rng,
            ));
        }
        drop(training);

        let mut assignment = Vec::with_capacity(len);
        let bytes_per_row = num_blocks.div_ceil(2);
        let mut codes = vec![0u8; len * bytes_per_row];
        for (row, key) in keys.data.chunks_exact(dim).enumerate() {
            assignment.push(best_dot_center(key, &centroids, dim) as u32);
            let packed = &mut codes[row * bytes_per_row..(row + 1) * bytes_per_row];
            for b in 0..num_blocks {
                let book = &codebooks[b * CODEBOOK_SIZE * dpb..(b + 1) * CODEBOOK_SIZE * dpb];
                let code = nearest_center(&key[b * dpb..(b + 1) * dpb], book, dpb) as u8;
                packed[b / 2] |= if b % 2 == 0 { code } else { code << 4 };
            }
        }
        Self::from_parts(dim, *params, centroids, codebooks, assignment, codes)
    }

    /// Reassembles an index from its stored parts, rebuilding leaf lists.
    pub fn from_parts(
        dim: usize,
        params: IndexParams,
        centroids: Vec<f32>,
        codebooks: Vec<f32>,
        assignment: Vec<u32>,
        codes: Vec<u8>,
    ) -> Result<Self> {
        params.validate(dim)?;
        let len = assignment.len();
        let num_blocks = dim / params.dims_per_block;
        let bytes_per_row = num_blocks.div_ceil(2);
        if centroids.len() != params.num_leaves * dim
            || codebooks.len() != num_blocks * CODEBOOK_SIZE * params.dims_per_block
            || codes.len() != len * bytes_per_row
        {
            return Err(Error::shape("quantized index parts have inconsistent sizes"));
        }
        if let Some(&leaf) = assignment.iter().find(|&&l| l as usize >= params.num_leaves) {
            return Err(Error::input(format!("row assigned to missing leaf {leaf}")));
        }
        let mut leaf_rows = vec![Vec::new(); params.num_leaves];
        let mut leaf_codes = vec![Vec::new(); params.num_leaves];
        for (row, &leaf) in assignment.iter().enumerate() {
            leaf_rows[leaf as usize].push(row as u32);
            leaf_codes[leaf as usize]
                .extend_from_slice(&codes[row * bytes_per_row..(row + 1) * bytes_per_row]);
        }
        Ok(QuantizedIndex {
            dim,
            len,
            params,
            centroids,
            codebooks,
            assignment,
            codes,
            leaf_rows,
            leaf_codes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn codebooks(&self) -> &[f32] {
        &self.codebooks
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn num_blocks(&self) -> usize {
        self.dim / self.params.dims_per_block
    }

    /// Rows stored in each leaf.
    pub fn leaf_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.leaf_rows.iter().map(Vec::len)
    }

    /// Codebook reconstruction of `row`.
    pub fn decode_row(&self, row: usize) -> Vec<f32> {
        let dpb = self.params.dims_per_block;
        let bytes_per_row = self.num_blocks().div_ceil(2);
        let packed = &self.codes[row * bytes_per_row..(row + 1) * bytes_per_row];
        let mut out = Vec::with_capacity(self.dim);
        for b in 0..self.num_blocks() {
            let code = (packed[b / 2] >> (4 * (b % 2))) as usize & 0xF;
            let start = (b * CODEBOOK_SIZE + code) * dpb;
            out.extend_from_slice(&self.codebooks[start..start + dpb]);
        }
        out
    }

    /// Searches with an already normalized query.
    pub(crate) fn search(
        &self,
        keys: KeySet<'_>,
        query: &[f32],
        k: usize,
        params: &SearchParams,
    ) -> Result<Vec<Neighbor>> {
        let k = k.min(self.len);
        if params.leaves_to_search == 0 || params.leaves_to_search > self.params.num_leaves {
            return Err(Error::config(format!(
                "leaves_to_search {} must lie in 1..={}",
                params.leaves_to_search, self.params.num_leaves
            )));
        }
        if params.reorder_n < k {
            return Err(Error::config(format!(
                "reorder_n {} is smaller than k {k}",
                params.reorder_n
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }

        let mut leaves = TopK::new(params.leaves_to_search);
        for (leaf, centroid) in self.centroids.chunks_exact(self.dim).enumerate() {
            leaves.push(leaf as u32, math::dot(query, centroid));
        }

        // Lookup table over byte values: two blocks per packed byte.
        let dpb = self.params.dims_per_block;
        let num_blocks = self.num_blocks();
        let mut block_lut = vec![0.0f32; num_blocks * CODEBOOK_SIZE];
        for b in 0..num_blocks {
            let q = &query[b * dpb..(b + 1) * dpb];
            for c in 0..CODEBOOK_SIZE {
                let start = (b * CODEBOOK_SIZE + c) * dpb;
                block_lut[b * CODEBOOK_SIZE + c] = math::dot(q, &self.codebooks[start..start + dpb]);
            }
        }
        let bytes_per_row = num_blocks.div_ceil(2);
        let mut byte_lut = vec![0.0f32; bytes_per_row * 256];
        for p in 0..bytes_per_row {
            for byte in 0..256usize {
                let lo = block_lut[2 * p * CODEBOOK_SIZE + (byte & 0xF)];
                let hi = if 2 * p + 1 < num_blocks {
                    block_lut[(2 * p + 1) * CODEBOOK_SIZE + (byte >> 4)]
                } else {
                    0.0
                };
                byte_lut[p * 256 + byte] = lo + hi;
            }
        }

        let mut candidates = TopK::new(params.reorder_n);
        for leaf in leaves.into_sorted() {
            let rows = &self.leaf_rows[leaf.row as usize];
            let codes = &self.leaf_codes[leaf.row as usize];
            for (&row, packed) in rows.iter().zip(codes.chunks_exact(bytes_per_row)) {
                let score: f32 = packed
                    .iter()
                    .enumerate()
                    .map(|(p, &byte)| byte_lut[p * 256 + byte as usize])
                    .sum();
                candidates.push(row, score);
            }
        }

        let mut top = TopK::new(k);
        for cand in candidates.into_sorted() {
            top.push(cand.row, math::dot(query, keys.row(cand.row as usize)));
        }
        Ok(top.into_sorted())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::AnnIndex;

    fn params(num_leaves: usize, dims_per_block: usize) -> IndexParams {
        IndexParams {
            num_leaves,
            leaves_to_search: num_leaves,
            dims_per_block,
            reorder_n: 10,
            kmeans_iters: 10,
            seed: 5,
            training_sample: 0,
        }
    }

    #[test]
    fn sixteen_keys_reconstruct_exactly() {
        let data = crate::synth::clustered_unit_vectors(16, 8, 16, 0.5, 2);
        let keys = KeySet::new(&data, 8).unwrap();
        let index = QuantizedIndex::build(keys, &params(1, 8)).unwrap();
        for row in 0..16 {
            assert_eq!(index.decode_row(row), keys.row(row));
        }
    }

    #[test]
    fn same_seed_same_index() {
        let data = crate::synth::clustered_unit_vectors(500, 16, 10, 0.2, 7);
        let keys = KeySet::new(&data, 16).unwrap();
        let a = QuantizedIndex::build(keys, &params(8, 4)).unwrap();
        let b = QuantizedIndex::build(keys, &params(8, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.leaf_sizes().sum::<usize>(), 500);
    }

    #[test]
    fn too_many_leaves_rejected() {
        let data = crate::synth::clustered_unit_vectors(4, 4, 2, 0.2, 7);
        let keys = KeySet::new(&data, 4).unwrap();
        assert!(QuantizedIndex::build(keys, &params(5, 4)).is_err());
    }

    #[test]
    fn bad_block_width_rejected() {
        let data = crate::synth::clustered_unit_vectors(40, 6, 2, 0.2, 7);
        let keys = KeySet::new(&data, 6).unwrap();
        assert!(QuantizedIndex::build(keys, &params(2, 4)).unwrap_err().is_config());
    }

    #[test]
    fn self_match_scores_one() {
        let data = crate::synth::clustered_unit_vectors(300, 16, 6, 0.3, 1);
        let keys = KeySet::new(&data, 16).unwrap();
        let index = AnnIndex::build_quantized(keys, &params(4, 4)).unwrap();
        let sp = SearchParams {
            leaves_to_search: 4,
            reorder_n: 20,
        };
        for row in [0usize, 17, 299] {
            let hits = index.search(keys, keys.row(row), 5, &sp).unwrap();
            assert!(hits
                .iter()
                .any(|n| n.row as usize == row && (n.score - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn reorder_below_k_rejected() {
        let data = crate::synth::clustered_unit_vectors(50, 8, 3, 0.3, 1);
        let keys = KeySet::new(&data, 8).unwrap();
        let index = AnnIndex::build_quantized(keys, &params(2, 4)).unwrap();
        let sp = SearchParams {
            leaves_to_search: 1,
            reorder_n: 3,
        };
        assert!(index.search(keys, keys.row(0), 5, &sp).is_err());
    }
}
