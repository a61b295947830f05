//! `HBMB0001` memory banks with an optional `HBIX0001` index section.
//!
//! Bank: magic, `dim u32`, `task u8`, `num_classes u32`, `len u64`, keys
//! `f32[len·dim]`, values `f32[len·label_width]`, provenance
//! `(image_id u64, epoch u32, patch u32)[len]`.
//!
//! Index: magic, `mode u8` (0 exact, 1 quantized). Quantized indexes add
//! `num_leaves u32, leaves_to_search u32, dims_per_block u32, reorder_n u32,
//! kmeans_iters u32, seed u64, training_sample u64`, centroids
//! `f32[num_leaves·dim]`, codebooks `f32[blocks·16·dims_per_block]`, leaf
//! assignment `u32[len]` and packed codes `u8[len·ceil(blocks/2)]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nnscene_core::bank::{MemoryBank, Provenance};
use nnscene_core::index::{AnnIndex, IndexParams, QuantizedIndex, CODEBOOK_SIZE};
use nnscene_core::Task;

use super::hbfs::task_code;
use super::{Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HBMB0001";
pub const INDEX_MAGIC: &[u8; 8] = b"HBIX0001";

pub fn write_bank<W: Write>(bank: &MemoryBank, index: Option<&AnnIndex>, out: W) -> Result<W> {
    bank.validate()?;
    let mut w = Writer::new(out);
    w.raw(MAGIC)?;
    w.len32(bank.dim, "dim")?;
    w.u8(task_code(bank.task))?;
    w.len32(bank.task.num_classes(), "num_classes")?;
    w.u64(bank.len() as u64)?;
    w.f32s(&bank.keys)?;
    w.f32s(&bank.values)?;
    for p in &bank.provenance {
        w.u64(p.image_id)?;
        w.u32(p.epoch)?;
        w.u32(p.patch)?;
    }
    if let Some(index) = index {
        if index.len() != bank.len() || index.dim() != bank.dim {
            return Err(Error::Usage(format!(
                "index covers {}x{} keys, bank is {}x{}",
                index.len(),
                index.dim(),
                bank.len(),
                bank.dim
            )));
        }
        w.raw(INDEX_MAGIC)?;
        match index {
            AnnIndex::Exact { .. } => w.u8(0)?,
            AnnIndex::Quantized(q) => {
                w.u8(1)?;
                let p = q.params();
                w.len32(p.num_leaves, "num_leaves")?;
                w.len32(p.leaves_to_search, "leaves_to_search")?;
                w.len32(p.dims_per_block, "dims_per_block")?;
                w.len32(p.reorder_n, "reorder_n")?;
                w.len32(p.kmeans_iters, "kmeans_iters")?;
                w.u64(p.seed)?;
                w.u64(p.training_sample as u64)?;
                w.f32s(q.centroids())?;
                w.f32s(q.codebooks())?;
                w.u32s(q.assignment())?;
                w.raw(q.codes())?;
            }
        }
    }
    w.finish()
}

pub fn read_bank<R: Read>(input: R) -> Result<(MemoryBank, Option<AnnIndex>)> {
    let mut r = Reader::new(input, "HBMB");
    r.magic(MAGIC)?;
    let dim = r.u32("dim")? as usize;
    let at = r.offset();
    let task_byte = r.u8("task")?;
    let num_classes = r.u32("num_classes")? as usize;
    let task = match task_byte {
        0 => Task::Segmentation { num_classes },
        1 => Task::Depth,
        t => return Err(r.error(at, format!("unknown task code {t}"))),
    };
    let len_raw = r.u64("len")?;
    let len = r.count(len_raw, "bank length")?;
    let n_keys = r.checked_len(&[len, dim], "keys")?;
    let keys = r.f32s(n_keys, "keys")?;
    let n_values = r.checked_len(&[len, task.label_width()], "values")?;
    let values = r.f32s(n_values, "values")?;
    let prov_bytes = r.checked_len(&[len, 16], "provenance")?;
    let raw = r.bytes(prov_bytes, "provenance")?;
    let provenance = raw
        .chunks_exact(16)
        .map(|c| Provenance {
            image_id: u64::from_le_bytes(c[..8].try_into().unwrap()),
            epoch: u32::from_le_bytes(c[8..12].try_into().unwrap()),
            patch: u32::from_le_bytes(c[12..].try_into().unwrap()),
        })
        .collect();
    let bank = MemoryBank {
        dim,
        task,
        keys,
        values,
        provenance,
    };
    bank.validate().map_err(|e| r.error(at, e.to_string()))?;

    let index_at = r.offset();
    let index = match r.optional_magic()? {
        None => None,
        Some(m) if &m == INDEX_MAGIC => {
            let mode_at = r.offset();
            match r.u8("index mode")? {
                0 => Some(AnnIndex::Exact { len, dim }),
                1 => {
                    let params = IndexParams {
                        num_leaves: r.u32("num_leaves")? as usize,
                        leaves_to_search: r.u32("leaves_to_search")? as usize,
                        dims_per_block: r.u32("dims_per_block")? as usize,
                        reorder_n: r.u32("reorder_n")? as usize,
                        kmeans_iters: r.u32("kmeans_iters")? as usize,
                        seed: r.u64("seed")?,
                        training_sample: {
                            let v = r.u64("training_sample")?;
                            r.count(v, "training_sample")?
                        },
                    };
                    params
                        .validate(dim)
                        .map_err(|e| r.error(mode_at, e.to_string()))?;
                    let blocks = dim / params.dims_per_block;
                    let n_centroids = r.checked_len(&[params.num_leaves, dim], "centroids")?;
                    let centroids = r.f32s(n_centroids, "centroids")?;
                    let n_books =
                        r.checked_len(&[blocks, CODEBOOK_SIZE, params.dims_per_block], "codebooks")?;
                    let codebooks = r.f32s(n_books, "codebooks")?;
                    let assignment = r.u32s(len, "leaf assignment")?;
                    let n_codes = r.checked_len(&[len, blocks.div_ceil(2)], "codes")?;
                    let codes = r.bytes(n_codes, "codes")?;
                    let q = QuantizedIndex::from_parts(dim, params, centroids, codebooks, assignment, codes)
                        .map_err(|e| r.error(mode_at, e.to_string()))?;
                    Some(AnnIndex::Quantized(q))
                }
                m => return Err(r.error(mode_at, format!("unknown index mode {m}"))),
            }
        }
        Some(m) => {
            return Err(r.error(
                index_at,
                format!("unknown section magic {:?}", String::from_utf8_lossy(&m)),
            ))
        }
    };
    r.at_end()?;
    Ok((bank, index))
}

pub fn save(bank: &MemoryBank, index: Option<&AnnIndex>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_bank(bank, index, BufWriter::new(file))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(MemoryBank, Option<AnnIndex>)> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_bank(BufReader::new(file))
}
