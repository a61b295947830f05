//! `HBFS0001` feature sets.
//!
//! Header: magic, `version u32 = 1`, `task u8` (0 segmentation, 1 depth),
//! `dim u32`, `num_classes u32` (0 for depth), `num_epochs u32`,
//! `num_images u32` (per epoch). Images follow epoch by epoch, each as
//! `image_id u64, H u32, W u32, features f32[H·W·D]`, then either
//! `u16[256·H·W]` class ids or `f32[256·H·W]` depths plus an LSB-first
//! validity bitset of `ceil(256·H·W / 8)` bytes. Version 1 implies 16-pixel
//! patches.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nnscene_core::feature::LabeledImage;
use nnscene_core::{FeatureGrid, FeatureSet, PixelLabels, Task, PATCH_PIXELS, PATCH_SIZE};

use super::{pack_bits, unpack_bits, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HBFS0001";
pub const VERSION: u32 = 1;

pub(crate) fn task_code(task: Task) -> u8 {
    match task {
        Task::Segmentation { .. } => 0,
        Task::Depth => 1,
    }
}

pub fn write_feature_set<W: Write>(set: &FeatureSet, out: W) -> Result<W> {
    set.validate()?;
    let mut w = Writer::new(out);
    w.raw(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(task_code(set.task))?;
    w.len32(set.dim, "dim")?;
    w.len32(set.task.num_classes(), "num_classes")?;
    w.len32(set.num_epochs(), "num_epochs")?;
    w.len32(set.num_images(), "num_images")?;
    for image in set.epochs.iter().flatten() {
        let g = &image.grid;
        w.u64(g.image_id)?;
        w.len32(g.height, "height")?;
        w.len32(g.width, "width")?;
        w.f32s(&g.features)?;
        match &image.labels {
            PixelLabels::Segmentation { classes, .. } => w.u16s(classes)?,
            PixelLabels::Depth { depth, valid, .. } => {
                w.f32s(depth)?;
                w.raw(&pack_bits(valid))?;
            }
        }
    }
    w.finish()
}

pub fn read_feature_set<R: Read>(input: R) -> Result<FeatureSet> {
    let mut r = Reader::new(input, "HBFS");
    r.magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(at, format!("unsupported version {version}, expected {VERSION}")));
    }
    let at = r.offset();
    let task_byte = r.u8("task")?;
    let dim = r.u32("dim")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    let task = match task_byte {
        0 => Task::Segmentation { num_classes },
        1 if num_classes == 0 => Task::Depth,
        1 => return Err(r.error(at, "depth set declares classes")),
        t => return Err(r.error(at, format!("unknown task code {t}"))),
    };
    let num_epochs = r.u32("num_epochs")? as usize;
    let num_images = r.u32("num_images")? as usize;
    if num_epochs == 0 {
        return Err(r.error(at, "feature set declares zero epochs"));
    }

    let mut epochs = Vec::with_capacity(num_epochs);
    for _ in 0..num_epochs {
        let mut images = Vec::new();
        for _ in 0..num_images {
            let start = r.offset();
            let image_id = r.u64("image_id")?;
            let height = r.u32("height")? as usize;
            let width = r.u32("width")? as usize;
            let n_feat = r.checked_len(&[height, width, dim], "features")?;
            let features = r.f32s(n_feat, "features")?;
            let pixels = r.checked_len(&[height, width, PATCH_PIXELS], "labels")?;
            let (ph, pw) = (height * PATCH_SIZE, width * PATCH_SIZE);
            let labels = match task {
                Task::Segmentation { .. } => PixelLabels::Segmentation {
                    height: ph,
                    width: pw,
                    classes: r.u16s(pixels, "class ids")?,
                },
                Task::Depth => {
                    let depth = r.f32s(pixels, "depth")?;
                    let bits = r.bytes(pixels.div_ceil(8), "validity bitset")?;
                    PixelLabels::Depth {
                        height: ph,
                        width: pw,
                        depth,
                        valid: unpack_bits(&bits, pixels),
                    }
                }
            };
            let grid = FeatureGrid {
                image_id,
                height,
                width,
                dim,
                features,
            };
            let image = LabeledImage { grid, labels };
            image
                .grid
                .validate()
                .and_then(|_| image.labels.validate(task))
                .map_err(|e| r.error(start, format!("image {image_id}: {e}")))?;
            images.push(image);
        }
        epochs.push(images);
    }
    if !r.at_end()? {
        unreachable!("at_end returns an error for trailing bytes");
    }
    FeatureSet::new(task, dim, epochs).map_err(Error::from)
}

pub fn save(set: &FeatureSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_feature_set(set, BufWriter::new(file))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FeatureSet> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_feature_set(BufReader::new(file))
}
