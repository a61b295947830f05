//! `HBPR0001` dense predictions.
//!
//! Header: magic, `task u8`, `num_classes u32` (0 for depth), `flags u8`
//! (bit 0: distributions present), `count u32`. Each image is
//! `image_id u64, H u32, W u32`, then `u16[H·W]` classes or `f32[H·W]`
//! depths, then `f32[H·W·C]` distributions when flagged.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nnscene_core::upsample::{DenseMap, DensePrediction};
use nnscene_core::Task;

use super::hbfs::task_code;
use super::{Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HBPR0001";
const FLAG_DISTRIBUTIONS: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_id: u64,
    pub prediction: DensePrediction,
}

/// Predictions for one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub task: Task,
    /// Whether segmentation distributions were stored (and so are loaded).
    pub distributions: bool,
    pub records: Vec<PredictionRecord>,
}

fn shape(p: &DensePrediction) -> (usize, usize) {
    match p {
        DensePrediction::Segmentation { height, width, .. } | DensePrediction::Depth { height, width, .. } => {
            (*height, *width)
        }
    }
}

pub fn write_predictions<W: Write>(file: &PredictionFile, out: W) -> Result<W> {
    let with_dist = file.distributions && file.task.is_segmentation();
    let mut w = Writer::new(out);
    w.raw(MAGIC)?;
    w.u8(task_code(file.task))?;
    w.len32(file.task.num_classes(), "num_classes")?;
    w.u8(if with_dist { FLAG_DISTRIBUTIONS } else { 0 })?;
    w.len32(file.records.len(), "count")?;
    for rec in &file.records {
        let (h, wd) = shape(&rec.prediction);
        w.u64(rec.image_id)?;
        w.len32(h, "height")?;
        w.len32(wd, "width")?;
        match (&rec.prediction, file.task) {
            (DensePrediction::Segmentation { classes, distribution, .. }, Task::Segmentation { num_classes }) => {
                w.u16s(classes)?;
                if with_dist {
                    if distribution.channels != num_classes {
                        return Err(Error::Usage(format!(
                            "image {}: distribution has {} channels, expected {num_classes}",
                            rec.image_id, distribution.channels
                        )));
                    }
                    w.f32s(&distribution.values)?;
                }
            }
            (DensePrediction::Depth { depth, .. }, Task::Depth) => w.f32s(depth)?,
            _ => {
                return Err(Error::Usage(format!(
                    "image {}: prediction does not match the file task",
                    rec.image_id
                )))
            }
        }
    }
    w.finish()
}

pub fn read_predictions<R: Read>(input: R) -> Result<PredictionFile> {
    let mut r = Reader::new(input, "HBPR");
    r.magic(MAGIC)?;
    let at = r.offset();
    let task = match (r.u8("task")?, r.u32("num_classes")? as usize) {
        (0, n) if n > 0 => Task::Segmentation { num_classes: n },
        (1, 0) => Task::Depth,
        (t, n) => return Err(r.error(at, format!("invalid task {t} with {n} classes"))),
    };
    let at = r.offset();
    let flags = r.u8("flags")?;
    if flags & !FLAG_DISTRIBUTIONS != 0 || (flags != 0 && !task.is_segmentation()) {
        return Err(r.error(at, format!("invalid flags {flags:#04x}")));
    }
    let distributions = flags & FLAG_DISTRIBUTIONS != 0;
    let count = r.u32("count")? as usize;
    let mut records = Vec::new();
    for _ in 0..count {
        let image_id = r.u64("image_id")?;
        let height = r.u32("height")? as usize;
        let width = r.u32("width")? as usize;
        let pixels = r.checked_len(&[height, width], "raster")?;
        let prediction = match task {
            Task::Segmentation { num_classes } => {
                let at = r.offset();
                let classes = r.u16s(pixels, "class map")?;
                if let Some(bad) = classes.iter().find(|&&c| c as usize >= num_classes) {
                    return Err(r.error(at, format!("class {bad} out of range")));
                }
                let values = if distributions {
                    let n = r.checked_len(&[pixels, num_classes], "distribution")?;
                    r.f32s(n, "distribution")?
                } else {
                    Vec::new()
                };
                DensePrediction::Segmentation {
                    height,
                    width,
                    classes,
                    distribution: DenseMap {
                        height,
                        width,
                        channels: if distributions { num_classes } else { 0 },
                        values,
                    },
                }
            }
            Task::Depth => DensePrediction::Depth {
                height,
                width,
                depth: r.f32s(pixels, "depth")?,
            },
        };
        records.push(PredictionRecord { image_id, prediction });
    }
    r.at_end()?;
    Ok(PredictionFile {
        task,
        distributions,
        records,
    })
}

pub fn save(file: &PredictionFile, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_predictions(file, BufWriter::new(f))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PredictionFile> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_predictions(BufReader::new(f))
}
