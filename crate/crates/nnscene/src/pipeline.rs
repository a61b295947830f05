//! Decoding and evaluation over whole feature sets.

use std::num::NonZeroUsize;
use std::thread;

use nnscene_core::bank::MemoryBank;
use nnscene_core::decode::{decode_image, DecodeConfig};
use nnscene_core::feature::LabeledImage;
use nnscene_core::index::AnnIndex;
use nnscene_core::metrics::{Confusion, EvalReport, SquaredError};
use nnscene_core::upsample::{finalize_prediction, upsample_predictions, DensePrediction};
use nnscene_core::{FeatureSet, PixelLabels, Task, IGNORE_ID};

use crate::error::{Error, Result};
use crate::format::hbpr::{PredictionFile, PredictionRecord};
use crate::THREADS_ENV;

/// Worker count from the environment, defaulting to 1.
pub fn threads_from_env() -> Result<NonZeroUsize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(NonZeroUsize::MIN),
        Ok(v) => v
            .trim()
            .parse::<NonZeroUsize>()
            .map_err(|_| Error::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
    }
}

/// Decodes one image and upsamples it to the label resolution.
pub fn predict_image(
    image: &LabeledImage,
    index: &AnnIndex,
    bank: &MemoryBank,
    cfg: &DecodeConfig,
) -> Result<DensePrediction> {
    let patches = decode_image(&image.grid, index, bank, cfg)?;
    let dense = upsample_predictions(&patches, image.labels.height(), image.labels.width())?;
    Ok(finalize_prediction(dense, bank.task)?)
}

/// Predicts every image of the first epoch of `set`. Images are split into
/// contiguous chunks across `threads` workers; output order and values do
/// not depend on the thread count.
pub fn predict_set(
    set: &FeatureSet,
    index: &AnnIndex,
    bank: &MemoryBank,
    cfg: &DecodeConfig,
    threads: NonZeroUsize,
) -> Result<Vec<PredictionRecord>> {
    if set.task != bank.task {
        return Err(Error::Usage(format!(
            "feature set task {:?} does not match bank task {:?}",
            set.task, bank.task
        )));
    }
    let images = set.images();
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let chunk = images.len().div_ceil(threads.get());
    let run = |part: &[LabeledImage]| -> Result<Vec<PredictionRecord>> {
        part.iter()
            .map(|img| {
                Ok(PredictionRecord {
                    image_id: img.grid.image_id,
                    prediction: predict_image(img, index, bank, cfg)?,
                })
            })
            .collect()
    };
    if threads.get() == 1 {
        return run(images);
    }
    thread::scope(|s| {
        let handles: Vec<_> = images.chunks(chunk).map(|part| s.spawn(move || run(part))).collect();
        let mut out = Vec::with_capacity(images.len());
        for h in handles {
            out.extend(h.join().expect("decode worker panicked")?);
        }
        Ok(out)
    })
}

/// Scores predictions against the first-epoch labels of `set`, matched by
/// image id in order.
pub fn evaluate(set: &FeatureSet, predictions: &PredictionFile) -> Result<EvalReport> {
    let images = set.images();
    if images.len() != predictions.records.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} images",
            predictions.records.len(),
            images.len()
        )));
    }
    let mismatch = |id: u64| Error::Usage(format!("prediction for image {id} does not match its labels"));
    match set.task {
        Task::Segmentation { num_classes } => {
            let mut confusion = Confusion::new(num_classes, IGNORE_ID);
            for (img, rec) in images.iter().zip(&predictions.records) {
                match (&rec.prediction, &img.labels) {
                    (DensePrediction::Segmentation { classes: p, .. }, PixelLabels::Segmentation { classes: g, .. })
                        if rec.image_id == img.grid.image_id =>
                    {
                        confusion.add(p, g)?
                    }
                    _ => return Err(mismatch(img.grid.image_id)),
                }
            }
            Ok(confusion.report()?)
        }
        Task::Depth => {
            let mut acc = SquaredError::default();
            for (img, rec) in images.iter().zip(&predictions.records) {
                match (&rec.prediction, &img.labels) {
                    (DensePrediction::Depth { depth: p, .. }, PixelLabels::Depth { depth: g, valid, .. })
                        if rec.image_id == img.grid.image_id =>
                    {
                        acc.add(p, g, valid)?
                    }
                    _ => return Err(mismatch(img.grid.image_id)),
                }
            }
            Ok(acc.report()?)
        }
    }
}
