//! Toy pretraining: `key=value` configuration, the training loop and its
//! CSV loss log.
//!
//! Recognized keys: `lambda`, `tau`, `alpha`, `ema_decay`, `memory_size`,
//! `pooling_mode` (`mean`, `qk`, `qkv`), `beta_p`, `lr`, `clip_norm` (a
//! number or `none`), `seed`, `steps`, `dim`, `value_hidden`, `proj_dim`,
//! `batch_norm`, `batch_size`, `positions`, `patch_dim`, `num_classes`,
//! `noise`. Blank lines and `#` comments are skipped.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nnscene_core::pretrain::{toy_train_step, LossBreakdown, PretrainState, ToyConfig, ToyData, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRun {
    pub train: TrainConfig,
    pub data: ToyConfig,
    pub steps: u64,
}

impl Default for PretrainRun {
    fn default() -> Self {
        PretrainRun {
            train: TrainConfig::default(),
            data: ToyConfig::default(),
            steps: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("line {line}: cannot parse {key}={value}")))
}

impl PretrainRun {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "lambda" => t.loss.lambda = parse(key, value, line)?,
            "tau" => t.loss.tau = parse(key, value, line)?,
            "alpha" => t.loss.alpha = parse(key, value, line)?,
            "ema_decay" => t.loss.ema_decay = parse(key, value, line)?,
            "pooling_mode" => t.loss.pooling = parse(key, value, line)?,
            "beta_p" => t.loss.beta_p = parse(key, value, line)?,
            "memory_size" => t.memory_size = parse(key, value, line)?,
            "lr" => t.lr = parse(key, value, line)?,
            "clip_norm" if value.eq_ignore_ascii_case("none") => t.clip_norm = None,
            "clip_norm" => t.clip_norm = Some(parse(key, value, line)?),
            "seed" => {
                let seed = parse(key, value, line)?;
                t.seed = seed;
                d.seed = seed;
            }
            "steps" => self.steps = parse(key, value, line)?,
            "dim" => t.dim = parse(key, value, line)?,
            "value_hidden" => t.value_hidden = parse(key, value, line)?,
            "proj_dim" => t.proj_dim = parse(key, value, line)?,
            "batch_norm" => t.batch_norm = parse(key, value, line)?,
            "batch_size" => d.batch_size = parse(key, value, line)?,
            "positions" => d.positions = parse(key, value, line)?,
            "patch_dim" => d.patch_dim = parse(key, value, line)?,
            "num_classes" => d.num_classes = parse(key, value, line)?,
            "noise" => d.noise = parse(key, value, line)?,
            _ => return Err(Error::Usage(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut run = PretrainRun::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            run.set(k.trim(), v.trim(), i + 1)?;
        }
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_str(&text)
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub total: f64,
    pub ssl: f64,
    pub sup: f64,
}

impl LossRow {
    fn new(step: u64, l: LossBreakdown) -> Self {
        LossRow {
            step,
            total: l.total,
            ssl: l.ssl,
            sup: l.sup,
        }
    }
}

/// Trains for `run.steps` steps on batches `0..steps` of the toy data.
pub fn run_pretrain(run: &PretrainRun) -> Result<(PretrainState, Vec<LossRow>)> {
    let data = ToyData::new(run.data)?;
    let mut state = PretrainState::new(run.train, run.data.patch_dim)?;
    let mut log = Vec::with_capacity(run.steps as usize);
    for i in 0..run.steps {
        let loss = toy_train_step(&mut state, &data.batch(i))?;
        log.push(LossRow::new(i + 1, loss));
    }
    Ok((state, log))
}

pub fn write_loss_csv<W: Write>(rows: &[LossRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("writing loss log", e))?;
    Ok(())
}

/// Online parameters as little-endian `f64`s in flattening order.
pub fn params_bytes(state: &PretrainState) -> Vec<u8> {
    state.online.flatten().iter().flat_map(|v| v.to_le_bytes()).collect()
}
