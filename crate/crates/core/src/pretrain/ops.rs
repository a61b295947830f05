//! Differentiable building blocks of contextual pretraining, recorded on a
//! [`Tape`].

use alloc::format;

use super::memory::MemorySnapshot;
use super::params::LinearVars;
use super::tape::{Tape, Var};
use crate::{Error, Result};

/// How a contextualized grid is pooled into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingMode {
    /// Uniform weights, identity values.
    Mean,
    /// Learned attention weights, identity values.
    Qk,
    /// Learned attention weights and learned value head.
    Qkv,
}

impl core::str::FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingMode::Mean),
            "qk" => Ok(PoolingMode::Qk),
            "qkv" => Ok(PoolingMode::Qkv),
            other => Err(Error::config(format!("unknown pooling mode '{other}'"))),
        }
    }
}

impl core::fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            PoolingMode::Mean => "mean",
            PoolingMode::Qk => "qk",
            PoolingMode::Qkv => "qkv",
        })
    }
}

/// Memory contents placed on a tape as constants.
#[derive(Debug, Clone, Copy)]
pub struct MemoryVars {
    /// Transposed unit keys, `dim × len`.
    pub keys_t: Var,
    pub values: Var,
    /// One-hot labels, `len × num_classes`, when requested and available.
    pub one_hot: Option<Var>,
    pub len: usize,
}

impl MemoryVars {
    pub fn new(tape: &mut Tape, memory: &MemorySnapshot, num_classes: Option<usize>) -> Result<Self> {
        let keys_t = tape.leaf(memory.keys.transpose());
        let values = tape.leaf(memory.values.clone());
        let one_hot = match num_classes {
            Some(g) if memory.labels.is_some() => Some(tape.leaf(memory.one_hot(g)?)),
            _ => None,
        };
        Ok(MemoryVars {
            keys_t,
            values,
            one_hot,
            len: memory.len(),
        })
    }
}

/// Cosine cross-attention of each query row over the memory keys at
/// temperature `beta`, returning the attention matrix (`rows × len`).
fn cosine_attention(tape: &mut Tape, queries: Var, memory: &MemoryVars, beta: f64) -> Result<Var> {
    let unit = tape
        .normalize_rows(queries, 1.0)
        .ok_or_else(|| Error::input("zero query in cross-attention"))?;
    let cos = tape.matmul(unit, memory.keys_t);
    let logits = tape.scale(cos, 1.0 / beta);
    Ok(tape.softmax_rows(logits))
}

/// Mixes every feature with a memory read-out:
/// `c = ψ((1 − λ)·q/‖q‖ + λ·v̂/‖v̂‖)`, where `v̂` attends over the memory
/// with cosine logits at temperature `beta`. An all-zero read-out adds
/// nothing.
pub fn contextualize(
    tape: &mut Tape,
    q: Var,
    memory: Option<&MemoryVars>,
    lambda: f64,
    beta: f64,
    mixer: &LinearVars,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0, 1]")));
    }
    let unit_q = tape
        .normalize_rows(q, 1.0)
        .ok_or_else(|| Error::input("zero feature cannot be contextualized"))?;
    let mixed = if lambda == 0.0 {
        unit_q
    } else {
        let memory = match memory {
            Some(m) if m.len > 0 => m,
            _ => return Err(Error::Empty("contextualization with lambda > 0 needs memory")),
        };
        let attn = cosine_attention(tape, q, memory, beta)?;
        let read = tape.matmul(attn, memory.values);
        let a = tape.scale(unit_q, 1.0 - lambda);
        match tape.normalize_rows(read, 1.0) {
            Some(unit_read) => {
                let b = tape.scale(unit_read, lambda);
                tape.add(a, b)
            }
            // A dead value head (all-zero values) reads out nothing, as an
            // epsilon-guarded normalization would.
            None if tape.value(read).data.iter().all(|&x| x == 0.0) => a,
            None => return Err(Error::input("memory read-out has a zero-norm row")),
        }
    };
    Ok(mixer.apply(tape, mixed))
}

/// Pools an `n × dim` grid into `1 × dim`: `Σⱼ softmax(a(c))ⱼ · ω(cⱼ)`.
pub fn attention_pool(
    tape: &mut Tape,
    c: Var,
    mode: PoolingMode,
    attention: &LinearVars,
    pool_value: &LinearVars,
) -> Var {
    match mode {
        PoolingMode::Mean => tape.mean_rows(c),
        PoolingMode::Qk | PoolingMode::Qkv => {
            let logits = attention.apply(tape, c);
            let row = tape.transpose(logits);
            let weights = tape.softmax_rows(row);
            let values = if mode == PoolingMode::Qkv {
                pool_value.apply(tape, c)
            } else {
                c
            };
            tape.matmul(weights, values)
        }
    }
}

/// Rescales every row to norm `1/√τ`.
pub fn rescale_rows(tape: &mut Tape, x: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("tau must be positive, got {tau}")));
    }
    tape.normalize_rows(x, 1.0 / libm::sqrt(tau))
        .ok_or_else(|| Error::input("zero vector cannot be rescaled"))
}

/// Projection `z = p(ĉ)` and prediction `q(z)`, both rescaled to `1/√τ`.
pub fn project_and_predict(
    tape: &mut Tape,
    pooled: Var,
    projector: &LinearVars,
    predictor: Option<&LinearVars>,
    tau: f64,
) -> Result<(Var, Option<Var>)> {
    let raw = projector.apply(tape, pooled);
    let z = rescale_rows(tape, raw, tau)?;
    let prediction = match predictor {
        Some(p) => {
            let raw = p.apply(tape, z);
            Some(rescale_rows(tape, raw, tau)?)
        }
        None => None,
    };
    Ok((z, prediction))
}

/// Mean InfoNCE loss: row `i` of `preds` against its positive target row
/// `pairing[i]`, with every other target row as a negative.
pub fn contrastive_loss(tape: &mut Tape, preds: Var, targets: Var, pairing: &[usize]) -> Result<Var> {
    let (rows, cols) = tape.value(preds).shape();
    let (t_rows, t_cols) = tape.value(targets).shape();
    if rows == 0 || rows != pairing.len() {
        return Err(Error::shape(format!(
            "{} pairings for {rows} predictions",
            pairing.len()
        )));
    }
    if cols != t_cols {
        return Err(Error::Dimension {
            expected: cols,
            actual: t_cols,
        });
    }
    if let Some(&j) = pairing.iter().find(|&&j| j >= t_rows) {
        return Err(Error::input(format!("pairing index {j} outside {t_rows} targets")));
    }
    let targets_t = tape.transpose(targets);
    let logits = tape.matmul(preds, targets_t);
    Ok(tape.softmax_xent(logits, pairing))
}

/// Probability floor inside the supervised cross-entropy.
pub const SUPERVISED_FLOOR: f64 = 1e-12;

/// Retrieval-based cross-entropy: pooled vectors attend over labeled
/// memory keys, the attention spreads mass over one-hot labels, and the
/// loss is `−ln ŷ[true label]` averaged over the batch.
pub fn supervised_retrieval_loss(
    tape: &mut Tape,
    pooled: Var,
    memory: &MemoryVars,
    labels: &[usize],
    beta: f64,
) -> Result<Var> {
    let one_hot = memory
        .one_hot
        .ok_or_else(|| Error::input("supervised loss needs labeled memory"))?;
    if memory.len == 0 {
        return Err(Error::Empty("supervised loss needs a non-empty memory"));
    }
    let rows = tape.value(pooled).rows;
    if labels.len() != rows {
        return Err(Error::shape(format!("{} labels for {rows} pooled rows", labels.len())));
    }
    let classes = tape.value(one_hot).cols;
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Dimension {
            expected: classes,
            actual: l + 1,
        });
    }
    let attn = cosine_attention(tape, pooled, memory, beta)?;
    let predicted = tape.matmul(attn, one_hot);
    Ok(tape.neg_log_pick(predicted, labels, SUPERVISED_FLOOR))
}
