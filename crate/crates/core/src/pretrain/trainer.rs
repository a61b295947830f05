//! Toy contextual pretraining on synthetic two-view data.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::memory::PretrainBank;
use super::ops::{
    attention_pool, contextualize, contrastive_loss, project_and_predict, supervised_retrieval_loss,
    MemoryVars,
};
use super::params::{ema_update, LinearVars, ModelParams, ModelShape};
use super::tape::{Gradients, Tape, Var};
use super::tensor::Matrix;
use super::{LossConfig, DEFAULT_MEMORY_SIZE};
use crate::rng::stream;
use crate::{Error, Result};

/// Synthetic data: each image has a dominant class; every position shows
/// the prototype of its class plus Gaussian noise. The two views share the
/// class layout but differ in noise and position order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub num_classes: usize,
    pub positions: usize,
    pub patch_dim: usize,
    pub noise: f64,
    /// Probability that a position shows the dominant class.
    pub dominant_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            num_classes: 4,
            positions: 16,
            patch_dim: 8,
            noise: 0.3,
            dominant_fraction: 0.75,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Two views per image plus the image-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBatch {
    pub views: [Vec<Matrix>; 2],
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ToyBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ToyData {
    cfg: ToyConfig,
    prototypes: Vec<f64>,
}

impl ToyData {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        if cfg.num_classes == 0 || cfg.positions == 0 || cfg.batch_size == 0 {
            return Err(Error::config("toy data needs classes, positions and a batch"));
        }
        if !(0.0..=1.0).contains(&cfg.dominant_fraction) {
            return Err(Error::config("dominant_fraction outside [0, 1]"));
        }
        let prototypes = crate::synth::prototypes(cfg.num_classes, cfg.patch_dim, cfg.seed)?;
        Ok(ToyData { cfg, prototypes })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    /// Batch number `index`; identical for identical seeds.
    pub fn batch(&self, index: u64) -> ToyBatch {
        let c = &self.cfg;
        let mut rng = stream(c.seed, &[0x70_7e, index]);
        let mut views = [Vec::with_capacity(c.batch_size), Vec::with_capacity(c.batch_size)];
        let mut labels = Vec::with_capacity(c.batch_size);
        for _ in 0..c.batch_size {
            let dominant = rng.random_range(0..c.num_classes);
            let layout: Vec<usize> = (0..c.positions)
                .map(|_| {
                    if rng.random::<f64>() < c.dominant_fraction {
                        dominant
                    } else {
                        rng.random_range(0..c.num_classes)
                    }
                })
                .collect();
            for view in views.iter_mut() {
                let mut order: Vec<usize> = (0..c.positions).collect();
                order.shuffle(&mut rng);
                let mut m = Matrix::zeros(c.positions, c.patch_dim);
                for (r, &pos) in order.iter().enumerate() {
                    let proto = &self.prototypes[layout[pos] * c.patch_dim..][..c.patch_dim];
                    for (o, &p) in m.row_mut(r).iter_mut().zip(proto) {
                        *o = p + c.noise * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                view.push(m);
            }
            labels.push(dominant);
        }
        ToyBatch {
            views,
            labels,
            num_classes: c.num_classes,
        }
    }
}

/// Optimization settings of the toy trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub lr: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub memory_size: usize,
    pub dim: usize,
    pub value_hidden: usize,
    pub proj_dim: usize,
    pub batch_norm: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            lr: 1e-3,
            clip_norm: Some(1.0),
            memory_size: DEFAULT_MEMORY_SIZE,
            dim: 16,
            value_hidden: 32,
            proj_dim: 8,
            batch_norm: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip norm {c} must be positive")));
            }
        }
        if self.dim == 0 || self.value_hidden == 0 || self.proj_dim == 0 {
            return Err(Error::config("model widths must be positive"));
        }
        Ok(())
    }
}

/// Loss values of one step; `sup` is the unweighted sum of both views'
/// cross-entropies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ssl: f64,
    pub sup: f64,
}

/// Online parameters `θ`, target parameters `ξ` and the pretraining memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainState {
    pub online: ModelParams,
    pub target: ModelParams,
    pub bank: PretrainBank,
    pub step: u64,
    pub config: TrainConfig,
}

impl PretrainState {
    pub fn new(config: TrainConfig, patch_dim: usize) -> Result<Self> {
        config.validate()?;
        let shape = ModelShape {
            patch_dim,
            dim: config.dim,
            value_hidden: config.value_hidden,
            proj_dim: config.proj_dim,
            batch_norm: config.batch_norm,
        };
        let online = ModelParams::random(&shape, &mut stream(config.seed, &[0x7e7a]));
        Ok(PretrainState {
            target: online.clone(),
            online,
            bank: PretrainBank::new(config.memory_size, config.dim),
            step: 0,
            config,
        })
    }

    /// Pushes the target network's spatially averaged features of the
    /// first view, labeled with the image labels.
    pub fn push_batch(&mut self, batch: &ToyBatch) -> Result<()> {
        let features: Vec<Matrix> = batch.views[0]
            .iter()
            .map(|g| self.target.encoder.apply(g))
            .collect();
        self.bank
            .push(&features, &self.target.value_head, Some(&batch.labels))
    }
}

struct NetVars {
    encoder: LinearVars,
    mixer: LinearVars,
    attention: LinearVars,
    pool_value: LinearVars,
    projector: LinearVars,
    predictor: LinearVars,
}

impl NetVars {
    fn new(tape: &mut Tape, p: &ModelParams) -> Self {
        NetVars {
            encoder: p.encoder.leaves(tape),
            mixer: p.mixer.leaves(tape),
            attention: p.attention.leaves(tape),
            pool_value: p.pool_value.leaves(tape),
            projector: p.projector.leaves(tape),
            predictor: p.predictor.leaves(tape),
        }
    }
}

/// Encodes, contextualizes and pools every grid; returns `batch × dim`.
fn pooled_batch(
    tape: &mut Tape,
    net: &NetVars,
    grids: &[Matrix],
    memory: Option<&MemoryVars>,
    cfg: &LossConfig,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(grids.len());
    for g in grids {
        if g.rows == 0 {
            return Err(Error::Empty("pooling an empty grid"));
        }
        let x = tape.leaf(g.clone());
        let h = net.encoder.apply(tape, x);
        let c = contextualize(tape, h, memory, cfg.lambda, cfg.beta_p, &net.mixer)?;
        rows.push(attention_pool(tape, c, cfg.pooling, &net.attention, &net.pool_value));
    }
    Ok(tape.concat_rows(&rows))
}

/// Target projections of both views, as constants.
fn target_projections(
    target: &ModelParams,
    bank: &PretrainBank,
    cfg: &LossConfig,
    batch: &ToyBatch,
) -> Result<[Matrix; 2]> {
    let mut tape = Tape::new();
    let net = NetVars::new(&mut tape, target);
    let memory = memory_vars(&mut tape, bank, cfg, None)?;
    let mut out = [Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
    for (slot, view) in out.iter_mut().zip(&batch.views) {
        let pooled = pooled_batch(&mut tape, &net, view, memory.as_ref(), cfg)?;
        let (z, _) = project_and_predict(&mut tape, pooled, &net.projector, None, cfg.tau)?;
        *slot = tape.value(z).clone();
    }
    Ok(out)
}

fn memory_vars(
    tape: &mut Tape,
    bank: &PretrainBank,
    cfg: &LossConfig,
    num_classes: Option<usize>,
) -> Result<Option<MemoryVars>> {
    if cfg.lambda == 0.0 && num_classes.is_none() {
        return Ok(None);
    }
    if bank.is_empty() {
        return Err(Error::Empty("pretraining memory is empty"));
    }
    Ok(Some(MemoryVars::new(tape, &bank.snapshot(), num_classes)?))
}

struct Forward {
    tape: Tape,
    net: NetVars,
    total: Var,
    breakdown: LossBreakdown,
}

fn forward(
    online: &ModelParams,
    target: &ModelParams,
    bank: &PretrainBank,
    cfg: &LossConfig,
    batch: &ToyBatch,
) -> Result<Forward> {
    cfg.validate()?;
    if batch.is_empty() || batch.views.iter().any(|v| v.len() != batch.len()) {
        return Err(Error::shape("views must pair one-to-one with labels"));
    }
    let [za, zb] = target_projections(target, bank, cfg, batch)?;
    let mut tape = Tape::new();
    let net = NetVars::new(&mut tape, online);
    let supervised = cfg.alpha > 0.0;
    let memory = memory_vars(&mut tape, bank, cfg, supervised.then_some(batch.num_classes))?;

    let pooled_a = pooled_batch(&mut tape, &net, &batch.views[0], memory.as_ref(), cfg)?;
    let pooled_b = pooled_batch(&mut tape, &net, &batch.views[1], memory.as_ref(), cfg)?;
    let (_, pred_a) = project_and_predict(&mut tape, pooled_a, &net.projector, Some(&net.predictor), cfg.tau)?;
    let (_, pred_b) = project_and_predict(&mut tape, pooled_b, &net.projector, Some(&net.predictor), cfg.tau)?;
    let (pred_a, pred_b) = (pred_a.expect("predictor given"), pred_b.expect("predictor given"));

    let pairing: Vec<usize> = (0..batch.len()).collect();
    let target_b = tape.leaf(zb);
    let target_a = tape.leaf(za);
    let l_ab = contrastive_loss(&mut tape, pred_a, target_b, &pairing)?;
    let l_ba = contrastive_loss(&mut tape, pred_b, target_a, &pairing)?;
    let ssl = tape.add(l_ab, l_ba);
    let ssl_value = tape.scalar(ssl);

    let (total, sup_value) = match memory.as_ref().filter(|_| supervised) {
        Some(mem) => {
            let ce_a = supervised_retrieval_loss(&mut tape, pooled_a, mem, &batch.labels, cfg.beta_p)?;
            let ce_b = supervised_retrieval_loss(&mut tape, pooled_b, mem, &batch.labels, cfg.beta_p)?;
            let sup = tape.add(ce_a, ce_b);
            let sup_value = tape.scalar(sup);
            let weighted = tape.scale(sup, cfg.alpha);
            (tape.add(ssl, weighted), sup_value)
        }
        None => (ssl, 0.0),
    };
    let breakdown = LossBreakdown {
        total: tape.scalar(total),
        ssl: ssl_value,
        sup: sup_value,
    };
    Ok(Forward {
        tape,
        net,
        total,
        breakdown,
    })
}

/// Loss of the online parameters with target and memory held fixed.
pub fn loss_value(
    online: &ModelParams,
    target: &ModelParams,
    bank: &PretrainBank,
    cfg: &LossConfig,
    batch: &ToyBatch,
) -> Result<LossBreakdown> {
    Ok(forward(online, target, bank, cfg, batch)?.breakdown)
}

/// Loss and its gradient with respect to every online parameter. The
/// value head only produces memory values, so its gradient is zero.
pub fn loss_and_grads(
    online: &ModelParams,
    target: &ModelParams,
    bank: &PretrainBank,
    cfg: &LossConfig,
    batch: &ToyBatch,
) -> Result<(LossBreakdown, ModelParams)> {
    let f = forward(online, target, bank, cfg, batch)?;
    let grads = f.tape.backward(f.total);
    let mut out = online.clone();
    for m in out.tensors_mut() {
        m.data.iter_mut().for_each(|x| *x = 0.0);
    }
    let fill = |dst: &mut super::params::Linear, vars: &LinearVars, g: &Gradients| {
        dst.weight = g.get_or_zeros(vars.weight, dst.weight.shape());
        dst.bias = g.get_or_zeros(vars.bias, dst.bias.shape());
    };
    fill(&mut out.encoder, &f.net.encoder, &grads);
    fill(&mut out.mixer, &f.net.mixer, &grads);
    fill(&mut out.attention, &f.net.attention, &grads);
    fill(&mut out.pool_value, &f.net.pool_value, &grads);
    fill(&mut out.projector, &f.net.projector, &grads);
    fill(&mut out.predictor, &f.net.predictor, &grads);
    Ok((f.breakdown, out))
}

/// One optimization step: gradient descent on `θ` (with optional global
/// norm clipping), EMA update of `ξ`, then the first view's target
/// features enter the memory. An empty memory is primed with the batch
/// before the forward pass when contextualization or supervision needs it.
pub fn toy_train_step(state: &mut PretrainState, batch: &ToyBatch) -> Result<LossBreakdown> {
    let cfg = state.config;
    let needs_memory = cfg.loss.lambda > 0.0 || cfg.loss.alpha > 0.0;
    let primed = needs_memory && state.bank.is_empty();
    if primed {
        state.push_batch(batch)?;
    }
    let (loss, grads) = loss_and_grads(&state.online, &state.target, &state.bank, &cfg.loss, batch)?;
    if !loss.total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!(
            "step {}: total {} ssl {} sup {}",
            state.step, loss.total, loss.ssl, loss.sup
        )));
    }
    let norm = crate::math::norm_f64(&grads.flatten());
    let scale = match cfg.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    for ((_, g), p) in grads.tensors().into_iter().zip(state.online.tensors_mut()) {
        p.data
            .iter_mut()
            .zip(&g.data)
            .for_each(|(w, d)| *w -= cfg.lr * scale * d);
    }
    ema_update(&state.online, &mut state.target, cfg.loss.ema_decay)?;
    if !primed {
        state.push_batch(batch)?;
    }
    state.step += 1;
    Ok(loss)
}
