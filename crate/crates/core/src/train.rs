//! Minibatch SGD over the combined objective.
//!
//! Per-sample gradients are accumulated over fixed chunks of
//! [`GRADIENT_CHUNK`] samples, which may run in parallel; chunk results are
//! summed in batch order so the update is identical in every execution mode.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::align;
use crate::data::{Augmentation, Dataset};
use crate::driver::TeacherSnapshot;
use crate::losses::{self, LossConfig};
use crate::model::{Dense, Model};
use crate::{seed, Error, Execution, Result};

pub const GRADIENT_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPreset {
    /// 30 epochs, batch 32, decay at 60% and 80% of training.
    Desk,
    /// 250 epochs, batch 32, decay after epochs 100, 150 and 200.
    Cifar100,
}

/// SGD with momentum, weight decay and step learning-rate decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrainSection", into = "TrainSection")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs after which the rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
}

impl TrainConfig {
    pub fn preset(preset: TrainPreset) -> Self {
        match preset {
            TrainPreset::Desk => Self::with_epochs(30),
            TrainPreset::Cifar100 => Self {
                epochs: 250,
                milestones: vec![100, 150, 200],
                ..Self::with_epochs(250)
            },
        }
    }

    /// Desk defaults with the milestones placed at 60% and 80% of `epochs`.
    pub fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: default_milestones(epochs),
            lr_decay: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.lr_decay.is_nan() || self.lr_decay <= 0.0 {
            return bad("momentum must lie in [0, 1), weight_decay >= 0, lr_decay > 0".into());
        }
        if let Some(&m) = self.milestones.iter().find(|&&m| m >= self.epochs) {
            return bad(format!("milestone {m} is not below epochs {}", self.epochs));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

fn default_milestones(epochs: usize) -> Vec<usize> {
    let mut m: Vec<usize> = [0.6, 0.8]
        .iter()
        .map(|f| (epochs as f64 * f).round() as usize)
        .filter(|&e| e > 0 && e < epochs)
        .collect();
    m.dedup();
    m
}

/// On-disk form of `[train]`: a preset fills whatever is not given.
/// Milestones are written only when they differ from the 60%/80% default,
/// so that changing `epochs` alone moves them.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<TrainPreset>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    milestones: Option<Vec<usize>>,
    lr_decay: Option<f64>,
}

impl From<TrainConfig> for TrainSection {
    fn from(c: TrainConfig) -> Self {
        let milestones = (c.milestones != default_milestones(c.epochs)).then_some(c.milestones);
        Self {
            preset: None,
            epochs: Some(c.epochs),
            batch_size: Some(c.batch_size),
            learning_rate: Some(c.learning_rate),
            momentum: Some(c.momentum),
            weight_decay: Some(c.weight_decay),
            milestones,
            lr_decay: Some(c.lr_decay),
        }
    }
}

impl TryFrom<TrainSection> for TrainConfig {
    type Error = String;

    fn try_from(s: TrainSection) -> std::result::Result<Self, String> {
        let base = match (s.preset, s.epochs) {
            (Some(p), _) => TrainConfig::preset(p),
            (None, Some(e)) => TrainConfig::with_epochs(e),
            (None, None) => TrainConfig::preset(TrainPreset::Desk),
        };
        let epochs = s.epochs.unwrap_or(base.epochs);
        let milestones = match (s.milestones, s.preset) {
            (Some(m), _) => m,
            (None, Some(_)) if epochs == base.epochs => base.milestones,
            (None, _) => default_milestones(epochs),
        };
        let cfg = TrainConfig {
            epochs,
            batch_size: s.batch_size.unwrap_or(base.batch_size),
            learning_rate: s.learning_rate.unwrap_or(base.learning_rate),
            momentum: s.momentum.unwrap_or(base.momentum),
            weight_decay: s.weight_decay.unwrap_or(base.weight_decay),
            milestones,
            lr_decay: s.lr_decay.unwrap_or(base.lr_decay),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(TrainPreset::Desk)
    }
}

/// Parameter-shaped gradient buffers for a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub head: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model.extractor.zero_grads(),
            head: Array2::zeros(model.head.weights().dim()),
            bias: model.head.bias().map(|b| Array1::zeros(b.len())),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.head += &other.head;
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            *a += b;
        }
    }

    fn scale(&mut self, f: f64) {
        for l in &mut self.layers {
            l.weight *= f;
            l.bias *= f;
        }
        self.head *= f;
        if let Some(b) = self.bias.as_mut() {
            *b *= f;
        }
    }
}

/// What a step optimizes: plain cross-entropy, or cross-entropy plus
/// distillation against a frozen teacher.
#[derive(Clone, Copy)]
pub struct Objective<'a> {
    pub teacher: Option<&'a TeacherSnapshot>,
    pub loss: &'a LossConfig,
    pub old_count: usize,
    pub new_count: usize,
}

impl Objective<'_> {
    fn loss_grad(&self, logits: &[f64], input: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        match self.teacher {
            Some(t) if self.old_count > 0 => {
                let target = t.logits(input)?;
                losses::combined_loss_grad(
                    logits,
                    label,
                    Some(&target),
                    self.loss,
                    self.old_count,
                    self.new_count,
                )
            }
            _ => Ok((
                losses::cross_entropy_loss(logits, label)?,
                losses::cross_entropy_grad(logits, label)?,
            )),
        }
    }
}

fn accumulate_sample(
    model: &Model,
    effective: &Array2<f64>,
    input: &[f64],
    label: usize,
    objective: &Objective<'_>,
    grads: &mut Gradients,
) -> Result<f64> {
    let cache = model.extractor.forward_cached(input);
    let phi = &cache.output;
    let logits = crate::model::project_features(effective, model.head.bias(), phi.as_slice().expect("contiguous"));
    let (loss, g) = objective.loss_grad(&logits, input, label)?;
    for (mut col, &gc) in grads.head.axis_iter_mut(Axis(1)).zip(&g) {
        if gc != 0.0 {
            col.scaled_add(gc, phi);
        }
    }
    if let Some(b) = grads.bias.as_mut() {
        for (bi, gi) in b.iter_mut().zip(&g) {
            *bi += gi;
        }
    }
    let grad_features = effective.dot(&Array1::from(g));
    model.extractor.backward(&cache, grad_features, &mut grads.layers);
    Ok(loss)
}

/// A minibatch: training-set indices plus how to read them.
pub struct Batch<'a> {
    pub data: &'a Dataset,
    pub ids: &'a [usize],
    pub augmentation: Augmentation,
    /// Seed for the augmentation of this batch; each sample derives its own
    /// stream from it and its id.
    pub seed: u64,
}

impl Batch<'_> {
    fn input(&self, id: usize) -> Vec<f64> {
        match self.augmentation {
            Augmentation::None => self.data.input(id).to_vec(),
            aug => aug.apply(self.data.input(id), &mut seed::rng(self.seed, "augment", &[id as u64])),
        }
    }
}

/// Mean loss and mean gradient over the batch, with respect to the raw
/// (trainable) parameters.
pub fn batch_gradient(
    model: &Model,
    batch: &Batch<'_>,
    objective: &Objective<'_>,
    exec: Execution,
) -> Result<(f64, Gradients)> {
    if batch.ids.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let effective = model.effective_weights()?;
    let partials = exec.map_chunks(batch.ids, GRADIENT_CHUNK, |chunk| -> Result<(f64, Gradients)> {
        let mut g = Gradients::zeros_like(model);
        let mut loss = 0.0;
        for &id in chunk {
            let x = batch.input(id);
            loss += accumulate_sample(model, &effective, &x, batch.data.label(id), objective, &mut g)?;
        }
        Ok((loss, g))
    });
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for p in partials {
        let (l, g) = p?;
        loss += l;
        total.add_assign(&g);
    }
    let n = batch.ids.len() as f64;
    total.scale(1.0 / n);
    if model.weight_normalized {
        total.head = align::weight_normalization_backward(model.head.weights(), &total.head)?;
    }
    Ok((loss / n, total))
}

/// SGD with momentum and L2 weight decay (`v = mu v + g + wd p; p -= lr v`).
pub struct Sgd {
    pub learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        let first = self.velocity.is_none();
        let v = self.velocity.get_or_insert_with(|| Gradients::zeros_like(model));
        let update = |p: &mut f64, g: f64, v: &mut f64| {
            let d = g + wd * *p;
            *v = if first { d } else { mu * *v + d };
            *p -= lr * *v;
        };
        for ((layer, g), vl) in model.extractor.layers.iter_mut().zip(&grads.layers).zip(&mut v.layers) {
            ndarray::Zip::from(&mut layer.weight).and(&g.weight).and(&mut vl.weight).for_each(|p, &g, v| update(p, g, v));
            ndarray::Zip::from(&mut layer.bias).and(&g.bias).and(&mut vl.bias).for_each(|p, &g, v| update(p, g, v));
        }
        ndarray::Zip::from(model.head.weights_mut()).and(&grads.head).and(&mut v.head).for_each(|p, &g, v| update(p, g, v));
        if let (Some(b), Some(g), Some(vb)) = (model.head.bias_mut(), grads.bias.as_ref(), v.bias.as_mut()) {
            ndarray::Zip::from(b).and(g).and(vb).for_each(|p, &g, v| update(p, g, v));
        }
    }
}

/// Settings for one training phase.
pub struct PhaseSettings<'a> {
    pub config: &'a TrainConfig,
    pub augmentation: Augmentation,
    pub restrict_nonnegative: bool,
    pub seed: u64,
    /// 1-based step, mixed into the shuffling and augmentation streams.
    pub step: usize,
    pub exec: Execution,
}

/// Trains `model` on `pool` for the configured epochs. Clipping, when on,
/// follows every optimizer update. Returns the mean loss of each epoch.
pub fn train_phase(
    model: &mut Model,
    data: &Dataset,
    pool: &[usize],
    objective: &Objective<'_>,
    settings: &PhaseSettings<'_>,
) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::invalid("empty training pool"));
    }
    let cfg = settings.config;
    let mut opt = Sgd::new(cfg);
    let mut order = pool.to_vec();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.lr_at(epoch);
        let ix = [settings.step as u64, epoch as u64];
        order.copy_from_slice(pool);
        order.shuffle(&mut seed::rng(settings.seed, "shuffle", &ix));
        let mut sum = 0.0;
        for (b, ids) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch {
                data,
                ids,
                augmentation: settings.augmentation,
                seed: seed::derive(settings.seed, "augment-batch", &[ix[0], ix[1], b as u64]),
            };
            let (loss, grads) = batch_gradient(model, &batch, objective, settings.exec)?;
            opt.step(model, &grads);
            if settings.restrict_nonnegative {
                align::clip_in_place(&mut model.head);
            }
            sum += loss * ids.len() as f64;
        }
        epoch_losses.push(sum / pool.len() as f64);
    }
    Ok(epoch_losses)
}
