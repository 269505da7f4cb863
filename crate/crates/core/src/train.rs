//! SGD with linear warmup and cosine decay, augmentation, classification
//! and super-resolution training and evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{bicubic_resize, crop, mod_crop, Direction, LabeledImageSet};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Mode};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::session::{self, Session};
use crate::tensor::Tensor;
use crate::zoo::{ModelGraph, Task};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e4;
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flip {
    Off,
    Random,
    Always,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub normalize: bool,
    pub flip: Flip,
    /// Zero padding before the random crop; 0 disables cropping.
    pub crop_pad: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            normalize: true,
            flip: Flip::Random,
            crop_pad: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            warmup_epochs: 10,
            peak_lr: 0.1,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Learning rate for 1-based `epoch`: linear from 0 to the peak over the
/// warmup, then half-cosine down to 0 at the last epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch < 1 || epoch > cfg.epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside 1..={}", cfg.epochs)));
    }
    let (e, w, n) = (epoch as f64, cfg.warmup_epochs as f64, cfg.epochs as f64);
    if epoch <= cfg.warmup_epochs {
        Ok(cfg.peak_lr * e / w)
    } else {
        Ok(cfg.peak_lr / 2.0 * (1.0 + (std::f64::consts::PI * (e - w) / (n - w)).cos()))
    }
}

/// One momentum SGD update in place: `v ← m·v + g + wd·p; p ← p − lr·v`.
pub fn sgd_step(p: &mut Tensor<f32>, v: &mut Tensor<f32>, g: &Tensor<f32>, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if p.shape() != g.shape() || p.shape() != v.shape() {
        return Err(Error::shape_mismatch(p.shape(), g.shape()));
    }
    let (lr, m, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
        *v = m * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Tensor<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// Updates every trainable parameter that received a gradient. `scale`
    /// multiplies gradients first (used for clipping).
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &Gradients<f32>, lr: f64, scale: f32) -> Result<()> {
        for (name, g) in grads.params() {
            if !store.is_trainable(name) {
                continue;
            }
            let v = match self.velocity.get_mut(name) {
                Some(v) => v,
                None => {
                    let z = Tensor::zeros(g.shape())?;
                    self.velocity.entry(name.to_string()).or_insert(z)
                }
            };
            let scaled;
            let g = if scale == 1.0 {
                g
            } else {
                scaled = g.scale(scale);
                &scaled
            };
            sgd_step(store.get_mut(name)?, v, g, lr, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn of(set: &LabeledImageSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let [c, h, w] = set.image_shape();
        let d = set.images.data();
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0f64;
            let mut s2 = 0.0f64;
            for n in 0..set.len() {
                for &v in &d[(n * c + ch) * h * w..(n * c + ch + 1) * h * w] {
                    s += v as f64;
                    s2 += v as f64 * v as f64;
                }
            }
            let count = (set.len() * h * w) as f64;
            let m = s / count;
            mean[ch] = m as f32;
            std[ch] = ((s2 / count - m * m).max(0.0).sqrt()).max(1e-6) as f32;
        }
        Ok(ChannelStats { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Normalizes a `[C, H, W]` or `[N, C, H, W]` tensor.
    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = x.shape();
        let r = s.len();
        if r < 3 || s[r - 3] != self.mean.len() {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("expected {} channels", self.mean.len()),
            });
        }
        let plane = s[r - 1] * s[r - 2];
        let c = self.mean.len();
        let mut out = x.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            chunk
                .iter_mut()
                .for_each(|v| *v = (*v - self.mean[ch]) / self.std[ch]);
        }
        Ok(out)
    }
}

fn flip_w(x: &Tensor<f32>) -> Tensor<f32> {
    let w = x.shape()[x.rank() - 1];
    let mut out = x.clone();
    out.data_mut().chunks_mut(w).for_each(|row| row.reverse());
    out
}

/// Normalize, then horizontal flip, then zero-pad and random crop back to
/// the input size, for one `[C, H, W]` image.
pub fn augment(img: &Tensor<f32>, rng: &mut Rng, cfg: &AugmentConfig, stats: &ChannelStats) -> Result<Tensor<f32>> {
    if img.rank() != 3 {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "expected [C, H, W]".into(),
        });
    }
    let mut x = if cfg.normalize { stats.apply(img)? } else { img.clone() };
    let flip = match cfg.flip {
        Flip::Off => false,
        Flip::Random => rng.bernoulli(0.5),
        Flip::Always => true,
    };
    if flip {
        x = flip_w(&x);
    }
    if cfg.crop_pad > 0 {
        let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let p = cfg.crop_pad;
        if h <= p || w <= p {
            return Err(Error::InvalidGeometry(format!("{h}x{w} image is too small to crop with padding {p}")));
        }
        let dy = rng.below(2 * p + 1);
        let dx = rng.below(2 * p + 1);
        x = padded_crop(&x, c, h, w, p, dy, dx)?;
    }
    Ok(x)
}

/// The `h×w` window at `(dy, dx)` of the image zero-padded by `p`.
pub fn padded_crop(x: &Tensor<f32>, c: usize, h: usize, w: usize, p: usize, dy: usize, dx: usize) -> Result<Tensor<f32>> {
    if dy > 2 * p || dx > 2 * p {
        return Err(Error::InvalidGeometry(format!("crop offset ({dy}, {dx}) exceeds padding {p}")));
    }
    let mut out = Tensor::zeros(&[c, h, w])?;
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let sy = y as isize + dy as isize - p as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for xx in 0..w {
                let sx = xx as isize + dx as isize - p as isize;
                if sx >= 0 && sx < w as isize {
                    dst[(ch * h + y) * w + xx] = src[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Percent; NaN-free, 0 for regression tasks.
    pub train_acc: f64,
    /// Validation accuracy (percent) or PSNR (dB); NaN when not measured.
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,train_acc,val_metric,seconds";

impl History {
    /// Floats use Rust's shortest round-trip formatting, so parsing the CSV
    /// back recovers every value bit for bit.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.val_metric, r.seconds
            );
        }
        s
    }

    /// Parses [`Self::to_csv`] output; lines starting with `#` are comments.
    pub fn from_csv(text: &str) -> Result<History> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.starts_with('#'));
        if lines.next().map(|(_, l)| l) != Some(HISTORY_HEADER) {
            return Err(Error::Config("history csv: unexpected header".into()));
        }
        let records = lines
            .map(|(n, line)| {
                let bad = || Error::Config(format!("history csv line {n}: malformed"));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(bad());
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    lr: num(f[1])?,
                    train_loss: num(f[2])?,
                    train_acc: num(f[3])?,
                    val_metric: num(f[4])?,
                    seconds: num(f[5])?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(History { records })
    }

    /// Fields that do not depend on wall time.
    pub fn deterministic_part(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.epoch, r.lr, r.train_loss, r.train_acc, r.val_metric))
            .collect()
    }
}

/// Result of classifier training: history plus the normalization used.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: History,
    pub stats: ChannelStats,
}

fn check_finite(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { epoch, step, loss });
    }
    Ok(())
}

fn batch_tensor(items: Vec<Tensor<f32>>) -> Result<Tensor<f32>> {
    Tensor::stack(&items)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

fn require_classifier(model: &ModelGraph, set: &LabeledImageSet) -> Result<()> {
    match model.task {
        Task::Classification { classes } if classes >= set.classes => Ok(()),
        Task::Classification { classes } => Err(Error::InvalidArgument(format!(
            "model has {classes} outputs but the dataset has {} classes",
            set.classes
        ))),
        Task::SuperResolution { .. } => Err(Error::InvalidArgument(format!("{} is not a classifier", model.name))),
    }
}

/// Trains `store` in place. Epoch order, augmentation and batch composition
/// depend only on `cfg.seed`.
pub fn train_classifier(
    model: &ModelGraph,
    store: &mut ParamStore<f32>,
    train: &LabeledImageSet,
    val: Option<&LabeledImageSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    require_classifier(model, train)?;
    let stats = if cfg.augment.normalize {
        ChannelStats::of(train)?
    } else {
        ChannelStats::identity(train.image_shape()[0])
    };
    let root = Rng::new(cfg.seed);
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut history = History::default();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let lr = lr_at(epoch, cfg)?;
        let mut erng = root.split(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        erng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut items = Vec::with_capacity(batch.len());
            for &i in batch {
                items.push(augment(&train.image(i), &mut erng, &cfg.augment, &stats)?);
            }
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let x = batch_tensor(items)?;
            let mut s = Session::new(store, Mode::Train);
            let xv = s.input(x);
            let logits = model.forward(&mut s, &xv)?;
            let loss = s.tape.softmax_cross_entropy(logits, &labels)?;
            let lval = s.value(loss).data()[0] as f64;
            check_finite(lval, epoch, step)?;
            correct += count_correct(s.value(logits), &labels);
            loss_sum += lval * batch.len() as f64;
            let tape = s.into_tape();
            let grads = tape.backward(loss)?;
            drop(tape);
            sgd.step(store, &grads, lr, 1.0)?;
            step += 1;
        }
        let val_metric = match val {
            Some(v) => evaluate(model, store, v, &stats, cfg.batch_size)?,
            None => f64::NAN,
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: 100.0 * correct as f64 / train.len() as f64,
            val_metric,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.records.push(rec);
    }
    Ok(TrainOutcome { history, stats })
}

/// Eval-mode predictions (argmax) for every image.
pub fn predict(model: &ModelGraph, store: &ParamStore<f32>, set: &LabeledImageSet, stats: &ChannelStats, batch_size: usize) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut store = store.clone();
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for batch in idx.chunks(batch_size.max(1)) {
        let items = batch
            .iter()
            .map(|&i| stats.apply(&set.image(i)))
            .collect::<Result<Vec<_>>>()?;
        let logits = session::forward(model, &mut store, &batch_tensor(items)?, Mode::Eval)?;
        let k = logits.shape()[1];
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

/// Percent of images whose argmax prediction equals the label.
pub fn evaluate(model: &ModelGraph, store: &ParamStore<f32>, set: &LabeledImageSet, stats: &ChannelStats, batch_size: usize) -> Result<f64> {
    require_classifier(model, set)?;
    let pred = predict(model, store, set, stats, batch_size)?;
    Ok(accuracy(&pred, &set.labels))
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len() as f64
}

/// `10·log10(peak² / MSE)`, capped at 100 dB.
pub fn psnr(pred: &Tensor<f32>, target: &Tensor<f32>, peak: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape_mismatch(target.shape(), pred.shape()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// BT.601 luma of a `[1|3, H, W]` image in `[0, 1]`, as `[1, H, W]`.
pub fn luma(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected [C, H, W]".into(),
        });
    }
    match s[0] {
        1 => Ok(img.clone()),
        3 => {
            let p = s[1] * s[2];
            let d = img.data();
            let y = (0..p)
                .map(|i| 0.299 * d[i] + 0.587 * d[p + i] + 0.114 * d[2 * p + i])
                .collect();
            Tensor::from_vec(&[1, s[1], s[2]], y)
        }
        c => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("{c} channels; expected 1 or 3"),
        }),
    }
}

fn check_scale(scale: usize) -> Result<()> {
    if !(2..=4).contains(&scale) {
        return Err(Error::InvalidArgument(format!("scale {scale} not in {{2, 3, 4}}")));
    }
    Ok(())
}

/// Bicubic down-then-up version of an HR image: the network input under
/// pre-upsampling.
pub fn degrade(hr: &Tensor<f32>, scale: usize) -> Result<Tensor<f32>> {
    check_scale(scale)?;
    let lr = bicubic_resize(hr, scale, Direction::Down)?;
    let up = bicubic_resize(&lr, scale, Direction::Up)?;
    Ok(up.map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrConfig {
    pub scale: usize,
    pub steps: usize,
    pub batch_size: usize,
    /// HR patch side; rounded down to a multiple of `scale`.
    pub patch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip, scaled by `1/lr` as in adjustable
    /// gradient clipping. 0 disables.
    pub clip: f64,
    /// Steps after which lr drops by 10×.
    pub lr_step: usize,
    pub seed: u64,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            scale: 2,
            steps: 500,
            batch_size: 16,
            patch: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            clip: 0.01,
            lr_step: 350,
            seed: 0,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        if self.steps < 1 || self.batch_size < 1 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        if self.patch < 2 * self.scale {
            return Err(Error::Config(format!("patch {} too small for scale {}", self.patch, self.scale)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr_step > 0 && step >= self.lr_step {
            self.lr * 0.1
        } else {
            self.lr
        }
    }
}

/// One record per `log_every` steps; `epoch` holds the step count and
/// `val_metric` is NaN.
pub fn train_sr(
    model: &ModelGraph,
    store: &mut ParamStore<f32>,
    hr: &LabeledImageSet,
    cfg: &SrConfig,
    log_every: usize,
    mut on_log: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if hr.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !matches!(model.task, Task::SuperResolution { .. }) {
        return Err(Error::InvalidArgument(format!("{} is not a super-resolution model", model.name)));
    }
    let [_, h, w] = hr.image_shape();
    let patch = cfg.patch - cfg.patch % cfg.scale;
    if patch > h || patch > w {
        return Err(Error::InvalidGeometry(format!("patch {patch} exceeds {h}x{w} images")));
    }
    let root = Rng::new(cfg.seed);
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut history = History::default();
    let log_every = log_every.max(1);
    let (mut loss_acc, mut count, mut t0) = (0.0, 0usize, Instant::now());
    for step in 0..cfg.steps {
        let mut r = root.split(step as u64);
        let mut inputs = Vec::with_capacity(cfg.batch_size);
        let mut targets = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let img = hr.image(r.below(hr.len()));
            let top = r.below(h - patch + 1);
            let left = r.below(w - patch + 1);
            let mut p = luma(&crop(&img, top, left, patch, patch)?)?;
            if r.bernoulli(0.5) {
                p = flip_w(&p);
            }
            inputs.push(degrade(&p, cfg.scale)?);
            targets.push(p);
        }
        let lr = cfg.lr_at(step);
        let mut s = Session::new(store, Mode::Train);
        let xv = s.input(batch_tensor(inputs)?);
        let tv = s.input(batch_tensor(targets)?);
        let y = model.forward(&mut s, &xv)?;
        let loss = s.tape.mse_loss(y, tv)?;
        let lval = s.value(loss).data()[0] as f64;
        check_finite(lval, 0, step)?;
        let tape = s.into_tape();
        let grads = tape.backward(loss)?;
        drop(tape);
        let scale = if cfg.clip > 0.0 {
            let norm = grads
                .params()
                .flat_map(|(_, g)| g.data().iter().map(|&v| (v as f64).powi(2)))
                .sum::<f64>()
                .sqrt();
            let limit = cfg.clip / lr;
            if norm > limit {
                (limit / norm) as f32
            } else {
                1.0
            }
        } else {
            1.0
        };
        sgd.step(store, &grads, lr, scale)?;
        loss_acc += lval;
        count += 1;
        if (step + 1) % log_every == 0 || step + 1 == cfg.steps {
            let rec = EpochRecord {
                epoch: step + 1,
                lr,
                train_loss: loss_acc / count as f64,
                train_acc: 0.0,
                val_metric: f64::NAN,
                seconds: t0.elapsed().as_secs_f64(),
            };
            on_log(&rec);
            history.records.push(rec);
            loss_acc = 0.0;
            count = 0;
            t0 = Instant::now();
        }
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrEval {
    pub scale: usize,
    pub mean_psnr: f64,
    pub mean_bicubic_psnr: f64,
    pub per_image: Vec<(f64, f64)>,
}

/// PSNR of a `[1, H, W]` luma pair after shaving `border` pixels, peak 255.
pub fn shaved_psnr(pred: &Tensor<f32>, target: &Tensor<f32>, border: usize) -> Result<f64> {
    let (h, w) = (target.shape()[1], target.shape()[2]);
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::InvalidGeometry(format!("{h}x{w} too small to shave {border}")));
    }
    let a = crop(&pred.map(|v| v * 255.0), border, border, h - 2 * border, w - 2 * border)?;
    let b = crop(&target.map(|v| v * 255.0), border, border, h - 2 * border, w - 2 * border)?;
    psnr(&a, &b, 255.0)
}

/// Mean PSNR of the model and of plain bicubic upsampling on HR images,
/// measured on luma with a `scale`-pixel border shaved.
pub fn eval_sr(model: &ModelGraph, store: &ParamStore<f32>, hr: &LabeledImageSet, scale: usize) -> Result<SrEval> {
    check_scale(scale)?;
    if hr.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut store = store.clone();
    let mut per_image = Vec::with_capacity(hr.len());
    for i in 0..hr.len() {
        let target = luma(&mod_crop(&hr.image(i), scale)?)?;
        let up = degrade(&target, scale)?;
        let (c, h, w) = (1, target.shape()[1], target.shape()[2]);
        let x = up.clone().reshape(&[1, c, h, w])?;
        let y = session::forward(model, &mut store, &x, Mode::Eval)?
            .reshape(&[c, h, w])?
            .map(|v| v.clamp(0.0, 1.0));
        per_image.push((shaved_psnr(&y, &target, scale)?, shaved_psnr(&up, &target, scale)?));
    }
    let n = per_image.len() as f64;
    Ok(SrEval {
        scale,
        mean_psnr: per_image.iter().map(|p| p.0).sum::<f64>() / n,
        mean_bicubic_psnr: per_image.iter().map(|p| p.1).sum::<f64>() / n,
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_anchor_points() {
        let c = sched();
        for (e, want) in [(5, 0.05), (10, 0.1), (80, 0.05), (150, 0.0)] {
            assert!((lr_at(e, &c).unwrap() - want).abs() < 1e-12, "epoch {e}");
        }
        assert!(lr_at(0, &c).is_err());
        assert!(lr_at(151, &c).is_err());
    }

    #[test]
    fn schedule_continuous_at_boundary() {
        let c = sched();
        let warm = c.peak_lr * 10.0 / 10.0;
        let cosine = c.peak_lr / 2.0 * (1.0 + (std::f64::consts::PI * 0.0 / 140.0).cos());
        assert_eq!(warm, cosine);
        assert!((lr_at(11, &c).unwrap() - 0.1).abs() < 2e-4);
    }

    #[test]
    fn sgd_single_and_momentum_steps() {
        let mut p = Tensor::from_vec(&[1], vec![1.0f32]).unwrap();
        let mut v = Tensor::zeros(&[1]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0f32]).unwrap();
        sgd_step(&mut p, &mut v, &g, 0.1, 0.0, 0.0).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-7);

        // Hand-unrolled: v1 = g + wd·p0, p1 = p0 − lr·v1; v2 = m·v1 + g + wd·p1.
        let (p0, gv, lr, m, wd) = (2.0f64, 0.5, 0.1, 0.9, 0.01);
        let v1 = gv + wd * p0;
        let p1 = p0 - lr * v1;
        let v2 = m * v1 + gv + wd * p1;
        let p2 = p1 - lr * v2;
        let mut p = Tensor::from_vec(&[1], vec![p0 as f32]).unwrap();
        let mut v = Tensor::zeros(&[1]).unwrap();
        let g = Tensor::from_vec(&[1], vec![gv as f32]).unwrap();
        sgd_step(&mut p, &mut v, &g, lr, m, wd).unwrap();
        sgd_step(&mut p, &mut v, &g, lr, m, wd).unwrap();
        assert!((p.data()[0] as f64 - p2).abs() < 1e-6);

        let before = p.clone();
        sgd_step(&mut p, &mut v, &g, 0.0, m, wd).unwrap();
        assert_eq!(p, before);
        assert!(sgd_step(&mut p, &mut v, &Tensor::zeros(&[2]).unwrap(), 0.1, m, wd).is_err());
    }

    #[test]
    fn flip_is_involution_and_crop_in_range() {
        let mut rng = Rng::new(2);
        let mut img = Tensor::<f32>::zeros(&[3, 8, 8]).unwrap();
        img.data_mut().iter_mut().for_each(|v| *v = rng.uniform() as f32);
        let cfg = AugmentConfig {
            normalize: false,
            flip: Flip::Always,
            crop_pad: 0,
        };
        let id = ChannelStats::identity(3);
        let twice = augment(&augment(&img, &mut rng, &cfg, &id).unwrap(), &mut rng, &cfg, &id).unwrap();
        assert_eq!(twice, img);

        let centered = padded_crop(&img, 3, 8, 8, 4, 4, 4).unwrap();
        assert_eq!(centered, img);
        assert!(padded_crop(&img, 3, 8, 8, 4, 9, 0).is_err());
    }

    #[test]
    fn psnr_reference_values() {
        let a = Tensor::from_vec(&[4], vec![0.0f32, 10.0, 20.0, 30.0]).unwrap();
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 1.0);
        assert!((psnr(&a, &b, 255.0).unwrap() - 48.1308).abs() < 1e-4);
        let c = a.map(|v| v + 255.0);
        assert!(psnr(&a, &c, 255.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn history_csv_round_trip() {
        let h = History {
            records: vec![EpochRecord {
                epoch: 1,
                lr: 0.1 / 3.0,
                train_loss: 2.5,
                train_acc: 12.5,
                val_metric: f64::NAN,
                seconds: 0.25,
            }],
        };
        let back = History::from_csv(&h.to_csv()).unwrap();
        assert_eq!(back.records[0].lr, h.records[0].lr);
        assert!(back.records[0].val_metric.is_nan());
        assert_eq!(back.to_csv(), h.to_csv());
    }

    #[test]
    fn scale_outside_range_rejected() {
        let img = Tensor::<f32>::zeros(&[1, 8, 8]).unwrap();
        assert!(degrade(&img, 5).is_err());
        assert!(degrade(&img, 2).is_ok());
    }
}
