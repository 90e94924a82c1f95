//! Mini-batched window training shared by both architectures.
//!
//! A training example is a window of `context_frames` consecutive epochs
//! from one recording. Windows are shuffled and batched per epoch; each
//! window runs forward and backward on its own tape, gradients are
//! averaged in window order, and one optimizer step follows per batch.
//! Batch normalization statistics captured during the forward passes are
//! pooled per site and folded into the running buffers after the step.
//! The loop validates once per epoch, keeps the best-validation weights,
//! and stops early when the best loss stalls.

pub mod optim;
pub mod schedule;

pub use optim::{AdamW, OptimHyper};
pub use schedule::{cyclic_lr, EarlyStopper, LrSchedule};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ChunkSet, Label, Recording, N_CLASSES};
use crate::error::{Error, Result};
use crate::model::{window_leaves, Arch, BindMode, Model};
use crate::nn::{BatchStats, Graph, Tensor, VarId};

/// Knobs of one training run. The defaults mirror the reference recipe:
/// batches of 64 windows, up to 150 epochs, patience 8, a triangular
/// learning-rate cycle from 1e-4 to 1e-3 spanning 4 epochs, and
/// supervision on the center frame only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Step between consecutive window starts within a recording.
    pub window_stride: usize,
    /// Supervise every non-excluded frame of the window instead of only
    /// the center one.
    pub all_frames_loss: bool,
    /// Weight each frame's loss by the inverse frequency of its class.
    pub class_weighting: bool,
    /// Standardize each recording to zero mean and unit variance first.
    pub standardize: bool,
    /// Running-statistics update factor for batch normalization.
    pub bn_momentum: f64,
    pub base_lr: f64,
    pub max_lr: f64,
    /// Cycle period in training epochs.
    pub cycle_epochs: usize,
    pub hyper: OptimHyper,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: 64,
            max_epochs: 150,
            patience: 8,
            seed: 0,
            window_stride: 1,
            all_frames_loss: false,
            class_weighting: false,
            standardize: true,
            bn_momentum: 0.1,
            base_lr: 1e-4,
            max_lr: 1e-3,
            cycle_epochs: 4,
            hyper: OptimHyper::default(),
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
            || self.window_stride == 0
            || self.cycle_epochs == 0
        {
            return Err(Error::Config(
                "batch size, epoch cap, patience, stride, and cycle length must be positive"
                    .into(),
            ));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("normalization momentum must lie in (0, 1]".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::Config(
                "learning-rate bounds must satisfy 0 < base <= max".into(),
            ));
        }
        self.hyper.validate()
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate at the first optimizer step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Renders the history as CSV with a `epoch,train_loss,val_loss,val_acc,lr`
/// header.
pub fn history_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
        ));
    }
    out
}

/// One recording prepared for the loop: per-epoch chunk sets, labels, and
/// (on the cached path) precomputed encoder features.
struct Prepped {
    labels: Vec<Label>,
    chunks: Vec<ChunkSet>,
    feats: Option<Vec<Vec<Tensor<f32>>>>,
}

fn prep(recs: &[Recording], n_chunks: usize, standardize: bool) -> Result<Vec<Prepped>> {
    recs.iter()
        .map(|r| {
            r.validate()?;
            let r = if standardize { r.standardized() } else { r.clone() };
            let chunks = (0..r.n_epochs())
                .map(|e| r.chunk_epoch(e, n_chunks))
                .collect::<Result<Vec<ChunkSet>>>()?;
            Ok(Prepped { labels: r.labels.clone(), chunks, feats: None })
        })
        .collect()
}

/// A window plus its supervised frames as `(offset, class)` pairs.
/// Windows without any supervised frame are never materialized.
struct WindowRef {
    rec: usize,
    start: usize,
    frames: Vec<(usize, usize)>,
}

fn collect_windows(
    recs: &[Prepped],
    m: usize,
    stride: usize,
    center_only: bool,
) -> Vec<WindowRef> {
    let mut out = Vec::new();
    for (ri, rec) in recs.iter().enumerate() {
        if rec.labels.len() < m {
            continue;
        }
        let mut start = 0;
        while start + m <= rec.labels.len() {
            let frames: Vec<(usize, usize)> = if center_only {
                rec.labels[start + m / 2]
                    .stage()
                    .map(|s| (m / 2, s.index()))
                    .into_iter()
                    .collect()
            } else {
                (0..m)
                    .filter_map(|f| rec.labels[start + f].stage().map(|s| (f, s.index())))
                    .collect()
            };
            if !frames.is_empty() {
                out.push(WindowRef { rec: ri, start, frames });
            }
            start += stride;
        }
    }
    out
}

/// Inverse-frequency weights over the supervised frames, normalized so a
/// balanced set gets all ones. Disabled weighting returns all ones.
fn class_weights(windows: &[WindowRef], enabled: bool) -> Vec<f64> {
    if !enabled {
        return vec![1.0; N_CLASSES];
    }
    let mut counts = [0usize; N_CLASSES];
    for w in windows {
        for &(_, c) in &w.frames {
            counts[c] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                total as f64 / (N_CLASSES as f64 * c as f64)
            }
        })
        .collect()
}

struct WindowPass {
    loss: f64,
    correct: usize,
    scored: usize,
    grads: Option<Vec<Vec<f32>>>,
    stats: Vec<BatchStats<f32>>,
}

fn run_window(
    model: &Model<f32>,
    rec: &Prepped,
    w: &WindowRef,
    m: usize,
    weights: &[f64],
    train: bool,
) -> Result<WindowPass> {
    let mut g = Graph::new();
    let binds = model.bind(&mut g, if train { BindMode::Train } else { BindMode::Eval });
    let trace = match &rec.feats {
        Some(feats) => {
            let ids: Vec<Vec<VarId>> = feats[w.start..w.start + m]
                .iter()
                .map(|frame| frame.iter().map(|t| g.leaf(t)).collect())
                .collect();
            model.forward_from_features(&mut g, &binds, &ids)?
        }
        None => {
            let ids = window_leaves(&mut g, &rec.chunks[w.start..w.start + m]);
            model.forward_window(&mut g, &binds, &ids, train)?
        }
    };

    let logits = g.value(trace.logits);
    let classes = logits.dim(1);
    let mut correct = 0usize;
    for &(f, cls) in &w.frames {
        let row = &logits.data()[f * classes..(f + 1) * classes];
        if argmax(row) == cls {
            correct += 1;
        }
    }

    let weight_sum: f64 = w.frames.iter().map(|&(_, c)| weights[c]).sum();
    if weight_sum <= 0.0 {
        return Err(Error::Usage("every supervised frame has zero class weight".into()));
    }
    let n_frames = w.frames.len() as f64;
    let ces = w
        .frames
        .iter()
        .map(|&(f, cls)| {
            let row = g.row(trace.logits, f)?;
            let ce = g.cross_entropy(row, cls)?;
            let factor = weights[cls] * n_frames / weight_sum;
            Ok(if (factor - 1.0).abs() < 1e-12 {
                ce
            } else {
                g.scale(ce, factor as f32)
            })
        })
        .collect::<Result<Vec<VarId>>>()?;
    let loss = g.mean_scalars(&ces)?;
    let loss_val = g.value(loss).item() as f64;

    let (grads, stats) = if train {
        g.backward(loss)?;
        let mut out = Vec::new();
        for (gi, grp) in model.groups().iter().enumerate() {
            if grp.frozen {
                continue;
            }
            for (pi, p) in grp.params.iter().enumerate() {
                out.push(match g.grad(binds.id(gi, pi)) {
                    Some(gr) => gr.to_vec(),
                    None => vec![0.0; p.value.len()],
                });
            }
        }
        (Some(out), g.take_batch_stats())
    } else {
        (None, Vec::new())
    };
    Ok(WindowPass { loss: loss_val, correct, scored: w.frames.len(), grads, stats })
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Pools per-call normalization statistics into one record per site using
/// the law of total variance, matching what a single pass over the
/// concatenated data would have measured (records are weighted equally, as
/// all calls at a site see the same element count).
fn pool_stats<'a>(stats: impl Iterator<Item = &'a BatchStats<f32>>) -> Vec<BatchStats<f32>> {
    struct Acc {
        count: f64,
        mean: Vec<f64>,
        var: Vec<f64>,
        sq: Vec<f64>,
    }
    let mut by_site: BTreeMap<usize, Acc> = BTreeMap::new();
    for s in stats {
        let a = by_site.entry(s.key).or_insert_with(|| Acc {
            count: 0.0,
            mean: vec![0.0; s.mean.len()],
            var: vec![0.0; s.var.len()],
            sq: vec![0.0; s.mean.len()],
        });
        a.count += 1.0;
        for (i, (&m, &v)) in s.mean.iter().zip(&s.var).enumerate() {
            a.mean[i] += m as f64;
            a.var[i] += v as f64;
            a.sq[i] += (m as f64) * (m as f64);
        }
    }
    by_site
        .into_iter()
        .map(|(key, a)| {
            let mean: Vec<f32> = a.mean.iter().map(|&x| (x / a.count) as f32).collect();
            let var: Vec<f32> = (0..a.var.len())
                .map(|i| {
                    let mu = a.mean[i] / a.count;
                    let v = a.var[i] / a.count + a.sq[i] / a.count - mu * mu;
                    v.max(0.0) as f32
                })
                .collect();
            BatchStats { key, mean, var }
        })
        .collect()
}

/// Trains `model` on raw windows. Works for either architecture; frozen
/// groups stay outside the optimizer. Returns the history and restores the
/// best-validation weights into `model`.
pub fn train(
    model: &mut Model<f32>,
    train_recs: &[Recording],
    val_recs: &[Recording],
    settings: &TrainSettings,
) -> Result<TrainReport> {
    let n = model.config().n_chunks;
    let train_data = prep(train_recs, n, settings.standardize)?;
    let val_data = prep(val_recs, n, settings.standardize)?;
    train_core(model, &train_data, &val_data, settings)
}

/// Trains the compact variant on cached encoder features. Since its
/// encoder is frozen with running-statistics normalization, every chunk's
/// feature vector is a constant and is computed exactly once.
pub fn train_nano(
    nano: &mut Model<f32>,
    train_recs: &[Recording],
    val_recs: &[Recording],
    settings: &TrainSettings,
) -> Result<TrainReport> {
    if nano.arch() != Arch::Nano {
        return Err(Error::Config(
            "cached-feature training requires the compact variant".into(),
        ));
    }
    let n = nano.config().n_chunks;
    let mut train_data = prep(train_recs, n, settings.standardize)?;
    let mut val_data = prep(val_recs, n, settings.standardize)?;
    for rec in train_data.iter_mut().chain(val_data.iter_mut()) {
        rec.feats = Some(
            rec.chunks
                .par_iter()
                .map(|cs| nano.chunk_features(cs))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    train_core(nano, &train_data, &val_data, settings)
}

/// Mean loss and accuracy of `model` on a recording set, using the same
/// windowing as training and running-statistics normalization.
pub fn validation_scores(
    model: &Model<f32>,
    recs: &[Recording],
    settings: &TrainSettings,
) -> Result<(f64, f64)> {
    settings.validate()?;
    let data = prep(recs, model.config().n_chunks, settings.standardize)?;
    let m = model.config().context_frames;
    let windows = collect_windows(&data, m, settings.window_stride, !settings.all_frames_loss);
    if windows.is_empty() {
        return Err(Error::Config("no scored windows in the evaluation set".into()));
    }
    let weights = vec![1.0; N_CLASSES];
    score_windows(model, &data, &windows, m, &weights)
}

fn score_windows(
    model: &Model<f32>,
    data: &[Prepped],
    windows: &[WindowRef],
    m: usize,
    weights: &[f64],
) -> Result<(f64, f64)> {
    let passes = windows
        .par_iter()
        .map(|w| run_window(model, &data[w.rec], w, m, weights, false))
        .collect::<Result<Vec<WindowPass>>>()?;
    let loss = passes.iter().map(|p| p.loss).sum::<f64>() / passes.len() as f64;
    let correct: usize = passes.iter().map(|p| p.correct).sum();
    let scored: usize = passes.iter().map(|p| p.scored).sum();
    Ok((loss, correct as f64 / scored as f64))
}

fn train_core(
    model: &mut Model<f32>,
    train_data: &[Prepped],
    val_data: &[Prepped],
    s: &TrainSettings,
) -> Result<TrainReport> {
    s.validate()?;
    let m = model.config().context_frames;
    let center_only = !s.all_frames_loss;
    let train_windows = collect_windows(train_data, m, s.window_stride, center_only);
    let val_windows = collect_windows(val_data, m, s.window_stride, center_only);
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Config(
            "training and validation splits must each yield at least one scored window".into(),
        ));
    }
    let weights = class_weights(&train_windows, s.class_weighting);

    let steps_per_epoch = train_windows.len().div_ceil(s.batch_size);
    let sched = LrSchedule {
        base_lr: s.base_lr,
        max_lr: s.max_lr,
        period_steps: (s.cycle_epochs * steps_per_epoch).max(2),
    };
    sched.validate()?;

    let sizes: Vec<usize> = model
        .groups()
        .iter()
        .filter(|g| !g.frozen)
        .flat_map(|g| g.params.iter().map(|p| p.value.len()))
        .collect();
    let mut opt = AdamW::<f32>::new(s.hyper, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut stopper = EarlyStopper::new(s.patience);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut best: Option<Model<f32>> = None;
    let mut step = 0usize;

    for epoch in 1..=s.max_epochs {
        order.shuffle(&mut rng);
        let epoch_lr = cyclic_lr(step, &sched);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(s.batch_size) {
            let lr = cyclic_lr(step, &sched);
            let passes = batch
                .par_iter()
                .map(|&wi| {
                    let w = &train_windows[wi];
                    run_window(model, &train_data[w.rec], w, m, &weights, true)
                })
                .collect::<Result<Vec<WindowPass>>>()?;

            let mut acc: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for p in &passes {
                loss_sum += p.loss;
                for (a, g) in acc.iter_mut().zip(p.grads.as_ref().expect("training pass")) {
                    for (x, &y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            seen += passes.len();
            let inv = 1.0 / passes.len() as f32;
            for a in &mut acc {
                for x in a {
                    *x *= inv;
                }
            }

            {
                let mut params: Vec<&mut [f32]> = Vec::new();
                for grp in model.groups_mut() {
                    if grp.frozen {
                        continue;
                    }
                    for p in &mut grp.params {
                        params.push(p.value.data_mut());
                    }
                }
                let grads: Vec<&[f32]> = acc.iter().map(|v| v.as_slice()).collect();
                opt.step(lr, &mut params, &grads)?;
            }

            let pooled = pool_stats(passes.iter().flat_map(|p| &p.stats));
            if !pooled.is_empty() {
                model.apply_batch_stats(&pooled, s.bn_momentum as f32)?;
            }
            step += 1;
        }

        let (val_loss, val_acc) = score_windows(model, val_data, &val_windows, m, &weights)?;
        history.push(EpochRow {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_acc,
            lr: epoch_lr,
        });
        let stop = stopper.observe(epoch, val_loss);
        if stopper.just_improved() {
            best = Some(model.clone());
        }
        if stop {
            break;
        }
    }

    if let Some(b) = best {
        *model = b;
    }
    Ok(TrainReport {
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
    })
}
