//! Whole-recording staging by sliding a context window over cached
//! encoder features.
//!
//! The encoder sees each 30-s epoch exactly once regardless of how many
//! windows cover it, so inference first encodes every chunk of every epoch
//! (`recording_features`) and then reruns only the sequence stages per
//! window. Near the start and end of a recording the window replicates the
//! boundary epoch so that the center frame always lines up with the epoch
//! being scored.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::data::{Recording, SleepStage};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{BindMode, Model};
use crate::nn::{Graph, Tensor, VarId};
use crate::train::argmax;

/// Environment variable capping inference and attribution parallelism.
pub const THREADS_ENV: &str = "SOMNONET_THREADS";

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Runs `f` on a pool capped to `SOMNONET_THREADS` workers when the
/// variable holds a positive integer, and on the global pool otherwise.
/// The cap is read once per process. Training never routes through here.
pub fn with_eval_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let pool = POOL.get_or_init(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .map(|n| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("inference thread pool")
            })
    });
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

/// Encodes every chunk of every epoch with running-statistics
/// normalization, fanning out across epochs.
pub fn recording_features(
    model: &Model<f32>,
    rec: &Recording,
    standardize: bool,
) -> Result<Vec<Vec<Tensor<f32>>>> {
    rec.validate()?;
    let rec = if standardize { rec.standardized() } else { rec.clone() };
    let n_chunks = model.config().n_chunks;
    with_eval_pool(|| {
        (0..rec.n_epochs())
            .into_par_iter()
            .map(|e| model.chunk_features(&rec.chunk_epoch(e, n_chunks)?))
            .collect()
    })
}

/// Indices of the epochs a context window sees when scoring epoch `e`,
/// clamped to the recording so boundary epochs repeat.
pub fn window_epochs(e: usize, n_epochs: usize, frames: usize) -> Vec<usize> {
    let center = frames / 2;
    (0..frames)
        .map(|f| (e + f).saturating_sub(center).min(n_epochs - 1))
        .collect()
}

/// Stages every epoch from cached features, one centered window per epoch.
pub fn predict_from_features(
    model: &Model<f32>,
    feats: &[Vec<Tensor<f32>>],
) -> Result<Vec<SleepStage>> {
    if feats.is_empty() {
        return Err(Error::Usage("no epochs to stage".into()));
    }
    let frames = model.config().context_frames;
    let center = frames / 2;
    with_eval_pool(|| {
        (0..feats.len())
            .into_par_iter()
            .map(|e| {
                let mut g = Graph::new();
                let binds = model.bind(&mut g, BindMode::Eval);
                let window: Vec<Vec<VarId>> = window_epochs(e, feats.len(), frames)
                    .iter()
                    .map(|&idx| feats[idx].iter().map(|t| g.leaf(t)).collect())
                    .collect();
                let trace = model.forward_from_features(&mut g, &binds, &window)?;
                let row = g.row(trace.logits, center)?;
                let pred = argmax(g.value(row).data());
                Ok(SleepStage::from_index(pred).expect("class index in range"))
            })
            .collect()
    })
}

/// Stages one recording end to end.
pub fn predict_recording(
    model: &Model<f32>,
    rec: &Recording,
    standardize: bool,
) -> Result<Vec<SleepStage>> {
    let feats = recording_features(model, rec, standardize)?;
    predict_from_features(model, &feats)
}

/// Stages a set of recordings and tallies predictions against their scored
/// labels in one confusion matrix.
pub fn evaluate_recordings(
    model: &Model<f32>,
    recs: &[Recording],
    standardize: bool,
) -> Result<ConfusionMatrix> {
    if recs.is_empty() {
        return Err(Error::Usage("no recordings to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::new();
    for rec in recs {
        let preds = predict_recording(model, rec, standardize)?;
        cm.merge(&ConfusionMatrix::from_pairs(&preds, &rec.labels)?);
    }
    Ok(cm)
}
