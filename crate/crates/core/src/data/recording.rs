//! In-memory EEG recordings and chunk views.

use crate::data::stage::Label;
use crate::error::{Error, Result};

/// One annotated rhythm span inside an epoch, in samples relative to the
/// epoch start. `end_sample` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RhythmSpan {
    pub start_sample: u32,
    pub end_sample: u32,
    pub tag: String,
}

impl RhythmSpan {
    pub fn new(start_sample: u32, end_sample: u32, tag: impl Into<String>) -> RhythmSpan {
        RhythmSpan {
            start_sample,
            end_sample,
            tag: tag.into(),
        }
    }

    pub fn len(&self) -> u32 {
        self.end_sample.saturating_sub(self.start_sample)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single-channel recording split into fixed-length scoring epochs.
///
/// Every epoch holds exactly `sampling_rate_hz * epoch_len_s` samples in
/// microvolts, and exactly one [`Label`]. Rhythm annotations are optional
/// ground-truth spans used to score attribution methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sampling_rate_hz: u32,
    pub epoch_len_s: u16,
    pub epochs: Vec<Vec<f32>>,
    pub labels: Vec<Label>,
    /// Per-epoch rhythm spans; empty when the source carries none.
    pub annotations: Vec<Vec<RhythmSpan>>,
}

impl Recording {
    /// Samples carried by each epoch.
    pub fn epoch_samples(&self) -> usize {
        self.sampling_rate_hz as usize * self.epoch_len_s as usize
    }

    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    /// Checks every structural invariant; returns the recording untouched.
    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate_hz == 0 || self.epoch_len_s == 0 {
            return Err(Error::Validation(
                "sampling rate and epoch length must be positive".into(),
            ));
        }
        if self.labels.len() != self.epochs.len() {
            return Err(Error::Validation(format!(
                "{} epochs but {} labels",
                self.epochs.len(),
                self.labels.len()
            )));
        }
        if !self.annotations.is_empty() && self.annotations.len() != self.epochs.len() {
            return Err(Error::Validation(format!(
                "{} epochs but {} annotation lists",
                self.epochs.len(),
                self.annotations.len()
            )));
        }
        let want = self.epoch_samples();
        for (i, e) in self.epochs.iter().enumerate() {
            if e.len() != want {
                return Err(Error::Validation(format!(
                    "epoch {i} has {} samples, expected {want}",
                    e.len()
                )));
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "epoch {i} contains non-finite samples"
                )));
            }
        }
        for (i, spans) in self.annotations.iter().enumerate() {
            for s in spans {
                if s.start_sample >= s.end_sample || s.end_sample as usize > want {
                    return Err(Error::Validation(format!(
                        "epoch {i}: span {}..{} outside 0..{want}",
                        s.start_sample, s.end_sample
                    )));
                }
            }
        }
        Ok(())
    }

    /// Splits epoch `index` into `n_chunks` equal parts.
    pub fn chunk_epoch(&self, index: usize, n_chunks: usize) -> Result<ChunkSet> {
        let epoch = self.epochs.get(index).ok_or_else(|| {
            Error::Usage(format!(
                "epoch index {index} out of range 0..{}",
                self.epochs.len()
            ))
        })?;
        ChunkSet::from_samples(epoch.clone(), n_chunks)
    }

    /// Returns a copy with every sample standardized by this recording's own
    /// mean and standard deviation. A silent (zero-variance) recording only
    /// gets its mean removed.
    pub fn standardized(&self) -> Recording {
        let n: usize = self.epochs.iter().map(Vec::len).sum();
        if n == 0 {
            return self.clone();
        }
        let mean = self
            .epochs
            .iter()
            .flat_map(|e| e.iter())
            .map(|&v| v as f64)
            .sum::<f64>()
            / n as f64;
        let var = self
            .epochs
            .iter()
            .flat_map(|e| e.iter())
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        let mut out = self.clone();
        for e in &mut out.epochs {
            for v in e.iter_mut() {
                *v = ((*v as f64 - mean) * scale) as f32;
            }
        }
        out
    }
}

/// An epoch partitioned into `n_chunks` contiguous, equally long chunks.
///
/// The chunks are windows into one owned buffer, so concatenating them in
/// order reproduces the source epoch exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSet {
    samples: Vec<f32>,
    n_chunks: usize,
}

impl ChunkSet {
    pub fn from_samples(samples: Vec<f32>, n_chunks: usize) -> Result<ChunkSet> {
        if n_chunks == 0 {
            return Err(Error::Usage("chunk count must be positive".into()));
        }
        if samples.len() % n_chunks != 0 {
            return Err(Error::Usage(format!(
                "epoch length {} is not divisible by {n_chunks} chunks",
                samples.len()
            )));
        }
        Ok(ChunkSet { samples, n_chunks })
    }

    pub fn n_chunks(&self) -> usize {
        self.n_chunks
    }

    /// Samples per chunk.
    pub fn chunk_len(&self) -> usize {
        self.samples.len() / self.n_chunks
    }

    pub fn chunk(&self, i: usize) -> &[f32] {
        let w = self.chunk_len();
        &self.samples[i * w..(i + 1) * w]
    }

    pub fn chunks(&self) -> impl Iterator<Item = &[f32]> {
        self.samples.chunks_exact(self.chunk_len())
    }

    /// The underlying epoch, unchanged.
    pub fn as_epoch(&self) -> &[f32] {
        &self.samples
    }
}
