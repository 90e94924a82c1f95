//! Synthetic single-channel EEG with stage-dependent rhythm content.
//!
//! Each stage gets a distinct, annotated signal recipe on top of a shared
//! pink-noise floor:
//!
//! * **W** — alpha trains (8–13 Hz, 20–50 µV) covering just over half of the
//!   epoch, aligned to whole seconds.
//! * **N1** — alpha covering 20–44%, with low-amplitude mixed-frequency
//!   (LAMF, 4–7 Hz) activity filling the remaining seconds.
//! * **N2** — pink-noise background plus 2–4 spindles (12–14 Hz, 0.5–1.5 s,
//!   Hann envelope).
//! * **N3** — slow waves (0.5–2 Hz, 75–150 µV) over a quarter to half of the
//!   epoch.
//! * **R** — sustained LAMF across the whole epoch.
//!
//! Every rhythm burst is recorded as a [`RhythmSpan`], which is what the
//! attribution-localization harness scores against. Generation is fully
//! deterministic in the seed; each subject draws from its own stream, so
//! subject `i` is identical no matter how many subjects are requested.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::recording::{Recording, RhythmSpan};
use crate::data::stage::{Label, SleepStage, N_CLASSES};
use crate::error::{Error, Result};

pub const TAG_ALPHA: &str = "alpha";
pub const TAG_LAMF: &str = "lamf";
pub const TAG_SPINDLE: &str = "spindle";
pub const TAG_SLOW_WAVE: &str = "slow_wave";

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub sampling_rate_hz: u32,
    pub epoch_len_s: u16,
    /// Per-stage probabilities `[W, N1, N2, N3, R]`; must sum to one.
    pub class_mix: [f64; N_CLASSES],
    /// RMS of the pink-noise floor, in µV.
    pub noise_sigma: f32,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_subjects: 1,
            epochs_per_subject: 60,
            sampling_rate_hz: 100,
            epoch_len_s: 30,
            class_mix: [0.2; N_CLASSES],
            noise_sigma: 10.0,
            rng_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.epochs_per_subject == 0 {
            return Err(Error::Config(
                "subject and epoch counts must be positive".into(),
            ));
        }
        if self.sampling_rate_hz == 0 {
            return Err(Error::Config("sampling rate must be positive".into()));
        }
        if self.epoch_len_s < 10 {
            return Err(Error::Config(format!(
                "epoch length {}s is too short to host rhythm structure (need >= 10s)",
                self.epoch_len_s
            )));
        }
        if self.class_mix.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("class mix entries must lie in [0, 1]".into()));
        }
        let total: f64 = self.class_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "class mix must sum to 1, got {total}"
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generates one recording per subject according to `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Recording>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_subjects);
    for subject in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(subject as u64);
        out.push(generate_subject(spec, &mut rng)?);
    }
    Ok(out)
}

fn generate_subject(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Recording> {
    let rate = spec.sampling_rate_hz as usize;
    let len_s = spec.epoch_len_s as usize;
    let n_samples = rate * len_s;
    // Subjects differ in overall signal amplitude.
    let amp_scale = rng.gen_range(0.85..1.15);

    let mut epochs = Vec::with_capacity(spec.epochs_per_subject);
    let mut labels = Vec::with_capacity(spec.epochs_per_subject);
    let mut annotations = Vec::with_capacity(spec.epochs_per_subject);
    for _ in 0..spec.epochs_per_subject {
        let stage = draw_stage(rng, &spec.class_mix);
        let mut signal = pink_noise(rng, n_samples, spec.noise_sigma as f64 * amp_scale);
        let mut spans = Vec::new();
        match stage {
            SleepStage::Wake => {
                // Alpha over 53-61% of the epoch: clearly more than half, but
                // leaving the attribution target well-defined.
                let covered = gen_seconds(rng, len_s, 0.53, 0.61);
                add_second_runs(rng, &mut signal, &mut spans, RunKind::Alpha, covered, 2, 3, rate, amp_scale);
            }
            SleepStage::N1 => {
                let covered = gen_seconds(rng, len_s, 0.20, 0.44);
                add_second_runs(rng, &mut signal, &mut spans, RunKind::Alpha, covered, 1, 2, rate, amp_scale);
                fill_gaps_with_lamf(rng, &mut signal, &mut spans, len_s, rate, amp_scale);
            }
            SleepStage::N2 => {
                add_spindles(rng, &mut signal, &mut spans, rate, amp_scale);
            }
            SleepStage::N3 => {
                let covered = gen_seconds(rng, len_s, 0.26, 0.51);
                add_second_runs(rng, &mut signal, &mut spans, RunKind::SlowWave, covered, 1, 3, rate, amp_scale);
            }
            SleepStage::Rem => {
                add_lamf(rng, &mut signal, 0, n_samples, rate, amp_scale);
                spans.push(RhythmSpan::new(0, n_samples as u32, TAG_LAMF));
            }
        }
        epochs.push(signal);
        labels.push(Label::Stage(stage));
        spans.sort_by_key(|s| s.start_sample);
        annotations.push(spans);
    }

    let rec = Recording {
        sampling_rate_hz: spec.sampling_rate_hz,
        epoch_len_s: spec.epoch_len_s,
        epochs,
        labels,
        annotations,
    };
    rec.validate()?;
    Ok(rec)
}

fn draw_stage(rng: &mut ChaCha8Rng, mix: &[f64; N_CLASSES]) -> SleepStage {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in mix.iter().enumerate() {
        acc += p;
        if r < acc {
            return SleepStage::ALL[i];
        }
    }
    // Rounding left us past the last boundary.
    *mix.iter()
        .enumerate()
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(i, _)| &SleepStage::ALL[i])
        .expect("validated mix has a positive entry")
}

/// Draws a whole-second coverage target inside `[lo, hi)` of the epoch.
fn gen_seconds(rng: &mut ChaCha8Rng, len_s: usize, lo: f64, hi: f64) -> usize {
    let min = (lo * len_s as f64).ceil() as usize;
    let max = (hi * len_s as f64).floor() as usize;
    rng.gen_range(min..=max.max(min))
}

#[derive(Clone, Copy)]
enum RunKind {
    Alpha,
    SlowWave,
}

/// Splits `covered` seconds into `min_runs..=max_runs` second-aligned runs,
/// places them without touching each other, and renders one rhythm per run.
fn add_second_runs(
    rng: &mut ChaCha8Rng,
    signal: &mut [f32],
    spans: &mut Vec<RhythmSpan>,
    kind: RunKind,
    covered: usize,
    min_runs: usize,
    max_runs: usize,
    rate: usize,
    amp_scale: f64,
) {
    const MIN_RUN_S: usize = 2;
    let len_s = signal.len() / rate;
    let max_fit = (covered / MIN_RUN_S).max(1);
    let n_runs = rng.gen_range(min_runs..=max_runs.min(max_fit).max(min_runs));
    let lengths = split_total(rng, covered, n_runs, MIN_RUN_S);
    let starts = place_runs(rng, len_s, &lengths, 1);
    for (&start_s, &len) in starts.iter().zip(&lengths) {
        let (a, b) = (start_s * rate, (start_s + len) * rate);
        match kind {
            RunKind::Alpha => {
                let freq = rng.gen_range(8.0..13.0);
                let amp = rng.gen_range(20.0..50.0) * amp_scale;
                add_sine(rng, &mut signal[a..b], freq, amp, rate);
                spans.push(RhythmSpan::new(a as u32, b as u32, TAG_ALPHA));
            }
            RunKind::SlowWave => {
                let freq = rng.gen_range(0.5..2.0);
                let amp = rng.gen_range(75.0..150.0) * amp_scale;
                add_sine(rng, &mut signal[a..b], freq, amp, rate);
                spans.push(RhythmSpan::new(a as u32, b as u32, TAG_SLOW_WAVE));
            }
        }
    }
}

/// Marks every maximal run of not-yet-annotated whole seconds as LAMF.
fn fill_gaps_with_lamf(
    rng: &mut ChaCha8Rng,
    signal: &mut [f32],
    spans: &mut Vec<RhythmSpan>,
    len_s: usize,
    rate: usize,
    amp_scale: f64,
) {
    let mut taken = vec![false; len_s];
    for s in spans.iter() {
        for sec in s.start_sample as usize / rate..s.end_sample as usize / rate {
            taken[sec] = true;
        }
    }
    let mut sec = 0;
    while sec < len_s {
        if taken[sec] {
            sec += 1;
            continue;
        }
        let start = sec;
        while sec < len_s && !taken[sec] {
            sec += 1;
        }
        let (a, b) = (start * rate, sec * rate);
        add_lamf(rng, signal, a, b, rate, amp_scale);
        spans.push(RhythmSpan::new(a as u32, b as u32, TAG_LAMF));
    }
}

fn add_lamf(
    rng: &mut ChaCha8Rng,
    signal: &mut [f32],
    start: usize,
    end: usize,
    rate: usize,
    amp_scale: f64,
) {
    // Two mid-range components make the "mixed frequency" texture.
    for _ in 0..2 {
        let freq = rng.gen_range(4.0..7.0);
        let amp = rng.gen_range(5.0..10.0) * amp_scale;
        add_sine(rng, &mut signal[start..end], freq, amp, rate);
    }
}

fn add_spindles(
    rng: &mut ChaCha8Rng,
    signal: &mut [f32],
    spans: &mut Vec<RhythmSpan>,
    rate: usize,
    amp_scale: f64,
) {
    let n = rng.gen_range(2..=4usize);
    let lengths: Vec<usize> = (0..n)
        .map(|_| (rng.gen_range(0.5..1.5) * rate as f64) as usize)
        .collect();
    let starts = place_runs(rng, signal.len(), &lengths, rate / 2);
    for (&start, &len) in starts.iter().zip(&lengths) {
        let freq = rng.gen_range(12.0..14.0);
        let amp = rng.gen_range(30.0..60.0) * amp_scale;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, v) in signal[start..start + len].iter_mut().enumerate() {
            let u = i as f64 / len as f64;
            let hann = 0.5 * (1.0 - (std::f64::consts::TAU * u).cos());
            let t = i as f64 / rate as f64;
            *v += (amp * hann * (std::f64::consts::TAU * freq * t + phase).sin()) as f32;
        }
        spans.push(RhythmSpan::new(start as u32, (start + len) as u32, TAG_SPINDLE));
    }
}

/// Adds a sinusoid across `window` with a 50 ms cosine ramp at both ends.
fn add_sine(rng: &mut ChaCha8Rng, window: &mut [f32], freq: f64, amp: f64, rate: usize) {
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let ramp = (rate / 20).max(1).min(window.len() / 2);
    let n = window.len();
    for (i, v) in window.iter_mut().enumerate() {
        let t = i as f64 / rate as f64;
        let mut env = 1.0;
        if i < ramp {
            env = 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / ramp as f64).cos());
        } else if i >= n - ramp {
            let j = n - 1 - i;
            env = 0.5 * (1.0 - (std::f64::consts::PI * j as f64 / ramp as f64).cos());
        }
        *v += (amp * env * (std::f64::consts::TAU * freq * t + phase).sin()) as f32;
    }
}

/// Splits `total` into `parts` integers, each at least `min_part`.
fn split_total(rng: &mut ChaCha8Rng, total: usize, parts: usize, min_part: usize) -> Vec<usize> {
    debug_assert!(parts * min_part <= total);
    let mut lengths = vec![min_part; parts];
    let extra = total - parts * min_part;
    // Distribute the remainder with uniform cut points.
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.gen_range(0..=extra)).collect();
    cuts.sort_unstable();
    cuts.push(extra);
    let mut prev = 0;
    for (len, cut) in lengths.iter_mut().zip(cuts) {
        *len += cut - prev;
        prev = cut;
    }
    lengths
}

/// Places runs of the given `lengths` inside `0..slots` with at least
/// `min_gap` free slots between consecutive runs. Returns start offsets in
/// order.
fn place_runs(
    rng: &mut ChaCha8Rng,
    slots: usize,
    lengths: &[usize],
    min_gap: usize,
) -> Vec<usize> {
    let used: usize = lengths.iter().sum::<usize>() + min_gap * (lengths.len() - 1);
    debug_assert!(used <= slots);
    let slack = slots - used;
    let mut cuts: Vec<usize> = (0..lengths.len()).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut starts = Vec::with_capacity(lengths.len());
    let mut pos = 0;
    let mut prev_cut = 0;
    for (i, &len) in lengths.iter().enumerate() {
        pos += cuts[i] - prev_cut;
        prev_cut = cuts[i];
        starts.push(pos);
        pos += len + min_gap;
    }
    starts
}

/// Pink noise via a three-pole filter over uniform white noise, rescaled to
/// RMS `sigma`.
fn pink_noise(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f32> {
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let w: f64 = rng.gen_range(-1.0..1.0);
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        let p = b0 + b1 + b2 + w * 0.1848;
        sum_sq += p * p;
        out.push(p);
    }
    let rms = (sum_sq / n.max(1) as f64).sqrt();
    let scale = if rms > 0.0 { sigma / rms } else { 0.0 };
    out.into_iter().map(|p| (p * scale) as f32).collect()
}
