//! Interpretability decision heads and heatmap export.
//!
//! Three routes explain a staging decision in terms of the encoder's
//! per-chunk features `f_set = {f_1..f_N}`:
//!
//! * **voting** — classify every chunk separately and average the logits;
//! * **feature forward** — decompose a linear head's logit into
//!   per-feature and per-chunk contributions algebraically;
//! * **gradient** — reverse-mode sensitivity of the predicted logit,
//!   scored as `Att_x[i] = Avg_L(f_i ⊙ ∂c[pred]/∂f_i)`, available both for
//!   the linear head (`feature_backward_attribution`) and for the full
//!   sequence network (`sequence_attribution`).
//!
//! For a linear head `c = W·mean_i(f_i) + b` the forward and gradient
//! routes measure the same quantity at different scale: the gradient
//! reaching `f_i` is `W[pred]/N`, so `Att_x[i] = s_i / L` where
//! `s_i = (1/N)·⟨f_i, W[pred]⟩` is the forward score. The documented
//! rescale between the two routes is therefore exactly the feature
//! dimension `L`.
//!
//! Gradient scores default to the positive sensitivity (high score = the
//! chunk pushed the decision toward the predicted class); `paper_sign`
//! flips every score for the negated convention.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ChunkSet, Recording, SleepStage, N_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{recording_features, with_eval_pool};
use crate::model::{BindMode, Model};
use crate::nn::init::uniform_fan_in;
use crate::nn::{read_snwt, write_snwt, Graph, Tensor, VarId};
use crate::train::{AdamW, OptimHyper};

/// Which decision head produced an attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrMethod {
    Voting,
    FeatureForward,
    FeatureBackward,
    Sequence,
}

impl AttrMethod {
    pub const ALL: [AttrMethod; 4] = [
        AttrMethod::Voting,
        AttrMethod::FeatureForward,
        AttrMethod::FeatureBackward,
        AttrMethod::Sequence,
    ];

    /// Command-line token, also used in output file names.
    pub fn as_str(self) -> &'static str {
        match self {
            AttrMethod::Voting => "voting",
            AttrMethod::FeatureForward => "forward",
            AttrMethod::FeatureBackward => "backward",
            AttrMethod::Sequence => "sequence",
        }
    }

    pub fn parse(s: &str) -> Result<AttrMethod> {
        AttrMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown attribution method `{s}`")))
    }
}

impl std::fmt::Display for AttrMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-chunk contribution scores for one staged epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVector {
    pub method: AttrMethod,
    pub predicted: SleepStage,
    pub epoch_index: usize,
    /// One score per chunk, in chunk order.
    pub scores: Vec<f64>,
}

/// Per-feature contribution values, row-major `rows × cols` (a single row
/// for the global frame feature).
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl DecisionVector {
    pub fn single_row(values: Vec<f64>) -> DecisionVector {
        let cols = values.len();
        DecisionVector { values, rows: 1, cols }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// A linear probe `logits = W·f + b` over the encoder's feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    weight: Tensor<f64>,
    bias: Tensor<f64>,
}

impl LinearHead {
    pub fn new(weight: Tensor<f64>, bias: Tensor<f64>) -> Result<LinearHead> {
        if weight.rank() != 2 || bias.rank() != 1 || weight.dim(0) != bias.dim(0) {
            return Err(Error::Shape(format!(
                "head wants weight [classes, features] and matching bias, got {:?} / {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(LinearHead { weight, bias })
    }

    pub fn n_classes(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.dim(1)
    }

    /// Row `c` of the weight matrix.
    pub fn class_weights(&self, c: usize) -> &[f64] {
        let l = self.feature_dim();
        &self.weight.data()[c * l..(c + 1) * l]
    }

    pub fn bias(&self) -> &[f64] {
        self.bias.data()
    }

    pub fn logits(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "feature vector has {} dims, head expects {}",
                f.len(),
                self.feature_dim()
            )));
        }
        Ok((0..self.n_classes())
            .map(|c| {
                let w = self.class_weights(c);
                self.bias.data()[c] + dot(w, f)
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let as_f32 = |t: &Tensor<f64>| Tensor::new(t.shape().to_vec(), t.to_f32_vec());
        let entries = vec![
            ("head.weight".to_string(), as_f32(&self.weight)),
            ("head.bias".to_string(), as_f32(&self.bias)),
        ];
        write_snwt(path, &entries)
    }

    pub fn load(path: &Path) -> Result<LinearHead> {
        let entries = read_snwt(path)?;
        let mut weight = None;
        let mut bias = None;
        for (name, t) in entries {
            match name.as_str() {
                "head.weight" => weight = Some(t.to_f64()),
                "head.bias" => bias = Some(t.to_f64()),
                other => {
                    return Err(Error::Validation(format!(
                        "unexpected tensor `{other}` in head file"
                    )))
                }
            }
        }
        match (weight, bias) {
            (Some(w), Some(b)) => LinearHead::new(w, b),
            _ => Err(Error::Validation("head file is missing weight or bias".into())),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Converts cached encoder features into plain f64 rows.
pub fn feature_rows(feats: &[Tensor<f32>]) -> Vec<Vec<f64>> {
    feats
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect()
}

fn check_rows(f_set: &[Vec<f64>], dim: usize) -> Result<()> {
    if f_set.is_empty() {
        return Err(Error::Usage("attribution needs at least one chunk feature".into()));
    }
    for row in f_set {
        if row.len() != dim {
            return Err(Error::Shape(format!(
                "chunk feature has {} dims, head expects {}",
                row.len(),
                dim
            )));
        }
    }
    Ok(())
}

fn mean_rows_f64(f_set: &[Vec<f64>]) -> Vec<f64> {
    let n = f_set.len() as f64;
    let mut out = vec![0.0; f_set[0].len()];
    for row in f_set {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    out
}

/// Per-chunk logits, their mean, and the resulting stage.
#[derive(Debug, Clone, PartialEq)]
pub struct VotingOutcome {
    pub chunk_logits: Vec<Vec<f64>>,
    pub frame_logits: Vec<f64>,
    pub predicted: SleepStage,
}

/// Classifies every chunk feature separately and averages the logits;
/// ties break toward the lowest class index.
pub fn voting_predict(f_set: &[Vec<f64>], head: &LinearHead) -> Result<VotingOutcome> {
    check_rows(f_set, head.feature_dim())?;
    let chunk_logits: Vec<Vec<f64>> =
        f_set.iter().map(|f| head.logits(f)).collect::<Result<_>>()?;
    let n = chunk_logits.len() as f64;
    let mut frame_logits = vec![0.0; head.n_classes()];
    for row in &chunk_logits {
        for (o, &v) in frame_logits.iter_mut().zip(row) {
            *o += v;
        }
    }
    for o in &mut frame_logits {
        *o /= n;
    }
    let predicted = SleepStage::from_index(argmax64(&frame_logits))
        .ok_or_else(|| Error::Shape("head has more classes than stages".into()))?;
    Ok(VotingOutcome { chunk_logits, frame_logits, predicted })
}

/// The voting head's scores: one mean-logit contribution per chunk, taken
/// at the predicted class.
pub fn voting_attribution(
    f_set: &[Vec<f64>],
    head: &LinearHead,
    epoch_index: usize,
) -> Result<AttributionVector> {
    let out = voting_predict(f_set, head)?;
    let n = f_set.len() as f64;
    let scores = out
        .chunk_logits
        .iter()
        .map(|row| row[out.predicted.index()] / n)
        .collect();
    Ok(AttributionVector {
        method: AttrMethod::Voting,
        predicted: out.predicted,
        epoch_index,
        scores,
    })
}

/// Algebraic decomposition of a linear head's predicted logit: per-feature
/// contributions `f_global ⊙ W[pred]` (bias dropped) and per-chunk scores
/// `s_i = (1/N)·⟨f_i, W[pred]⟩`, which sum to `logit − bias`.
pub fn feature_forward_attribution(
    f_set: &[Vec<f64>],
    head: &LinearHead,
    pred: SleepStage,
    epoch_index: usize,
) -> Result<(DecisionVector, AttributionVector)> {
    check_rows(f_set, head.feature_dim())?;
    let w = head.class_weights(pred.index());
    let f_global = mean_rows_f64(f_set);
    let per_feature: Vec<f64> = f_global.iter().zip(w).map(|(&f, &wc)| f * wc).collect();
    let n = f_set.len() as f64;
    let scores = f_set.iter().map(|f| dot(f, w) / n).collect();
    Ok((
        DecisionVector::single_row(per_feature),
        AttributionVector {
            method: AttrMethod::FeatureForward,
            predicted: pred,
            epoch_index,
            scores,
        },
    ))
}

/// Reverse-mode attribution of a linear head: builds the mean-then-classify
/// pipeline on a tape, differentiates the predicted logit back to every
/// chunk feature, and scores `Att_x[i] = Avg_L(f_i ⊙ G_i)`.
pub fn feature_backward_attribution(
    f_set: &[Vec<f64>],
    head: &LinearHead,
    pred: SleepStage,
    epoch_index: usize,
    paper_sign: bool,
) -> Result<AttributionVector> {
    check_rows(f_set, head.feature_dim())?;
    let mut g = Graph::new();
    let rows: Vec<VarId> = f_set
        .iter()
        .map(|f| {
            let mut t = Tensor::vector(f.clone());
            t.set_requires_grad(true);
            g.leaf(&t)
        })
        .collect();
    let stacked = g.stack_rows(&rows)?;
    let f_global = g.mean_rows(stacked)?;
    let w = g.leaf(&head.weight);
    let b = g.leaf(&head.bias);
    let logits = g.linear(f_global, w, b)?;
    let scalar = pick_class(&mut g, logits, pred.index())?;
    g.backward(scalar)?;

    let l = head.feature_dim() as f64;
    let sign = if paper_sign { -1.0 } else { 1.0 };
    let scores = rows
        .iter()
        .zip(f_set)
        .map(|(&id, f)| {
            let grad = g.grad(id).expect("tracked feature leaf has a gradient");
            sign * dot(f, grad) / l
        })
        .collect();
    Ok(AttributionVector {
        method: AttrMethod::FeatureBackward,
        predicted: pred,
        epoch_index,
        scores,
    })
}

/// Selects `logits[class]` as a scalar tape node via a one-hot mask.
fn pick_class<E: crate::nn::Element>(
    g: &mut Graph<E>,
    logits: VarId,
    class: usize,
) -> Result<VarId> {
    let len = g.value(logits).len();
    let mut onehot = vec![E::from_f64(0.0); len];
    onehot[class] = E::from_f64(1.0);
    let mask = g.leaf(&Tensor::vector(onehot));
    let picked = g.mul(logits, mask)?;
    Ok(g.sum_all(picked))
}

/// Gradient attribution through the full sequence network: encodes the
/// whole context window, differentiates the center frame's predicted logit
/// back to that frame's chunk features only, and scores
/// `Att_x[i] = Avg_L(f_i ⊙ G_i)`. Neighboring frames still shape the
/// gradient through the sequence stages.
pub fn sequence_attribution(
    model: &Model<f64>,
    window: &[ChunkSet],
    center: usize,
    epoch_index: usize,
    paper_sign: bool,
) -> Result<AttributionVector> {
    if !model.is_finite() {
        return Err(Error::Numeric("model parameters are not finite".into()));
    }
    if center >= window.len() {
        return Err(Error::Usage(format!(
            "center frame {center} outside a {}-frame window",
            window.len()
        )));
    }

    let mut g = Graph::new();
    let binds = model.bind(&mut g, BindMode::Eval);
    let mut feats: Vec<Vec<VarId>> = Vec::with_capacity(window.len());
    for (f, cs) in window.iter().enumerate() {
        let tensors = model.chunk_features(cs)?;
        let ids = tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.set_requires_grad(f == center);
                g.leaf(&t)
            })
            .collect();
        feats.push(ids);
    }
    let center_ids = feats[center].clone();
    let trace = model.forward_from_features(&mut g, &binds, &feats)?;
    let row = g.row(trace.logits, center)?;
    let logit_row = g.value(row).data().to_vec();
    let pred = argmax64(&logit_row);
    let scalar = pick_class(&mut g, row, pred)?;
    g.backward(scalar)?;

    let l = model.config().feature_dim as f64;
    let sign = if paper_sign { -1.0 } else { 1.0 };
    let scores = center_ids
        .iter()
        .map(|&id| {
            let f = g.value(id).data().to_vec();
            let grad = g.grad(id).expect("tracked center feature has a gradient");
            sign * f.iter().zip(grad).map(|(&x, &d)| x * d).sum::<f64>() / l
        })
        .collect();
    Ok(AttributionVector {
        method: AttrMethod::Sequence,
        predicted: SleepStage::from_index(pred).expect("class index in range"),
        epoch_index,
        scores,
    })
}

/// Min–max normalization to [0, 1]; a constant vector maps to all 0.5.
pub fn normalized_scores(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        scores.iter().map(|&s| (s - min) / (max - min)).collect()
    } else {
        vec![0.5; scores.len()]
    }
}

/// Writes one epoch's attribution as a CSV table and an SVG strip (EEG
/// trace over per-chunk bands, darker = higher normalized score).
pub fn export_heatmap(
    att: &AttributionVector,
    cs: &ChunkSet,
    csv_path: &Path,
    svg_path: &Path,
) -> Result<()> {
    if att.scores.len() != cs.n_chunks() {
        return Err(Error::Shape(format!(
            "{} scores for {} chunks",
            att.scores.len(),
            cs.n_chunks()
        )));
    }
    if att.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("attribution scores are not finite".into()));
    }
    let norm = normalized_scores(&att.scores);
    let chunk_len = cs.chunk_len();

    let mut csv = String::from("chunk_index,start_sample,end_sample,score,normalized_score\n");
    for (i, (&s, &ns)) in att.scores.iter().zip(&norm).enumerate() {
        csv.push_str(&format!("{},{},{},{},{}\n", i, i * chunk_len, (i + 1) * chunk_len, s, ns));
    }
    std::fs::write(csv_path, csv)?;
    std::fs::write(svg_path, heatmap_svg(att, cs, &norm))?;
    Ok(())
}

fn heatmap_svg(att: &AttributionVector, cs: &ChunkSet, norm: &[f64]) -> String {
    const W: f64 = 900.0;
    const H: f64 = 220.0;
    const PAD: f64 = 12.0;
    let n = cs.n_chunks();
    let samples = cs.as_epoch();

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         width=\"{W}\" height=\"{H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>\n"
    );
    let band_w = W / n as f64;
    for (i, &ns) in norm.iter().enumerate() {
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"0\" width=\"{:.2}\" height=\"{H}\" \
             fill=\"#13315c\" fill-opacity=\"{:.4}\"/>\n",
            i as f64 * band_w,
            band_w,
            0.06 + 0.74 * ns
        ));
    }
    let absmax = samples.iter().fold(0.0f32, |m, &v| m.max(v.abs())).max(1e-6);
    let mut points = String::new();
    for (i, &v) in samples.iter().enumerate() {
        let x = i as f64 / (samples.len().max(2) - 1) as f64 * W;
        let y = H / 2.0 - (v / absmax) as f64 * (H / 2.0 - PAD);
        points.push_str(&format!("{x:.2},{y:.2} "));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1a1a1a\" stroke-width=\"0.8\"/>\n",
        points.trim_end()
    ));
    svg.push_str(&format!(
        "<text x=\"6\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"12\" \
         fill=\"#333333\">epoch {} · {} · predicted {}</text>\n</svg>\n",
        H - 6.0,
        att.epoch_index,
        att.method,
        att.predicted
    ));
    svg
}

/// Knobs for fitting a linear probe with full-batch AdamW.
#[derive(Debug, Clone)]
pub struct HeadTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> HeadTrainConfig {
        HeadTrainConfig { steps: 400, lr: 0.02, weight_decay: 1e-4, seed: 0 }
    }
}

/// Collects one `(f_global, stage)` pair per scored epoch: the mean of the
/// epoch's cached chunk features against its label.
pub fn head_examples(
    model: &Model<f32>,
    recs: &[Recording],
    standardize: bool,
) -> Result<(Vec<Vec<f64>>, Vec<SleepStage>)> {
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for rec in recs {
        let epochs = recording_features(model, rec, standardize)?;
        for (e, chunk_feats) in epochs.iter().enumerate() {
            if let Some(stage) = rec.labels[e].stage() {
                feats.push(mean_rows_f64(&feature_rows(chunk_feats)));
                labels.push(stage);
            }
        }
    }
    Ok((feats, labels))
}

/// Fits a softmax probe on `(feature, stage)` pairs by full-batch AdamW
/// over the cross-entropy loss. Deterministic for a fixed config.
pub fn train_linear_head(
    feats: &[Vec<f64>],
    labels: &[SleepStage],
    cfg: &HeadTrainConfig,
) -> Result<LinearHead> {
    if feats.is_empty() || feats.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} feature rows against {} labels",
            feats.len(),
            labels.len()
        )));
    }
    let l = feats[0].len();
    check_rows(feats, l)?;
    if cfg.steps == 0 || !cfg.lr.is_finite() || cfg.lr <= 0.0 {
        return Err(Error::Config("head training needs steps > 0 and a positive rate".into()));
    }

    let rows = feats.len();
    let x = Tensor::new(vec![rows, l], feats.iter().flatten().copied().collect());
    let mut weight = uniform_fan_in::<f64>(&mut ChaCha8Rng::seed_from_u64(cfg.seed), &[N_CLASSES, l], l);
    let mut bias = Tensor::<f64>::zeros(vec![N_CLASSES]);
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);

    let hyper = OptimHyper { weight_decay: cfg.weight_decay, ..OptimHyper::default() };
    hyper.validate()?;
    let mut opt = AdamW::<f64>::new(hyper, &[weight.len(), bias.len()]);

    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let wid = g.leaf(&weight);
        let bid = g.leaf(&bias);
        let xid = g.leaf(&x);
        let logits = g.linear(xid, wid, bid)?;
        let losses = (0..rows)
            .map(|i| {
                let r = g.row(logits, i)?;
                g.cross_entropy(r, labels[i].index())
            })
            .collect::<Result<Vec<VarId>>>()?;
        let loss = g.mean_scalars(&losses)?;
        g.backward(loss)?;
        let gw = g.grad(wid).expect("weight gradient").to_vec();
        let gb = g.grad(bid).expect("bias gradient").to_vec();
        opt.step(cfg.lr, &mut [weight.data_mut(), bias.data_mut()], &[&gw, &gb])?;
    }
    LinearHead::new(weight, bias)
}

/// Accuracy of a voting head over whole recordings, for head-vs-model
/// comparisons. Epochs are staged independently, fanning out per epoch.
pub fn head_accuracy(
    model: &Model<f32>,
    head: &LinearHead,
    recs: &[Recording],
    standardize: bool,
) -> Result<f64> {
    let mut correct = 0usize;
    let mut scored = 0usize;
    for rec in recs {
        let epochs = recording_features(model, rec, standardize)?;
        let preds: Vec<Option<SleepStage>> = with_eval_pool(|| {
            use rayon::prelude::*;
            epochs
                .par_iter()
                .map(|chunk_feats| {
                    voting_predict(&feature_rows(chunk_feats), head).map(|o| Some(o.predicted))
                })
                .collect::<Result<_>>()
        })?;
        for (pred, label) in preds.iter().zip(&rec.labels) {
            if let (Some(p), Some(t)) = (pred, label.stage()) {
                scored += 1;
                if *p == t {
                    correct += 1;
                }
            }
        }
    }
    if scored == 0 {
        return Err(Error::Usage("no scored epochs to grade the head on".into()));
    }
    Ok(correct as f64 / scored as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> LinearHead {
        let rows = weight.len();
        let cols = weight[0].len();
        LinearHead::new(
            Tensor::new(vec![rows, cols], weight.into_iter().flatten().collect()),
            Tensor::vector(bias),
        )
        .unwrap()
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, LinearHead) {
        let n = rng.gen_range(1..8);
        let l = rng.gen_range(1..12);
        let c = rng.gen_range(2..6);
        let f_set: Vec<Vec<f64>> =
            (0..n).map(|_| (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let w: Vec<Vec<f64>> =
            (0..c).map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        (f_set, head(w, b))
    }

    #[test]
    fn method_tokens_round_trip() {
        for m in AttrMethod::ALL {
            assert_eq!(AttrMethod::parse(m.as_str()).unwrap(), m);
        }
        assert!(AttrMethod::parse("gradcam").is_err());
    }

    #[test]
    fn identical_chunks_vote_like_a_single_chunk() {
        let h = head(vec![vec![1.0, -1.0], vec![0.5, 2.0]], vec![0.1, -0.2]);
        let f = vec![0.7, 0.3];
        let single = voting_predict(&[f.clone()], &h).unwrap();
        let triple = voting_predict(&[f.clone(), f.clone(), f], &h).unwrap();
        for (a, b) in single.frame_logits.iter().zip(&triple.frame_logits) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(single.predicted, triple.predicted);
    }

    #[test]
    fn tied_mean_logits_pick_the_lowest_stage() {
        // Identity head over 5 dims: chunk logits are the features
        // themselves, so the mean is [0.5, 0.5, 0, 0, 0].
        let w: Vec<Vec<f64>> =
            (0..5).map(|i| (0..5).map(|j| f64::from(i == j)).collect()).collect();
        let h = head(w, vec![0.0; 5]);
        let out = voting_predict(
            &[vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0]],
            &h,
        )
        .unwrap();
        assert_eq!(out.frame_logits, vec![0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(out.predicted, SleepStage::Wake);
    }

    #[test]
    fn frame_logits_are_the_mean_of_chunk_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let (f_set, h) = random_case(&mut rng);
            let out = voting_predict(&f_set, &h).unwrap();
            for c in 0..h.n_classes() {
                let mean: f64 = out.chunk_logits.iter().map(|r| r[c]).sum::<f64>()
                    / f_set.len() as f64;
                assert!((out.frame_logits[c] - mean).abs() < 1e-6);
            }
            let brute = out
                .frame_logits
                .iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
                .unwrap()
                .0;
            assert_eq!(out.predicted.index(), brute);
        }
    }

    #[test]
    fn forward_decomposition_by_hand() {
        // f_global = [1, 2], W[pred] = [3, -1], b = 0.5.
        let h = head(vec![vec![3.0, -1.0], vec![0.0, 0.0]], vec![0.5, 0.0]);
        let f_set = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let (dv, av) =
            feature_forward_attribution(&f_set, &h, SleepStage::Wake, 0).unwrap();
        assert_eq!(dv.values, vec![3.0, -2.0]);
        assert!((dv.sum() - 1.0).abs() < 1e-12);
        let logit = h.logits(&[1.0, 2.0]).unwrap()[0];
        assert!((dv.sum() - (logit - 0.5)).abs() < 1e-12);
        // s_1 = (0·3 + 1·(−1))/2, s_2 = (2·3 + 3·(−1))/2.
        assert_eq!(av.scores, vec![-0.5, 1.5]);
    }

    #[test]
    fn equal_rows_attribute_equally_and_zero_features_attribute_zero() {
        let h = head(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![0.0, 0.0]);
        let (_, av) = feature_forward_attribution(
            &vec![vec![0.4, -0.2]; 4],
            &h,
            SleepStage::N1,
            0,
        )
        .unwrap();
        assert!(av.scores.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));

        let (dv, av) =
            feature_forward_attribution(&vec![vec![0.0, 0.0]; 3], &h, SleepStage::Wake, 0)
                .unwrap();
        assert!(dv.values.iter().all(|&v| v == 0.0));
        assert!(av.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn conservation_holds_on_random_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let (f_set, h) = random_case(&mut rng);
            let out = voting_predict(&f_set, &h).unwrap();
            let pred = out.predicted;
            let (dv, av) = feature_forward_attribution(&f_set, &h, pred, 0).unwrap();
            let logit = out.frame_logits[pred.index()];
            let bias = h.bias()[pred.index()];
            assert!((dv.sum() - (logit - bias)).abs() < 1e-6);
            let s_sum: f64 = av.scores.iter().sum();
            assert!((s_sum - dv.sum()).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_route_matches_forward_after_the_feature_dim_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let (f_set, h) = random_case(&mut rng);
            let pred = voting_predict(&f_set, &h).unwrap().predicted;
            let (_, fwd) = feature_forward_attribution(&f_set, &h, pred, 0).unwrap();
            let bwd = feature_backward_attribution(&f_set, &h, pred, 0, false).unwrap();
            let l = h.feature_dim() as f64;
            for (s, a) in fwd.scores.iter().zip(&bwd.scores) {
                assert!((s - l * a).abs() < 1e-6, "{s} vs {}", l * a);
            }
        }
    }

    #[test]
    fn paper_sign_negates_gradient_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (f_set, h) = random_case(&mut rng);
        let pred = voting_predict(&f_set, &h).unwrap().predicted;
        let pos = feature_backward_attribution(&f_set, &h, pred, 0, false).unwrap();
        let neg = feature_backward_attribution(&f_set, &h, pred, 0, true).unwrap();
        for (a, b) in pos.scores.iter().zip(&neg.scores) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn constant_head_attributes_nothing() {
        let h = head(vec![vec![0.0; 3]; 2], vec![0.3, 0.3]);
        let f_set = vec![vec![1.0, -2.0, 0.5], vec![0.1, 0.2, 0.3]];
        let av =
            feature_backward_attribution(&f_set, &h, SleepStage::Wake, 0, false).unwrap();
        assert!(av.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn duplicated_rows_duplicate_their_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut f_set, h) = random_case(&mut rng);
        f_set.push(f_set[0].clone());
        let pred = voting_predict(&f_set, &h).unwrap().predicted;
        let (_, fwd) = feature_forward_attribution(&f_set, &h, pred, 0).unwrap();
        let bwd = feature_backward_attribution(&f_set, &h, pred, 0, false).unwrap();
        assert!((fwd.scores[0] - fwd.scores[f_set.len() - 1]).abs() < 1e-12);
        assert!((bwd.scores[0] - bwd.scores[f_set.len() - 1]).abs() < 1e-12);
    }

    #[test]
    fn constant_logit_shifts_change_no_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let (f_set, h) = random_case(&mut rng);
            let shifted = head(
                (0..h.n_classes()).map(|c| h.class_weights(c).to_vec()).collect(),
                h.bias().iter().map(|b| b + 7.25).collect(),
            );
            let a = voting_predict(&f_set, &h).unwrap();
            let b = voting_predict(&f_set, &shifted).unwrap();
            assert_eq!(a.predicted, b.predicted);
        }
    }

    #[test]
    fn scaling_features_scales_scores_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (f_set, h) = random_case(&mut rng);
            let alpha = rng.gen_range(0.25..4.0);
            let scaled: Vec<Vec<f64>> = f_set
                .iter()
                .map(|r| r.iter().map(|&v| v * alpha).collect())
                .collect();
            let pred = voting_predict(&f_set, &h).unwrap().predicted;
            let (_, base) = feature_forward_attribution(&f_set, &h, pred, 0).unwrap();
            let (_, big) = feature_forward_attribution(&scaled, &h, pred, 0).unwrap();
            for (a, b) in base.scores.iter().zip(&big.scores) {
                assert!((alpha * a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn head_files_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, h) = random_case(&mut rng);
        let dir = std::env::temp_dir().join("somnonet-head-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("probe.snwt");
        h.save(&path).unwrap();
        let back = LinearHead::load(&path).unwrap();
        assert_eq!(back.n_classes(), h.n_classes());
        assert_eq!(back.feature_dim(), h.feature_dim());
        // Storage is 32-bit.
        for (a, b) in h.weight.data().iter().zip(back.weight.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn probe_training_separates_separable_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Five L-dim clusters around distinct one-hot-ish centers.
        let l = 8;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..40 {
            for (c, stage) in SleepStage::ALL.into_iter().enumerate() {
                let mut f: Vec<f64> = (0..l).map(|_| rng.gen_range(-0.1..0.1)).collect();
                f[c] += 1.0;
                feats.push(f);
                labels.push(stage);
            }
        }
        let cfg = HeadTrainConfig { steps: 150, ..HeadTrainConfig::default() };
        let h = train_linear_head(&feats, &labels, &cfg).unwrap();
        let correct = feats
            .iter()
            .zip(&labels)
            .filter(|(f, &t)| voting_predict(&[(*f).clone()], &h).unwrap().predicted == t)
            .count();
        assert!(correct as f64 / feats.len() as f64 > 0.95);

        // Same config twice → bitwise-identical probes.
        let again = train_linear_head(&feats, &labels, &cfg).unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn probe_training_rejects_bad_input() {
        assert!(train_linear_head(&[], &[], &HeadTrainConfig::default()).is_err());
        let feats = vec![vec![0.0, 1.0]];
        assert!(train_linear_head(&feats, &[], &HeadTrainConfig::default()).is_err());
        let cfg = HeadTrainConfig { steps: 0, ..HeadTrainConfig::default() };
        assert!(train_linear_head(&feats, &[SleepStage::Wake], &cfg).is_err());
    }

    fn tiny_model() -> Model<f64> {
        let cfg = crate::model::ModelConfig {
            n_chunks: 2,
            feature_dim: 8,
            encoder_channels: [2, 3, 4],
            encoder_fuse: [2, 3, 8],
            dilations: vec![1, 2],
            local_hidden: 3,
            global_hidden: 3,
            global_layers: 2,
            context_frames: 3,
            n_classes: 5,
            nano_hidden: 2,
            classifier_depth: 1,
        };
        Model::<f64>::somnonet(&cfg, 21).unwrap()
    }

    fn tiny_window(frames: usize, seed: u64) -> Vec<ChunkSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames)
            .map(|_| {
                let samples: Vec<f32> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
                ChunkSet::from_samples(samples, 2).unwrap()
            })
            .collect()
    }

    #[test]
    fn sequence_scores_are_deterministic_and_chunk_shaped() {
        let model = tiny_model();
        let window = tiny_window(3, 30);
        let a = sequence_attribution(&model, &window, 1, 7, false).unwrap();
        let b = sequence_attribution(&model, &window, 1, 7, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scores.len(), 2);
        assert_eq!(a.epoch_index, 7);
        assert!(a.scores.iter().all(|s| s.is_finite()));

        let neg = sequence_attribution(&model, &window, 1, 7, true).unwrap();
        for (p, n) in a.scores.iter().zip(&neg.scores) {
            assert_eq!(*p, -*n);
        }
    }

    #[test]
    fn single_frame_windows_attribute_their_only_frame() {
        let model = tiny_model();
        let window = tiny_window(1, 31);
        let att = sequence_attribution(&model, &window, 0, 0, false).unwrap();
        assert_eq!(att.scores.len(), 2);
    }

    #[test]
    fn neighbors_reach_the_center_only_through_the_sequence_stages() {
        let model = tiny_model();
        let mut window = tiny_window(3, 32);
        let base = sequence_attribution(&model, &window, 1, 0, false).unwrap();

        // With live sequence weights, swapping a neighbor changes the
        // center attribution...
        window[2] = tiny_window(1, 33).pop().unwrap();
        let swapped = sequence_attribution(&model, &window, 1, 0, false).unwrap();
        assert_ne!(base.scores, swapped.scores);

        // ...and with the cross-frame stage silenced it cannot.
        let mut cut = model.clone();
        let gi = cut.group_index("global_seq").unwrap();
        for p in &mut cut.groups_mut()[gi].params {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let a = sequence_attribution(&cut, &window, 1, 0, false).unwrap();
        window[2] = tiny_window(1, 34).pop().unwrap();
        let b = sequence_attribution(&cut, &window, 1, 0, false).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn sequence_attribution_rejects_bad_calls() {
        let mut model = tiny_model();
        let window = tiny_window(3, 35);
        assert!(matches!(
            sequence_attribution(&model, &window, 3, 0, false),
            Err(Error::Usage(_))
        ));

        let gi = model.group_index("classifier").unwrap();
        let shape = model.groups_mut()[gi].params[0].value.shape().to_vec();
        model.groups_mut()[gi].params[0].value = Tensor::full(shape, f64::NAN);
        assert!(matches!(
            sequence_attribution(&model, &window, 1, 0, false),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn normalization_handles_constants_and_ranges() {
        assert_eq!(normalized_scores(&[0.0, 1.0, 2.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalized_scores(&[3.7, 3.7, 3.7]), vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn heatmap_files_have_the_declared_shape() {
        let cs = ChunkSet::from_samples((0..30).map(|i| (i as f32).sin()).collect(), 3).unwrap();
        let att = AttributionVector {
            method: AttrMethod::FeatureBackward,
            predicted: SleepStage::N2,
            epoch_index: 4,
            scores: vec![0.0, 1.0, 2.0],
        };
        let dir = std::env::temp_dir().join("somnonet-heatmap-shape");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("a.csv");
        let svg_path = dir.join("a.svg");
        export_heatmap(&att, &cs, &csv_path, &svg_path).unwrap();

        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "chunk_index,start_sample,end_sample,score,normalized_score");
        assert_eq!(lines[1], "0,0,10,0,0");
        assert_eq!(lines[3], "2,20,30,2,1");
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 1 + 3);
        assert!(svg.contains("polyline"));

        let bad = AttributionVector { scores: vec![f64::NAN, 0.0, 1.0], ..att.clone() };
        assert!(export_heatmap(&bad, &cs, &csv_path, &svg_path).is_err());
        let short = AttributionVector { scores: vec![1.0], ..att };
        assert!(export_heatmap(&short, &cs, &csv_path, &svg_path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
