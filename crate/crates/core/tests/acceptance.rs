//! Release gate: one test per shipped guarantee, each printing a single
//! `criterion NN: PASS/FAIL — ...` line before asserting. Criteria 6–9
//! share one trained desk-scale run, built once and reused; with the
//! harness's single-threaded ordering the training cost is paid by the
//! first of them to execute.

use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somnonet_core::attr::{
    export_heatmap, feature_backward_attribution, feature_forward_attribution, feature_rows,
    head_accuracy, head_examples, sequence_attribution, train_linear_head, voting_predict,
    HeadTrainConfig, LinearHead,
};
use somnonet_core::data::synth::TAG_ALPHA;
use somnonet_core::data::{
    generate_synthetic, read_ssef, write_ssef, Label, Recording, SleepStage, SyntheticSpec,
    N_CLASSES,
};
use somnonet_core::eval::{evaluate_recordings, window_epochs};
use somnonet_core::metrics::{stage_metrics, ConfusionMatrix};
use somnonet_core::model::{config_sidecar_path, BindMode, Model, ModelConfig};
use somnonet_core::nn::{ConvSpec, Graph, PadMode, PoolKind, Tensor, VarId};
use somnonet_core::train::{train, train_nano, TrainSettings};
use tempfile::TempDir;

/// Prints the verdict line for criterion `n` and hands back `pass` so the
/// caller can assert on it after the line is out.
fn verdict(n: usize, pass: bool, detail: &str) -> bool {
    println!("criterion {n:02}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
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
    }
}

// ---------------------------------------------------------------------------
// Shared desk-scale run: 4 training subjects, 1 validation, 1 test, each 120
// epochs of the seeded synthetic task at 100 Hz.

struct Desk {
    train_recs: Vec<Recording>,
    val_recs: Vec<Recording>,
    test_recs: Vec<Recording>,
    model: Model<f32>,
    model64: Model<f64>,
    head: LinearHead,
    train_secs: f64,
    oa: f64,
    kappa: f64,
}

fn desk_settings() -> TrainSettings {
    TrainSettings {
        batch_size: 64,
        max_epochs: 110,
        patience: 50,
        window_stride: 9,
        all_frames_loss: true,
        base_lr: 3e-3,
        max_lr: 3e-3,
        ..Default::default()
    }
}

fn build_desk() -> Result<Desk, String> {
    let spec = SyntheticSpec {
        n_subjects: 6,
        epochs_per_subject: 120,
        rng_seed: 7,
        ..Default::default()
    };
    let mut recs = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let test_recs = vec![recs.pop().expect("six recordings")];
    let val_recs = vec![recs.pop().expect("six recordings")];
    let train_recs = recs;

    let cfg = ModelConfig::default();
    let mut model = Model::<f32>::somnonet(&cfg, 0).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    train(&mut model, &train_recs, &val_recs, &desk_settings()).map_err(|e| e.to_string())?;
    let train_secs = t0.elapsed().as_secs_f64();

    let cm = evaluate_recordings(&model, &test_recs, true).map_err(|e| e.to_string())?;
    let m = stage_metrics(&cm, false).map_err(|e| e.to_string())?;

    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("desk.snwt");
    model.save(&ckpt).map_err(|e| e.to_string())?;
    let model64 = Model::<f64>::load(&ckpt).map_err(|e| e.to_string())?;

    let (feats, labels) = head_examples(&model, &train_recs, true).map_err(|e| e.to_string())?;
    let head = train_linear_head(&feats, &labels, &HeadTrainConfig::default())
        .map_err(|e| e.to_string())?;

    Ok(Desk {
        train_recs,
        val_recs,
        test_recs,
        model,
        model64,
        head,
        train_secs,
        oa: m.overall_accuracy,
        kappa: m.kappa,
    })
}

fn desk() -> &'static Result<Desk, String> {
    static DESK: OnceLock<Result<Desk, String>> = OnceLock::new();
    DESK.get_or_init(build_desk)
}

// ---------------------------------------------------------------------------
// Criterion 1: full-scale clinical corpora cannot ship with this repository,
// so the gate substitutes property checks plus the synthetic desk task. This
// test pins the substitution down by proving the desk harness itself works.

#[test]
fn criterion_01_desk_substitution_for_clinical_scale() {
    let spec = SyntheticSpec { n_subjects: 1, epochs_per_subject: 20, rng_seed: 1, ..Default::default() };
    let harness = generate_synthetic(&spec).and_then(|recs| {
        recs[0].validate()?;
        let cfg = tiny_config();
        let parent = Model::<f32>::somnonet(&cfg, 0)?;
        Model::nano(&parent, &cfg, 1)?;
        Ok(recs[0].annotations.iter().any(|spans| !spans.is_empty()))
    });
    let pass = matches!(harness, Ok(true));
    assert!(verdict(
        1,
        pass,
        "clinical-scale corpora are not redistributable; criteria 2-11 substitute \
         property checks and a seeded synthetic desk task (generator and both \
         architectures verified operational)",
    ));
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient checks over every differentiable
// kernel, ≥100 randomized shapes, 64-bit, step 1e-5, relative error < 1e-4,
// under two minutes.

const FD_H: f64 = 1e-5;

fn fd_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Probes the output shape, reduces the output to a scalar through a fixed
/// random weighting, and returns the worst tape-vs-central-difference
/// relative error over every element of every input.
fn fd_case(
    rng: &mut ChaCha8Rng,
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<f64>, &[VarId]) -> VarId,
) -> f64 {
    let mut probe = Graph::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| probe.leaf_tracked(t, false)).collect();
    let y = build(&mut probe, &ids);
    let weights = Tensor::new(
        probe.value(y).shape().to_vec(),
        (0..probe.value(y).len())
            .map(|_| rng.gen_range(0.25..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect::<Vec<f64>>(),
    );

    let eval = |bumped: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<VarId> = bumped.iter().map(|t| g.leaf_tracked(t, false)).collect();
        let y = build(&mut g, &ids);
        let w = g.leaf(&weights);
        let p = g.mul(y, w).unwrap();
        let s = g.sum_all(p);
        g.value(s).item()
    };

    let mut g = Graph::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| g.leaf_tracked(t, true)).collect();
    let y = build(&mut g, &ids);
    let w = g.leaf(&weights);
    let p = g.mul(y, w).unwrap();
    let s = g.sum_all(p);
    g.backward(s).unwrap();

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let grad = g
            .grad(ids[i])
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_H);
            worst = worst.max(fd_rel_err(grad[j], numeric));
        }
    }
    worst
}

fn fd_uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>())
}

/// Per-channel values on a shuffled half-unit grid with small jitter, so
/// max-pool winners and batch variances cannot flip under a ±H bump.
fn fd_staggered(rng: &mut ChaCha8Rng, ch: usize, t: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(ch * t);
    for _ in 0..ch {
        let mut grid: Vec<f64> = (0..t).map(|k| k as f64 * 0.5).collect();
        grid.shuffle(rng);
        let center = 0.25 * (t as f64 - 1.0);
        data.extend(grid.iter().map(|&v| v - center + rng.gen_range(-0.05..0.05)));
    }
    Tensor::new(vec![ch, t], data)
}

/// Values bounded away from the clipped nonlinearity's corners at 0 and 6.
fn fd_corner_free(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let v = sign * rng.gen_range(0.3..2.8);
            if rng.gen_bool(0.25) {
                v + 6.0
            } else {
                v
            }
        })
        .collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data)
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let mut cases = 0usize;
    let mut worst = 0.0f64;
    let mut run = |rng: &mut ChaCha8Rng,
                   inputs: &[Tensor<f64>],
                   build: &dyn Fn(&mut Graph<f64>, &[VarId]) -> VarId,
                   cases: &mut usize,
                   worst: &mut f64| {
        *worst = worst.max(fd_case(rng, inputs, build));
        *cases += 1;
    };

    for case in 0..20 {
        let in_ch = rng.gen_range(1..=3);
        let out_ch = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=4);
        let dilation = rng.gen_range(1..=2);
        let t = rng.gen_range(((k - 1) * dilation + 1).max(6)..=14);
        let spec = ConvSpec {
            stride: rng.gen_range(1..=2),
            dilation,
            padding: if case % 2 == 0 { PadMode::Same } else { PadMode::Valid },
        };
        let inputs = [
            fd_uniform(&mut rng, &[in_ch, t], -0.9, 0.9),
            fd_uniform(&mut rng, &[out_ch, in_ch, k], -0.7, 0.7),
            fd_uniform(&mut rng, &[out_ch], -0.3, 0.3),
        ];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| g.conv1d(ids[0], ids[1], ids[2], spec).unwrap(),
            &mut cases,
            &mut worst,
        );
    }

    for _ in 0..8 {
        let shape = [rng.gen_range(1..=3), rng.gen_range(3..=8)];
        let inputs = [fd_corner_free(&mut rng, &shape)];
        run(&mut rng, &inputs, &|g, ids| g.relu6(ids[0]), &mut cases, &mut worst);
    }

    for case in 0..8 {
        let ch = rng.gen_range(1..=3);
        let t = rng.gen_range(4..=9);
        let inputs = [
            fd_staggered(&mut rng, ch, t),
            fd_uniform(&mut rng, &[ch], 0.5, 1.5),
            fd_uniform(&mut rng, &[ch], -0.5, 0.5),
        ];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| g.batchnorm_train(ids[0], ids[1], ids[2], 1e-3, Some(case)).unwrap(),
            &mut cases,
            &mut worst,
        );
    }

    for _ in 0..6 {
        let ch = rng.gen_range(1..=3);
        let t = rng.gen_range(3..=8);
        let mean: Vec<f64> = (0..ch).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..ch).map(|_| rng.gen_range(0.3..1.2)).collect();
        let inputs = [
            fd_uniform(&mut rng, &[ch, t], -0.9, 0.9),
            fd_uniform(&mut rng, &[ch], 0.5, 1.5),
            fd_uniform(&mut rng, &[ch], -0.5, 0.5),
        ];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| {
                g.batchnorm_eval(ids[0], ids[1], ids[2], 1e-3, &mean, &var).unwrap()
            },
            &mut cases,
            &mut worst,
        );
    }

    for case in 0..12 {
        let ch = rng.gen_range(1..=3);
        let window = rng.gen_range(2..=3);
        let t = rng.gen_range(window..=9);
        let stride = rng.gen_range(1..=2);
        let kind = match case % 3 {
            0 => PoolKind::Max,
            1 => PoolKind::Avg,
            _ => PoolKind::GlobalAvg,
        };
        let inputs = [fd_staggered(&mut rng, ch, t)];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| g.pool1d(ids[0], kind, window, stride).unwrap(),
            &mut cases,
            &mut worst,
        );
    }

    for _ in 0..10 {
        let n = rng.gen_range(1..=4);
        let in_dim = rng.gen_range(1..=5);
        let out_dim = rng.gen_range(1..=4);
        let inputs = [
            fd_uniform(&mut rng, &[n, in_dim], -0.9, 0.9),
            fd_uniform(&mut rng, &[out_dim, in_dim], -0.7, 0.7),
            fd_uniform(&mut rng, &[out_dim], -0.3, 0.3),
        ];
        run(
            &mut rng,
            &inputs,
            &|g, ids| g.linear(ids[0], ids[1], ids[2]).unwrap(),
            &mut cases,
            &mut worst,
        );
    }

    for case in 0..10 {
        let t = rng.gen_range(1..=4);
        let in_dim = rng.gen_range(1..=3);
        let h = rng.gen_range(1..=3);
        let reverse = case % 2 == 1;
        let inputs = [
            fd_uniform(&mut rng, &[t, in_dim], -0.9, 0.9),
            fd_uniform(&mut rng, &[3 * h, in_dim], -0.7, 0.7),
            fd_uniform(&mut rng, &[3 * h, h], -0.7, 0.7),
            fd_uniform(&mut rng, &[3 * h], -0.3, 0.3),
            fd_uniform(&mut rng, &[3 * h], -0.3, 0.3),
        ];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| g.gru(ids[0], ids[1], ids[2], ids[3], ids[4], reverse).unwrap(),
            &mut cases,
            &mut worst,
        );
    }

    for _ in 0..6 {
        let t = rng.gen_range(1..=3);
        let in_dim = rng.gen_range(1..=3);
        let h = rng.gen_range(1..=2);
        let mut inputs = vec![fd_uniform(&mut rng, &[t, in_dim], -0.9, 0.9)];
        for _ in 0..2 {
            inputs.push(fd_uniform(&mut rng, &[3 * h, in_dim], -0.7, 0.7));
            inputs.push(fd_uniform(&mut rng, &[3 * h, h], -0.7, 0.7));
            inputs.push(fd_uniform(&mut rng, &[3 * h], -0.3, 0.3));
            inputs.push(fd_uniform(&mut rng, &[3 * h], -0.3, 0.3));
        }
        run(
            &mut rng,
            &inputs,
            &|g, ids| {
                g.bigru(ids[0], (ids[1], ids[2], ids[3], ids[4]), (ids[5], ids[6], ids[7], ids[8]))
                    .unwrap()
            },
            &mut cases,
            &mut worst,
        );
    }

    for _ in 0..8 {
        let n = rng.gen_range(1..=3);
        let i = rng.gen_range(0..n);
        let target = rng.gen_range(0..N_CLASSES);
        let inputs = [fd_uniform(&mut rng, &[n, N_CLASSES], -2.0, 2.0)];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| {
                let row = g.row(ids[0], i).unwrap();
                g.cross_entropy(row, target).unwrap()
            },
            &mut cases,
            &mut worst,
        );
    }

    for case in 0..8 {
        let shape = [rng.gen_range(1..=3), rng.gen_range(2..=6)];
        let c = rng.gen_range(0.3..1.7);
        let inputs = [
            fd_uniform(&mut rng, &shape, -0.9, 0.9),
            fd_uniform(&mut rng, &shape, -0.9, 0.9),
        ];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| match case % 4 {
                0 => g.add(ids[0], ids[1]).unwrap(),
                1 => g.sub(ids[0], ids[1]).unwrap(),
                2 => g.mul(ids[0], ids[1]).unwrap(),
                _ => g.scale(ids[0], c),
            },
            &mut cases,
            &mut worst,
        );
    }

    for case in 0..6 {
        let d = rng.gen_range(2..=5);
        if case % 2 == 0 {
            let k = rng.gen_range(2..=4);
            let inputs: Vec<Tensor<f64>> =
                (0..k).map(|_| fd_uniform(&mut rng, &[1, d], -0.9, 0.9)).collect();
            run(
                &mut rng,
                &inputs,
                &|g, ids| {
                    let stacked = g.stack_rows(ids).unwrap();
                    g.mean_rows(stacked).unwrap()
                },
                &mut cases,
                &mut worst,
            );
        } else {
            let n = rng.gen_range(2..=5);
            let lo = rng.gen_range(0..n - 1);
            let hi = rng.gen_range(lo + 1..=n);
            let inputs = [fd_uniform(&mut rng, &[n, d], -0.9, 0.9)];
            run(
                &mut rng,
                &inputs,
                &move |g, ids| g.mean_rows_range(ids[0], lo, hi).unwrap(),
                &mut cases,
                &mut worst,
            );
        }
    }

    for case in 0..6 {
        if case % 2 == 0 {
            let n = rng.gen_range(1..=3);
            let inputs = [
                fd_uniform(&mut rng, &[n, rng.gen_range(1..=4)], -0.9, 0.9),
                fd_uniform(&mut rng, &[n, rng.gen_range(1..=4)], -0.9, 0.9),
            ];
            run(
                &mut rng,
                &inputs,
                &|g, ids| g.concat_cols(ids[0], ids[1]).unwrap(),
                &mut cases,
                &mut worst,
            );
        } else {
            let t = rng.gen_range(2..=5);
            let inputs: Vec<Tensor<f64>> = (0..3)
                .map(|_| fd_uniform(&mut rng, &[rng.gen_range(1..=2), t], -0.9, 0.9))
                .collect();
            run(
                &mut rng,
                &inputs,
                &|g, ids| g.concat_channels(ids).unwrap(),
                &mut cases,
                &mut worst,
            );
        }
    }

    for _ in 0..4 {
        let n = rng.gen_range(2..=4);
        let d = rng.gen_range(2..=4);
        let inputs = [fd_uniform(&mut rng, &[n, d], -0.9, 0.9)];
        run(
            &mut rng,
            &inputs,
            &move |g, ids| {
                let sums: Vec<VarId> = (0..n)
                    .map(|i| {
                        let r = g.row(ids[0], i).unwrap();
                        g.sum_all(r)
                    })
                    .collect();
                g.mean_scalars(&sums).unwrap()
            },
            &mut cases,
            &mut worst,
        );
    }

    // Whole-network input gradients on a reduced geometry, both variants.
    {
        let cfg = tiny_config();
        let mut parent = Model::<f64>::somnonet(&cfg, 17).unwrap();
        for grp in parent.groups_mut() {
            for p in &mut grp.params {
                if p.value.rank() == 1 && p.value.data().iter().all(|&v| v == 0.0) {
                    for v in p.value.data_mut() {
                        *v = rng.gen_range(0.2..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    }
                }
            }
        }
        let nano = Model::nano(&parent, &cfg, 23).unwrap();
        let len = 16usize;
        for model in [&parent, &nano] {
            let inputs: Vec<Tensor<f64>> = (0..cfg.context_frames * cfg.n_chunks)
                .map(|_| {
                    let t = fd_staggered(&mut rng, 1, len);
                    Tensor::new(vec![1, len], t.data().to_vec())
                })
                .collect();
            let n_chunks = cfg.n_chunks;
            let frames = cfg.context_frames;
            run(
                &mut rng,
                &inputs,
                &move |g, ids| {
                    let binds = model.bind(g, BindMode::Eval);
                    let window: Vec<Vec<VarId>> =
                        ids.chunks(n_chunks).map(|c| c.to_vec()).collect();
                    let trace = model.forward_window(g, &binds, &window, true).unwrap();
                    let center = g.row(trace.logits, frames / 2).unwrap();
                    g.cross_entropy(center, 2).unwrap()
                },
                &mut cases,
                &mut worst,
            );
        }
    }

    let secs = t0.elapsed().as_secs_f64();
    let pass = cases >= 100 && worst < 1e-4 && secs < 120.0;
    assert!(verdict(
        2,
        pass,
        &format!("{cases} randomized cases, worst relative error {worst:.2e}, {secs:.1}s"),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 3: the decision vector of the forward decomposition sums to
// logit − bias, and forward and reverse-mode chunk scores coincide once the
// reverse scores — which also average over the feature width L — are
// rescaled by ×L.

#[test]
fn criterion_03_attribution_identities() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_complete = 0.0f64;
    let mut worst_agree = 0.0f64;
    let instances = 1000usize;
    for _ in 0..instances {
        let l = rng.gen_range(3..=24);
        let n = rng.gen_range(1..=8);
        let f_set: Vec<Vec<f64>> =
            (0..n).map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let weight = Tensor::new(
            vec![N_CLASSES, l],
            (0..N_CLASSES * l).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
        );
        let bias = Tensor::vector((0..N_CLASSES).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let head = LinearHead::new(weight, bias).unwrap();
        let pred = SleepStage::from_index(rng.gen_range(0..N_CLASSES)).unwrap();

        let (dv, fwd) = feature_forward_attribution(&f_set, &head, pred, 0).unwrap();
        let mean: Vec<f64> = (0..l)
            .map(|j| f_set.iter().map(|f| f[j]).sum::<f64>() / n as f64)
            .collect();
        let logit = head.logits(&mean).unwrap()[pred.index()];
        let target = logit - head.bias()[pred.index()];
        worst_complete = worst_complete.max((dv.sum() - target).abs());
        worst_complete = worst_complete.max((fwd.scores.iter().sum::<f64>() - target).abs());

        let bwd = feature_backward_attribution(&f_set, &head, pred, 0, false).unwrap();
        for (f, b) in fwd.scores.iter().zip(&bwd.scores) {
            worst_agree = worst_agree.max((f - b * l as f64).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_complete < 1e-6 && worst_agree < 1e-6 && secs < 60.0;
    assert!(verdict(
        3,
        pass,
        &format!(
            "{instances} instances: completeness error {worst_complete:.2e}, \
             forward-vs-reverse (reverse rescaled by feature width L) {worst_agree:.2e}, {secs:.1}s",
        ),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 4: the voting head's frame logits equal the mean of per-chunk
// logits, and its argmax matches a brute-force recomputation.

#[test]
fn criterion_04_voting_head_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0.0f64;
    let mut argmax_mismatches = 0usize;
    let instances = 1000usize;
    for _ in 0..instances {
        let l = rng.gen_range(2..=16);
        let n = rng.gen_range(1..=12);
        let f_set: Vec<Vec<f64>> =
            (0..n).map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let weight = Tensor::new(
            vec![N_CLASSES, l],
            (0..N_CLASSES * l).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
        );
        let bias = Tensor::vector((0..N_CLASSES).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let head = LinearHead::new(weight, bias).unwrap();

        let out = voting_predict(&f_set, &head).unwrap();
        for c in 0..N_CLASSES {
            let mean_c =
                out.chunk_logits.iter().map(|row| row[c]).sum::<f64>() / n as f64;
            worst = worst.max((out.frame_logits[c] - mean_c).abs());

            let brute: f64 = f_set
                .iter()
                .map(|f| {
                    f.iter().zip(head.class_weights(c)).map(|(&x, &w)| x * w).sum::<f64>()
                        + head.bias()[c]
                })
                .sum::<f64>()
                / n as f64;
            worst = worst.max((out.frame_logits[c] - brute).abs());
        }
        let mut best = 0;
        for c in 1..N_CLASSES {
            if out.frame_logits[c] > out.frame_logits[best] {
                best = c;
            }
        }
        if out.predicted.index() != best {
            argmax_mismatches += 1;
        }
    }
    let pass = worst < 1e-6 && argmax_mismatches == 0;
    assert!(verdict(
        4,
        pass,
        &format!(
            "{instances} instances: worst mean-logit deviation {worst:.2e}, \
             {argmax_mismatches} argmax mismatches",
        ),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 5: reference parameter budgets and their invariance to the
// sampling rate of the data flowing through the network.

#[test]
fn criterion_05_parameter_budgets() {
    let cfg = ModelConfig::default();
    let mut reports = Vec::new();
    let mut staged_ok = true;
    for (i, rate) in [100u32, 125, 200].into_iter().enumerate() {
        let spec = SyntheticSpec {
            n_subjects: 1,
            epochs_per_subject: 3,
            sampling_rate_hz: rate,
            rng_seed: 5,
            ..Default::default()
        };
        let rec = &generate_synthetic(&spec).unwrap()[0];
        let parent = Model::<f32>::somnonet(&cfg, i as u64).unwrap();
        staged_ok &= evaluate_recordings(&parent, std::slice::from_ref(rec), true).is_ok();
        let nano = Model::nano(&parent, &cfg, 9).unwrap();
        reports.push((parent.param_report(), nano.param_report()));
    }
    let (parent_rep, nano_rep) = &reports[0];
    let rate_invariant = reports.iter().all(|(p, n)| p == parent_rep && n == nano_rep);

    let seq: usize = ["local_seq", "global_seq"]
        .iter()
        .map(|g| parent_rep.group(g).map_or(0, |g| g.params))
        .sum();
    let csu = nano_rep.group("compact_seq").map_or(0, |g| g.params);
    let ratio = nano_rep.ratio_to(parent_rep);

    let pass = staged_ok
        && rate_invariant
        && (387_000..=473_000).contains(&parent_rep.total)
        && (354_600..=433_400).contains(&seq)
        && (44_100..=53_900).contains(&nano_rep.total)
        && (11_700..=14_300).contains(&csu)
        && (0.09..=0.14).contains(&ratio);
    assert!(verdict(
        5,
        pass,
        &format!(
            "full {} (sequence {}), compact {} (recurrent unit {}), ratio {:.4}, \
             reports identical across 100/125/200 Hz",
            parent_rep.total, seq, nano_rep.total, csu, ratio,
        ),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 6: the desk-scale run reaches test OA ≥ 0.90 and κ > 0.80 with
// training finishing inside 20 minutes on this machine.

#[test]
fn criterion_06_desk_scale_learning() {
    match desk() {
        Ok(d) => {
            let pass = d.oa >= 0.90 && d.kappa > 0.80 && d.train_secs < 1200.0;
            assert!(verdict(
                6,
                pass,
                &format!(
                    "test OA {:.4}, κ {:.4}, trained in {:.0}s (budget 1200s)",
                    d.oa, d.kappa, d.train_secs,
                ),
            ));
        }
        Err(e) => {
            assert!(verdict(6, false, &format!("desk run failed: {e}")));
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 7: the distilled compact variant retains ≥ 0.95× the full
// model's test OA with its encoder bit-frozen, and its trainable parameters
// are ≤ 5% of the full model's sequence stages.

#[test]
fn criterion_07_compact_retention() {
    let d = match desk() {
        Ok(d) => d,
        Err(e) => {
            assert!(verdict(7, false, &format!("desk run failed: {e}")));
            return;
        }
    };
    let cfg = d.model.config().clone();
    let mut nano = Model::nano(&d.model, &cfg, 1).unwrap();
    let encoder_bits = |m: &Model<f32>| -> Vec<u32> {
        let grp = m.groups().iter().find(|g| g.name == "encoder").unwrap();
        grp.params
            .iter()
            .chain(&grp.buffers)
            .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    let parent_bits = encoder_bits(&d.model);

    let settings = TrainSettings {
        batch_size: 64,
        max_epochs: 80,
        patience: 30,
        window_stride: 9,
        all_frames_loss: true,
        base_lr: 3e-3,
        max_lr: 3e-3,
        ..Default::default()
    };
    train_nano(&mut nano, &d.train_recs, &d.val_recs, &settings).unwrap();

    let cm = evaluate_recordings(&nano, &d.test_recs, true).unwrap();
    let oa = stage_metrics(&cm, false).unwrap().overall_accuracy;

    let frozen = encoder_bits(&nano) == parent_bits;
    let parent_rep = d.model.param_report();
    let seq: usize = ["local_seq", "global_seq"]
        .iter()
        .map(|g| parent_rep.group(g).map_or(0, |g| g.params))
        .sum();
    let trainable_ratio = nano.param_report().trainable as f64 / seq as f64;

    let pass = oa >= 0.95 * d.oa && frozen && trainable_ratio <= 0.05;
    assert!(verdict(
        7,
        pass,
        &format!(
            "compact OA {:.4} vs full {:.4} (retention {:.3}), encoder bit-frozen: {}, \
             trainable/sequence ratio {:.4}",
            oa,
            d.oa,
            oa / d.oa,
            frozen,
            trainable_ratio,
        ),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 8: on W epochs of a fresh annotated recording, the top ⌈N/3⌉
// chunks by sequence attribution and by reverse-mode head attribution
// overlap the annotated alpha-burst spans with mean IoU ≥ 0.5.

fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn iou(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|i| b.contains(i)).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[test]
fn criterion_08_attribution_localizes_alpha_bursts() {
    let d = match desk() {
        Ok(d) => d,
        Err(e) => {
            assert!(verdict(8, false, &format!("desk run failed: {e}")));
            return;
        }
    };
    let spec = SyntheticSpec {
        n_subjects: 1,
        epochs_per_subject: 60,
        class_mix: [1.0, 0.0, 0.0, 0.0, 0.0],
        rng_seed: 11,
        ..Default::default()
    };
    let raw = &generate_synthetic(&spec).unwrap()[0];
    let rec = raw.standardized();
    let cfg = d.model.config();
    let n_chunks = cfg.n_chunks;
    let k = n_chunks.div_ceil(3);
    let chunk_len = rec.epoch_samples() / n_chunks;
    let frames = cfg.context_frames;

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let (mut seq_sum, mut bwd_sum, mut rand_sum) = (0.0f64, 0.0f64, 0.0f64);
    let n_epochs = rec.n_epochs();
    for e in 0..n_epochs {
        let alpha: Vec<usize> = (0..n_chunks)
            .filter(|&i| {
                raw.annotations[e].iter().any(|s| {
                    s.tag == TAG_ALPHA
                        && (s.start_sample as usize) < (i + 1) * chunk_len
                        && (s.end_sample as usize) > i * chunk_len
                })
            })
            .collect();

        let window: Vec<_> = window_epochs(e, n_epochs, frames)
            .into_iter()
            .map(|i| rec.chunk_epoch(i, n_chunks).unwrap())
            .collect();
        let seq_att = sequence_attribution(&d.model64, &window, frames / 2, e, false).unwrap();
        seq_sum += iou(&top_k(&seq_att.scores, k), &alpha);

        let feats = d.model.chunk_features(&rec.chunk_epoch(e, n_chunks).unwrap()).unwrap();
        let rows = feature_rows(&feats);
        let pred = voting_predict(&rows, &d.head).unwrap().predicted;
        let bwd_att = feature_backward_attribution(&rows, &d.head, pred, e, false).unwrap();
        bwd_sum += iou(&top_k(&bwd_att.scores, k), &alpha);

        let random: Vec<f64> = (0..n_chunks).map(|_| rng.gen::<f64>()).collect();
        rand_sum += iou(&top_k(&random, k), &alpha);
    }
    let n = n_epochs as f64;
    let (seq_iou, bwd_iou, rand_iou) = (seq_sum / n, bwd_sum / n, rand_sum / n);
    let pass = n_epochs >= 50 && seq_iou >= 0.5 && bwd_iou >= 0.5;
    assert!(verdict(
        8,
        pass,
        &format!(
            "{n_epochs} W epochs, top-{k} of {n_chunks} chunks: sequence IoU {seq_iou:.3}, \
             reverse-mode IoU {bwd_iou:.3}, random baseline {rand_iou:.3}",
        ),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 9: on the desk test set the sequence network's accuracy is at
// least both head accuracies, and the voting and feature heads agree within
// 2 points. For a linear probe the two heads are algebraically the same
// classifier, so the gap should be exactly zero.

#[test]
fn criterion_09_head_accuracy_ordering() {
    let d = match desk() {
        Ok(d) => d,
        Err(e) => {
            assert!(verdict(9, false, &format!("desk run failed: {e}")));
            return;
        }
    };
    let voting = head_accuracy(&d.model, &d.head, &d.test_recs, true).unwrap();

    let (feats, labels) = head_examples(&d.model, &d.test_recs, true).unwrap();
    let mut correct = 0usize;
    for (f, stage) in feats.iter().zip(&labels) {
        let logits = d.head.logits(f).unwrap();
        let mut best = 0;
        for c in 1..N_CLASSES {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        if best == stage.index() {
            correct += 1;
        }
    }
    let feature = correct as f64 / labels.len() as f64;

    let pass = d.oa >= voting && d.oa >= feature && (voting - feature).abs() <= 0.02;
    assert!(verdict(
        9,
        pass,
        &format!(
            "sequence {:.4} ≥ voting {voting:.4} and feature {feature:.4}; \
             voting-feature gap {:.4}",
            d.oa,
            (voting - feature).abs(),
        ),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 10: metrics agree with an independent brute-force recomputation
// to 1e-12 over 10^4 randomized sets, plus exact hand-built cases.

#[test]
fn criterion_10_metrics_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst = 0.0f64;
    let sets = 10_000usize;
    for iter in 0..sets {
        let n = rng.gen_range(1..=200);
        let mut preds = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            preds.push(SleepStage::from_index(rng.gen_range(0..N_CLASSES)).unwrap());
            labels.push(if i > 0 && rng.gen_bool(0.1) {
                Label::Excluded
            } else {
                Label::Stage(SleepStage::from_index(rng.gen_range(0..N_CLASSES)).unwrap())
            });
        }
        let include_absent = iter % 2 == 0;
        let cm = ConfusionMatrix::from_pairs(&preds, &labels).unwrap();
        let m = stage_metrics(&cm, include_absent).unwrap();

        // Independent tally straight from the pair list.
        let mut counts = [[0u64; N_CLASSES]; N_CLASSES];
        for (p, l) in preds.iter().zip(&labels) {
            if let Some(t) = l.stage() {
                counts[t.index()][p.index()] += 1;
            }
        }
        let total: u64 = counts.iter().flatten().sum();
        let totalf = total as f64;
        let trace: u64 = (0..N_CLASSES).map(|c| counts[c][c]).sum();
        let oa = trace as f64 / totalf;
        worst = worst.max((m.overall_accuracy - oa).abs());

        let mut f1_sum = 0.0;
        let mut f1_classes = 0usize;
        for c in 0..N_CLASSES {
            let tp = counts[c][c] as f64;
            let truth: u64 = counts[c].iter().sum();
            let predicted: u64 = (0..N_CLASSES).map(|r| counts[r][c]).sum();
            let f1 = if tp == 0.0 {
                0.0
            } else {
                let p = tp / predicted as f64;
                let r = tp / truth as f64;
                2.0 * p * r / (p + r)
            };
            worst = worst.max((m.per_class_f1[c] - f1).abs());
            if include_absent || truth > 0 {
                f1_sum += f1;
                f1_classes += 1;
            }
        }
        worst = worst.max((m.macro_f1 - f1_sum / f1_classes as f64).abs());

        let pe: f64 = (0..N_CLASSES)
            .map(|c| {
                let truth: u64 = counts[c].iter().sum();
                let predicted: u64 = (0..N_CLASSES).map(|r| counts[r][c]).sum();
                truth as f64 * predicted as f64 / (totalf * totalf)
            })
            .sum();
        let kappa = if pe >= 1.0 { 1.0 } else { (oa - pe) / (1.0 - pe) };
        worst = worst.max((m.kappa - kappa).abs());
    }

    // Hand cases: a balanced two-class matrix with 75% agreement has
    // κ = 0.5 exactly; a pure anti-diagonal one has κ = −1 exactly.
    let mut cm = ConfusionMatrix::new();
    for _ in 0..15 {
        cm.record(SleepStage::Wake, SleepStage::Wake);
        cm.record(SleepStage::N1, SleepStage::N1);
    }
    for _ in 0..5 {
        cm.record(SleepStage::Wake, SleepStage::N1);
        cm.record(SleepStage::N1, SleepStage::Wake);
    }
    let half = stage_metrics(&cm, false).unwrap().kappa;

    let mut cm = ConfusionMatrix::new();
    for _ in 0..10 {
        cm.record(SleepStage::Wake, SleepStage::N1);
        cm.record(SleepStage::N1, SleepStage::Wake);
    }
    let anti = stage_metrics(&cm, false).unwrap().kappa;

    let pass = worst < 1e-12 && half == 0.5 && anti == -1.0;
    assert!(verdict(
        10,
        pass,
        &format!("{sets} randomized sets, worst deviation {worst:.2e}; κ hand cases {half}, {anti}"),
    ));
}

// ---------------------------------------------------------------------------
// Criterion 11: byte-exact file round-trips and seed determinism.

#[test]
fn criterion_11_determinism_and_formats() {
    let dir = TempDir::new().unwrap();

    let spec = SyntheticSpec {
        n_subjects: 2,
        epochs_per_subject: 12,
        sampling_rate_hz: 16,
        epoch_len_s: 10,
        rng_seed: 3,
        ..Default::default()
    };
    let recs = generate_synthetic(&spec).unwrap();
    let a = dir.path().join("a.ssef");
    let b = dir.path().join("b.ssef");
    write_ssef(&recs[0], &a).unwrap();
    let round = read_ssef(&a).unwrap();
    write_ssef(&round, &b).unwrap();
    let ssef_ok = round == recs[0] && std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();

    let cfg = tiny_config();
    let model = Model::<f32>::somnonet(&cfg, 4).unwrap();
    let c1 = dir.path().join("m1.snwt");
    let c2 = dir.path().join("m2.snwt");
    model.save(&c1).unwrap();
    let loaded = Model::<f32>::load(&c1).unwrap();
    loaded.save(&c2).unwrap();
    let ckpt_ok = std::fs::read(&c1).unwrap() == std::fs::read(&c2).unwrap()
        && std::fs::read(config_sidecar_path(&c1)).unwrap()
            == std::fs::read(config_sidecar_path(&c2)).unwrap();

    let settings = TrainSettings {
        batch_size: 8,
        max_epochs: 2,
        patience: 8,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let mut m = Model::<f32>::somnonet(&cfg, 5).unwrap();
        let report = train(&mut m, &recs[..1], &recs[1..], &settings).unwrap();
        let path = dir.path().join("h.snwt");
        m.save(&path).unwrap();
        (report, std::fs::read(&path).unwrap())
    };
    let (r1, m1) = run();
    let (r2, m2) = run();
    let history_ok = r1 == r2 && m1 == m2;

    let model64 = Model::<f64>::somnonet(&cfg, 6).unwrap();
    let window: Vec<_> = (0..cfg.context_frames)
        .map(|e| recs[0].standardized().chunk_epoch(e, cfg.n_chunks).unwrap())
        .collect();
    let att1 = sequence_attribution(&model64, &window, 1, 0, false).unwrap();
    let att2 = sequence_attribution(&model64, &window, 1, 0, false).unwrap();
    let export = |tag: &str, att| {
        let csv = dir.path().join(format!("{tag}.csv"));
        let svg = dir.path().join(format!("{tag}.svg"));
        export_heatmap(att, &window[1], &csv, &svg).unwrap();
        (std::fs::read(&csv).unwrap(), std::fs::read(&svg).unwrap())
    };
    let (csv1, svg1) = export("x", &att1);
    let (csv2, svg2) = export("y", &att2);
    let attr_ok = att1 == att2 && csv1 == csv2 && svg1 == svg2;

    let pass = ssef_ok && ckpt_ok && history_ok && attr_ok;
    assert!(verdict(
        11,
        pass,
        &format!(
            "recording round-trip byte-exact: {ssef_ok}, checkpoint round-trip byte-exact: \
             {ckpt_ok}, seeded retrain identical: {history_ok}, attribution reruns identical: {attr_ok}",
        ),
    ));
}
