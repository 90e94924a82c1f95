//! The five subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use somnonet_core::attr::{
    feature_backward_attribution, feature_forward_attribution, feature_rows, head_accuracy,
    head_examples, train_linear_head, voting_attribution, voting_predict, AttrMethod,
    AttributionVector, HeadTrainConfig, LinearHead,
};
use somnonet_core::data::{
    generate_synthetic, read_ssef, write_ssef, ChunkSet, Recording, SleepStage, SyntheticSpec,
    N_CLASSES,
};
use somnonet_core::eval::{evaluate_recordings, window_epochs};
use somnonet_core::metrics::stage_metrics;
use somnonet_core::model::Model;
use somnonet_core::train::{history_csv, train as fit, train_nano, TrainReport};

use crate::config::settings_line;
use crate::{usage, AttributeArgs, DistillArgs, EvalArgs, SynthArgs, TrainArgs};

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut class_mix: [f64; N_CLASSES] = args
        .class_mix
        .clone()
        .try_into()
        .map_err(|_| usage("--class-mix wants exactly five weights (W,N1,N2,N3,R)"))?;
    let total: f64 = class_mix.iter().sum();
    if !(total.is_finite() && total > 0.0) || class_mix.iter().any(|&w| w < 0.0) {
        return Err(usage("--class-mix weights must be non-negative with a positive sum"));
    }
    for w in &mut class_mix {
        *w /= total;
    }
    let spec = SyntheticSpec {
        n_subjects: args.subjects,
        epochs_per_subject: args.epochs,
        sampling_rate_hz: args.rate,
        epoch_len_s: args.epoch_len,
        class_mix,
        noise_sigma: args.noise_sigma,
        rng_seed: args.seed,
    };
    let rec = merge_recordings(generate_synthetic(&spec)?);
    write_ssef(&rec, &args.out).with_context(|| format!("writing {}", args.out.display()))?;

    let mut counts = [0usize; N_CLASSES];
    for label in &rec.labels {
        if let Some(s) = label.stage() {
            counts[s.index()] += 1;
        }
    }
    let breakdown = SleepStage::ALL
        .iter()
        .map(|s| format!("{}={}", s.name(), counts[s.index()]))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "wrote {}: {} epochs @ {} Hz, {}",
        args.out.display(),
        rec.n_epochs(),
        rec.sampling_rate_hz,
        breakdown
    );
    Ok(())
}

fn merge_recordings(recs: Vec<Recording>) -> Recording {
    let mut iter = recs.into_iter();
    let mut merged = iter.next().expect("generator yields at least one subject");
    for r in iter {
        merged.epochs.extend(r.epochs);
        merged.labels.extend(r.labels);
        merged.annotations.extend(r.annotations);
    }
    merged
}

fn read_recordings(paths: &[PathBuf]) -> Result<Vec<Recording>> {
    paths
        .iter()
        .map(|p| read_ssef(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

/// Training recordings plus a validation split: the `--val` files when
/// given, otherwise the last training recording held out.
fn split_train_val(
    data: &[PathBuf],
    val: &[PathBuf],
) -> Result<(Vec<Recording>, Vec<Recording>)> {
    let mut train_recs = read_recordings(data)?;
    let val_recs = if val.is_empty() {
        if train_recs.len() < 2 {
            return Err(usage(
                "no validation data: pass --val, or at least two training recordings \
                 so the last one can be held out",
            ));
        }
        vec![train_recs.pop().expect("length checked above")]
    } else {
        read_recordings(val)?
    };
    Ok((train_recs, val_recs))
}

fn write_history(
    report: &TrainReport,
    out: &Path,
    history: Option<PathBuf>,
) -> Result<PathBuf> {
    let path = history.unwrap_or_else(|| out.with_extension("history.csv"));
    std::fs::write(&path, history_csv(&report.history))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn print_best(report: &TrainReport) {
    if let Some(row) = report.history.iter().find(|r| r.epoch == report.best_epoch) {
        println!(
            "best epoch {}: val_loss {:.6} val_acc {:.4}",
            row.epoch, row.val_loss, row.val_acc
        );
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (settings, model_cfg) = args.flags.resolve()?;
    let (train_recs, val_recs) = split_train_val(&args.data, &args.val)?;
    println!("{}", settings_line(&settings));

    match args.arch.as_str() {
        "somnonet" => {
            let mut model = Model::<f32>::somnonet(&model_cfg, settings.seed)?;
            let report = fit(&mut model, &train_recs, &val_recs, &settings)?;
            model.save(&args.out)
                .with_context(|| format!("writing {}", args.out.display()))?;
            let history = write_history(&report, &args.out, args.history)?;
            print_best(&report);
            println!(
                "wrote checkpoint {} and history {}",
                args.out.display(),
                history.display()
            );
        }
        "head" => {
            let parent_path = args.parent.ok_or_else(|| {
                usage("--arch head needs --parent, the checkpoint whose encoder feeds the probe")
            })?;
            let parent = Model::<f32>::load(&parent_path)
                .with_context(|| format!("loading {}", parent_path.display()))?;
            let (feats, labels) = head_examples(&parent, &train_recs, settings.standardize)?;
            let head_cfg = HeadTrainConfig { seed: settings.seed, ..HeadTrainConfig::default() };
            let head = train_linear_head(&feats, &labels, &head_cfg)?;
            head.save(&args.out)
                .with_context(|| format!("writing {}", args.out.display()))?;
            let acc = head_accuracy(&parent, &head, &val_recs, settings.standardize)?;
            println!("head validation accuracy: {acc:.4}");
            println!("wrote head probe {}", args.out.display());
        }
        other => return Err(usage(format!("unknown architecture `{other}`"))),
    }
    Ok(())
}

pub fn distill_nano(args: DistillArgs) -> Result<()> {
    let (settings, _) = args.flags.resolve()?;
    let parent = Model::<f32>::load(&args.parent)
        .with_context(|| format!("loading {}", args.parent.display()))?;
    let (train_recs, val_recs) = split_train_val(&args.data, &args.val)?;
    println!("{}", settings_line(&settings));

    let mut nano = Model::nano(&parent, parent.config(), settings.seed)?;
    let report = train_nano(&mut nano, &train_recs, &val_recs, &settings)?;
    nano.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;

    let nr = nano.param_report();
    let pr = parent.param_report();
    for g in &nr.groups {
        println!("group {}: {} params ({} trainable)", g.name, g.params, g.trainable);
    }
    println!("total {} params ({} trainable)", nr.total, nr.trainable);
    println!("parameter ratio vs parent: {:.3}", nr.ratio_to(&pr));
    let parent_seq: usize = ["local_seq", "global_seq"]
        .iter()
        .filter_map(|n| pr.group(n))
        .map(|g| g.params)
        .sum();
    println!(
        "trainable share of parent sequence stack: {:.3}",
        nr.trainable as f64 / parent_seq as f64
    );

    let history = write_history(&report, &args.out, args.history)?;
    print_best(&report);
    println!(
        "wrote checkpoint {} and history {}",
        args.out.display(),
        history.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = Model::<f32>::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let recs = read_recordings(&args.data)?;
    let cm = evaluate_recordings(&model, &recs, !args.no_standardize)?;
    let metrics = stage_metrics(&cm, args.include_absent)
        .map_err(|_| anyhow!("test set has no scored epochs"))?;

    println!("scored epochs: {}", cm.total());
    print!("{}", metrics.report());
    match &args.confusion_out {
        Some(path) => {
            std::fs::write(path, cm.csv())
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote confusion matrix {}", path.display());
        }
        None => {
            println!("confusion:");
            print!("{}", cm.csv());
        }
    }
    Ok(())
}

pub fn attribute(args: AttributeArgs) -> Result<()> {
    let method = AttrMethod::parse(&args.method)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let standardize = !args.no_standardize;

    match method {
        AttrMethod::Sequence => {
            if args.head.is_some() {
                return Err(anyhow!(
                    "the sequence method differentiates the full network; drop --head"
                ));
            }
            let model = Model::<f64>::load(&args.checkpoint)
                .with_context(|| format!("loading {}", args.checkpoint.display()))?;
            let frames = model.config().context_frames;
            let n_chunks = model.config().n_chunks;
            for path in &args.data {
                let rec = read_ssef(path).with_context(|| format!("reading {}", path.display()))?;
                let input = if standardize { rec.standardized() } else { rec.clone() };
                for e in chosen_epochs(&args.epochs, &rec, path)? {
                    let window: Vec<ChunkSet> = window_epochs(e, input.n_epochs(), frames)
                        .into_iter()
                        .map(|i| input.chunk_epoch(i, n_chunks))
                        .collect::<somnonet_core::Result<_>>()?;
                    let att = somnonet_core::attr::sequence_attribution(
                        &model,
                        &window,
                        frames / 2,
                        e,
                        args.paper_sign,
                    )?;
                    write_outputs(&att, &window[frames / 2], &args.out_dir, path)?;
                }
            }
        }
        _ => {
            let head_path = args.head.as_ref().ok_or_else(|| {
                anyhow!(
                    "the {method} method needs a linear decision head over chunk features, \
                     and the staged network's sequence classifier is not one; train a probe \
                     with `train --arch head --parent <checkpoint>` and pass it via --head, \
                     or use --method sequence"
                )
            })?;
            let model = Model::<f32>::load(&args.checkpoint)
                .with_context(|| format!("loading {}", args.checkpoint.display()))?;
            let head = LinearHead::load(head_path)
                .with_context(|| format!("loading {}", head_path.display()))?;
            if head.feature_dim() != model.config().feature_dim {
                return Err(anyhow!(
                    "head expects {}-dim features but the encoder produces {}",
                    head.feature_dim(),
                    model.config().feature_dim
                ));
            }
            let n_chunks = model.config().n_chunks;
            for path in &args.data {
                let rec = read_ssef(path).with_context(|| format!("reading {}", path.display()))?;
                let input = if standardize { rec.standardized() } else { rec.clone() };
                for e in chosen_epochs(&args.epochs, &rec, path)? {
                    let cs = input.chunk_epoch(e, n_chunks)?;
                    let rows = feature_rows(&model.chunk_features(&cs)?);
                    let att = match method {
                        AttrMethod::Voting => voting_attribution(&rows, &head, e)?,
                        AttrMethod::FeatureForward => {
                            let pred = voting_predict(&rows, &head)?.predicted;
                            feature_forward_attribution(&rows, &head, pred, e)?.1
                        }
                        AttrMethod::FeatureBackward => {
                            let pred = voting_predict(&rows, &head)?.predicted;
                            feature_backward_attribution(&rows, &head, pred, e, args.paper_sign)?
                        }
                        AttrMethod::Sequence => unreachable!("handled above"),
                    };
                    write_outputs(&att, &cs, &args.out_dir, path)?;
                }
            }
        }
    }
    Ok(())
}

fn chosen_epochs(requested: &[usize], rec: &Recording, path: &Path) -> Result<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..rec.n_epochs()).filter(|&e| rec.labels[e].stage().is_some()).collect());
    }
    for &e in requested {
        if e >= rec.n_epochs() {
            return Err(anyhow!(
                "epoch {} out of range for {} ({} epochs)",
                e,
                path.display(),
                rec.n_epochs()
            ));
        }
    }
    Ok(requested.to_vec())
}

fn write_outputs(
    att: &AttributionVector,
    cs: &ChunkSet,
    out_dir: &Path,
    data_path: &Path,
) -> Result<()> {
    let stem = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into());
    let base = format!("{}_{}_{}", stem, att.epoch_index, att.method);
    let csv = out_dir.join(format!("{base}.csv"));
    let svg = out_dir.join(format!("{base}.svg"));
    somnonet_core::attr::export_heatmap(att, cs, &csv, &svg)?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
