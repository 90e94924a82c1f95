//! Training configuration: a plain-text `key=value` file plus flag
//! overrides, resolved against the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use somnonet_core::model::ModelConfig;
use somnonet_core::train::TrainSettings;

use crate::usage;

/// Training knobs shared by `train` and `distill-nano`. Flags override the
/// config file, which overrides the defaults.
#[derive(Args, Debug)]
pub struct TrainFlags {
    /// Plain-text key=value settings file (training and model keys)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Windows per optimizer step [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch cap [default: 150]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 8]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seed for parameter init and batch shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Step between window starts within a recording [default: 1]
    #[arg(long)]
    pub window_stride: Option<usize>,
    /// Supervise every scored frame of a window, not only the center
    #[arg(long)]
    pub all_frames_loss: bool,
    /// Weight frame losses by inverse class frequency
    #[arg(long)]
    pub class_weighting: bool,
    /// Feed raw instead of per-recording standardized signals
    #[arg(long)]
    pub no_standardize: bool,
    /// Running-statistics update factor [default: 0.1]
    #[arg(long)]
    pub bn_momentum: Option<f64>,
    /// Lower learning-rate bound [default: 1e-4]
    #[arg(long)]
    pub base_lr: Option<f64>,
    /// Upper learning-rate bound [default: 1e-3]
    #[arg(long)]
    pub max_lr: Option<f64>,
    /// Learning-rate cycle length in epochs [default: 4]
    #[arg(long)]
    pub cycle_epochs: Option<usize>,
}

impl TrainFlags {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> Result<(TrainSettings, ModelConfig)> {
        let mut settings = TrainSettings::default();
        let mut model = ModelConfig::default();
        if let Some(path) = &self.config {
            apply_config_file(path, &mut settings, &mut model)?;
        }
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    settings.$field = v;
                }
            };
        }
        set!(batch_size);
        set!(max_epochs);
        set!(patience);
        set!(seed);
        set!(window_stride);
        set!(bn_momentum);
        set!(base_lr);
        set!(max_lr);
        set!(cycle_epochs);
        if self.all_frames_loss {
            settings.all_frames_loss = true;
        }
        if self.class_weighting {
            settings.class_weighting = true;
        }
        if self.no_standardize {
            settings.standardize = false;
        }
        Ok((settings, model))
    }
}

fn apply_config_file(
    path: &Path,
    settings: &mut TrainSettings,
    model: &mut ModelConfig,
) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(format!("{}:{}: expected key=value", path.display(), lineno + 1))
        })?;
        apply_key(key.trim(), value.trim(), settings, model)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
    }
    Ok(())
}

fn apply_key(
    key: &str,
    value: &str,
    s: &mut TrainSettings,
    m: &mut ModelConfig,
) -> Result<()> {
    fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| usage(format!("config key `{key}` has bad value `{value}`")))
    }
    fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
        value.split(',').map(|v| scalar(key, v.trim())).collect()
    }
    fn triple(key: &str, value: &str) -> Result<[usize; 3]> {
        list::<usize>(key, value)?
            .try_into()
            .map_err(|_| usage(format!("config key `{key}` wants exactly three values")))
    }

    match key {
        "batch_size" => s.batch_size = scalar(key, value)?,
        "max_epochs" => s.max_epochs = scalar(key, value)?,
        "patience" => s.patience = scalar(key, value)?,
        "seed" => s.seed = scalar(key, value)?,
        "window_stride" => s.window_stride = scalar(key, value)?,
        "all_frames_loss" => s.all_frames_loss = scalar(key, value)?,
        "class_weighting" => s.class_weighting = scalar(key, value)?,
        "standardize" => s.standardize = scalar(key, value)?,
        "bn_momentum" => s.bn_momentum = scalar(key, value)?,
        "base_lr" => s.base_lr = scalar(key, value)?,
        "max_lr" => s.max_lr = scalar(key, value)?,
        "cycle_epochs" => s.cycle_epochs = scalar(key, value)?,
        "beta1" => s.hyper.beta1 = scalar(key, value)?,
        "beta2" => s.hyper.beta2 = scalar(key, value)?,
        "eps" => s.hyper.eps = scalar(key, value)?,
        "weight_decay" => s.hyper.weight_decay = scalar(key, value)?,
        "n_chunks" => m.n_chunks = scalar(key, value)?,
        "feature_dim" => m.feature_dim = scalar(key, value)?,
        "encoder_channels" => m.encoder_channels = triple(key, value)?,
        "encoder_fuse" => m.encoder_fuse = triple(key, value)?,
        "dilations" => m.dilations = list(key, value)?,
        "local_hidden" => m.local_hidden = scalar(key, value)?,
        "global_hidden" => m.global_hidden = scalar(key, value)?,
        "global_layers" => m.global_layers = scalar(key, value)?,
        "context_frames" => m.context_frames = scalar(key, value)?,
        "n_classes" => m.n_classes = scalar(key, value)?,
        "nano_hidden" => m.nano_hidden = scalar(key, value)?,
        "classifier_depth" => m.classifier_depth = scalar(key, value)?,
        other => return Err(usage(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

/// One stable line describing the effective settings, echoed at run start.
pub fn settings_line(s: &TrainSettings) -> String {
    format!(
        "settings: batch_size={} max_epochs={} patience={} seed={} window_stride={} \
         all_frames_loss={} class_weighting={} standardize={} bn_momentum={} \
         base_lr={} max_lr={} cycle_epochs={}",
        s.batch_size,
        s.max_epochs,
        s.patience,
        s.seed,
        s.window_stride,
        s.all_frames_loss,
        s.class_weighting,
        s.standardize,
        s.bn_momentum,
        s.base_lr,
        s.max_lr,
        s.cycle_epochs
    )
}
