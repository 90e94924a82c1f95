//! Architecture hyperparameters and the plain-text sidecar that stores them.
//!
//! A checkpoint is an SNWT tensor file plus a `key=value` sidecar holding
//! everything needed to rebuild the network before loading weights into it.
//! The sidecar is strict in both directions: every key is written, and a
//! file with unknown, duplicate, or missing keys is rejected.

use std::collections::HashMap;
use std::path::Path;

use crate::data::N_CLASSES;
use crate::error::{Error, Result};

/// Which of the two networks a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Full network: local and global recurrent stages over chunk features.
    Somnonet,
    /// Compact variant: frozen encoder feeding a single small recurrent unit.
    Nano,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Somnonet => "somnonet",
            Arch::Nano => "nano",
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        match s {
            "somnonet" => Ok(Arch::Somnonet),
            "nano" => Ok(Arch::Nano),
            other => Err(Error::Config(format!("unknown arch {other:?}"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters shared by the full network and its compact variant.
///
/// The defaults are the reference configuration: they put the full model
/// near 439k parameters (92% of them in the recurrent stages) and the
/// compact variant near 47k, with its recurrent unit near 13k.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Chunks one epoch is split into before encoding.
    pub n_chunks: usize,
    /// Per-chunk feature length produced by the encoder.
    pub feature_dim: usize,
    /// Branch output channels of the three multi-scale blocks.
    pub encoder_channels: [usize; 3],
    /// 1x1 fusion output channels per block; the last must equal
    /// `feature_dim` because global average pooling follows it directly.
    pub encoder_fuse: [usize; 3],
    /// Dilation rates of the parallel branches in every block.
    pub dilations: Vec<usize>,
    /// Hidden size per direction of the chunk-level recurrent stage.
    pub local_hidden: usize,
    /// Hidden size per direction of each epoch-level recurrent layer.
    pub global_hidden: usize,
    /// Number of stacked bidirectional layers in the epoch-level stage.
    pub global_layers: usize,
    /// Epochs per training window; the center frame is the scored one.
    pub context_frames: usize,
    /// Output classes; fixed to the five sleep stages.
    pub n_classes: usize,
    /// Hidden size per direction of the compact variant's recurrent unit.
    pub nano_hidden: usize,
    /// Linear layers in the classifier head (1 = a single affine map).
    pub classifier_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_chunks: 30,
            feature_dim: 128,
            encoder_channels: [8, 24, 48],
            encoder_fuse: [8, 24, 128],
            dilations: vec![1, 3, 5],
            local_hidden: 64,
            global_hidden: 60,
            global_layers: 5,
            context_frames: 9,
            n_classes: N_CLASSES,
            nano_hidden: 15,
            classifier_depth: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 8] = [
            ("n_chunks", self.n_chunks),
            ("feature_dim", self.feature_dim),
            ("local_hidden", self.local_hidden),
            ("global_hidden", self.global_hidden),
            ("global_layers", self.global_layers),
            ("context_frames", self.context_frames),
            ("nano_hidden", self.nano_hidden),
            ("classifier_depth", self.classifier_depth),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.encoder_channels.contains(&0) || self.encoder_fuse.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.n_classes != N_CLASSES {
            return Err(Error::Config(format!(
                "n_classes must be {N_CLASSES}, got {}",
                self.n_classes
            )));
        }
        if self.encoder_fuse[2] != self.feature_dim {
            return Err(Error::Config(format!(
                "last fusion width {} must equal feature_dim {}",
                self.encoder_fuse[2], self.feature_dim
            )));
        }
        if self.dilations.is_empty() {
            return Err(Error::Config("at least one dilation branch".into()));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilations must be >= 1".into()));
        }
        Ok(())
    }
}

const KEYS: [&str; 13] = [
    "arch",
    "n_chunks",
    "feature_dim",
    "encoder_channels",
    "encoder_fuse",
    "dilations",
    "local_hidden",
    "global_hidden",
    "global_layers",
    "context_frames",
    "n_classes",
    "nano_hidden",
    "classifier_depth",
];

fn list(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes the sidecar for a checkpoint of `arch` built from `cfg`.
pub fn write_model_config(path: &Path, arch: Arch, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    let text = format!(
        "arch={}\n\
         n_chunks={}\n\
         feature_dim={}\n\
         encoder_channels={}\n\
         encoder_fuse={}\n\
         dilations={}\n\
         local_hidden={}\n\
         global_hidden={}\n\
         global_layers={}\n\
         context_frames={}\n\
         n_classes={}\n\
         nano_hidden={}\n\
         classifier_depth={}\n",
        arch,
        cfg.n_chunks,
        cfg.feature_dim,
        list(&cfg.encoder_channels),
        list(&cfg.encoder_fuse),
        list(&cfg.dilations),
        cfg.local_hidden,
        cfg.global_hidden,
        cfg.global_layers,
        cfg.context_frames,
        cfg.n_classes,
        cfg.nano_hidden,
        cfg.classifier_depth,
    );
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|part| parse_usize(key, part)).collect()
}

fn parse_triple(key: &str, v: &str) -> Result<[usize; 3]> {
    parse_list(key, v)?
        .try_into()
        .map_err(|got: Vec<usize>| {
            Error::Config(format!("{key}: expected 3 values, got {}", got.len()))
        })
}

/// Reads a sidecar back into the architecture it describes.
pub fn read_model_config(path: &Path) -> Result<(Arch, ModelConfig)> {
    let text = std::fs::read_to_string(path)?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1)));
        }
        if fields.insert(key, value.trim()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing key {key:?}")))
    };
    let arch = Arch::parse(get("arch")?)?;
    let cfg = ModelConfig {
        n_chunks: parse_usize("n_chunks", get("n_chunks")?)?,
        feature_dim: parse_usize("feature_dim", get("feature_dim")?)?,
        encoder_channels: parse_triple("encoder_channels", get("encoder_channels")?)?,
        encoder_fuse: parse_triple("encoder_fuse", get("encoder_fuse")?)?,
        dilations: parse_list("dilations", get("dilations")?)?,
        local_hidden: parse_usize("local_hidden", get("local_hidden")?)?,
        global_hidden: parse_usize("global_hidden", get("global_hidden")?)?,
        global_layers: parse_usize("global_layers", get("global_layers")?)?,
        context_frames: parse_usize("context_frames", get("context_frames")?)?,
        n_classes: parse_usize("n_classes", get("n_classes")?)?,
        nano_hidden: parse_usize("nano_hidden", get("nano_hidden")?)?,
        classifier_depth: parse_usize("classifier_depth", get("classifier_depth")?)?,
    };
    cfg.validate()?;
    Ok((arch, cfg))
}
