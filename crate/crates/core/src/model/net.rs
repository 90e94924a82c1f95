//! The two staging networks: construction, forward passes, parameter
//! accounting, and checkpoint round-trips.
//!
//! Both networks share the encoder: three multi-scale blocks, each running
//! parallel dilated convolutions whose outputs are concatenated, fused by a
//! 1x1 convolution, and halved by max pooling; global average pooling then
//! collapses time into one feature vector per chunk. The full network runs
//! a bidirectional GRU over the chunks of each epoch, averages its states
//! into a frame feature, stacks several bidirectional GRU layers over the
//! frames of the window, and classifies every frame. The compact variant
//! keeps the encoder frozen and replaces both recurrent stages with a
//! single small bidirectional GRU over all chunk features of the window,
//! averaged per frame before the classifier.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ChunkSet;
use crate::error::{Error, Result};
use crate::model::config::{read_model_config, write_model_config, Arch, ModelConfig};
use crate::nn::init::uniform_fan_in;
use crate::nn::{
    read_snwt, write_snwt, BatchStats, ConvSpec, Element, Graph, PadMode, PoolKind, Tensor, VarId,
};

const BN_EPS: f64 = 1e-5;

/// One named tensor of a model.
#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
}

/// The parameters of one module. `params` receive gradients and optimizer
/// updates unless the group is frozen; `buffers` hold running statistics
/// that are updated outside the tape and never optimized.
#[derive(Debug, Clone)]
pub struct ParamGroup<E: Element> {
    pub name: &'static str,
    pub frozen: bool,
    pub params: Vec<Param<E>>,
    pub buffers: Vec<Param<E>>,
}

/// Parameter counts by group. `params` counts every element, frozen or
/// not (the deployment size); `trainable` counts only optimizable ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupCount {
    pub name: String,
    pub params: usize,
    pub trainable: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    pub groups: Vec<GroupCount>,
    pub total: usize,
    pub trainable: usize,
    pub buffer_elements: usize,
}

impl ParamReport {
    pub fn group(&self, name: &str) -> Option<&GroupCount> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Deployment-size ratio of this model to `parent`, counting every
    /// parameter including frozen ones.
    pub fn ratio_to(&self, parent: &ParamReport) -> f64 {
        self.total as f64 / parent.total as f64
    }
}

/// How parameters are attached to a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindMode {
    /// Unfrozen groups are tracked for gradients.
    Train,
    /// Nothing is tracked; forward passes stay tape-free.
    Eval,
}

/// Graph ids of every parameter, parallel to the model's groups. Bindings
/// are only meaningful on the graph that produced them.
#[derive(Debug, Clone)]
pub struct Bindings {
    by_group: Vec<Vec<VarId>>,
}

impl Bindings {
    pub fn group(&self, gi: usize) -> &[VarId] {
        &self.by_group[gi]
    }

    pub fn id(&self, gi: usize, pi: usize) -> VarId {
        self.by_group[gi][pi]
    }
}

/// Intermediate products of one window forward. All ids live on the graph
/// the forward ran on.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Per frame, per chunk: the encoder's feature vectors.
    pub chunk_feats: Vec<Vec<VarId>>,
    /// Per frame: the pooled vector feeding the next stage — the mean of
    /// the chunk-level GRU states (full network) or of the compact unit's
    /// states over the frame's chunks (compact variant).
    pub frame_feats: Vec<VarId>,
    /// Classifier input, one row per frame.
    pub seq_out: VarId,
    /// Per-frame class logits, `[frames, n_classes]`.
    pub logits: VarId,
}

#[derive(Debug, Clone)]
pub struct Model<E: Element> {
    arch: Arch,
    cfg: ModelConfig,
    groups: Vec<ParamGroup<E>>,
}

/// Fan-in bound multiplier for the candidate block of recurrent matrices.
/// A freshly initialized gated unit halves its state through the update
/// gate and shrinks it again under tanh, so several stacked layers collapse
/// activations toward zero before training can begin; a wider candidate
/// draw keeps the forward scale near unity through the whole stack.
const GRU_CANDIDATE_GAIN: f64 = 2.5;

/// Initial bias of the update gate. Starting it negative opens the gate
/// toward the candidate (z ~ 0.27), which, together with the candidate
/// gain, preserves state magnitude across layers at initialization.
const GRU_UPDATE_BIAS: f64 = -1.0;

/// Draws a stacked-gate recurrent matrix `[3h, cols]`: unit fan-in bound
/// for the z and r gate blocks, widened by `GRU_CANDIDATE_GAIN` for the
/// candidate block in rows `2h..3h`.
fn gru_matrix<E: Element>(rng: &mut ChaCha8Rng, hidden: usize, cols: usize) -> Tensor<E> {
    let mut m = uniform_fan_in(rng, vec![3 * hidden, cols], cols);
    let gain = E::from_f64(GRU_CANDIDATE_GAIN);
    for v in &mut m.data_mut()[2 * hidden * cols..] {
        *v = *v * gain;
    }
    m
}

fn gru_params<E: Element>(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    layers: usize,
    first_in: usize,
    hidden: usize,
) -> Vec<Param<E>> {
    let mut out = Vec::new();
    let mut in_dim = first_in;
    for layer in 0..layers {
        for dir in ["fwd", "bwd"] {
            let stem = if layers == 1 {
                format!("{prefix}.{dir}")
            } else {
                format!("{prefix}.layer{layer}.{dir}")
            };
            out.push(Param {
                name: format!("{stem}.w_ih"),
                value: gru_matrix(rng, hidden, in_dim),
            });
            out.push(Param {
                name: format!("{stem}.u_hh"),
                value: gru_matrix(rng, hidden, hidden),
            });
            let mut b_ih = Tensor::zeros(vec![3 * hidden]);
            for v in &mut b_ih.data_mut()[..hidden] {
                *v = E::from_f64(GRU_UPDATE_BIAS);
            }
            out.push(Param { name: format!("{stem}.b_ih"), value: b_ih });
            out.push(Param { name: format!("{stem}.b_hh"), value: Tensor::zeros(vec![3 * hidden]) });
        }
        in_dim = 2 * hidden;
    }
    out
}

fn classifier_params<E: Element>(
    rng: &mut ChaCha8Rng,
    in_dim: usize,
    classes: usize,
    depth: usize,
) -> Vec<Param<E>> {
    let mut out = Vec::new();
    for layer in 0..depth {
        let rows = if layer + 1 == depth { classes } else { in_dim };
        out.push(Param {
            name: format!("classifier.layer{layer}.weight"),
            value: uniform_fan_in(rng, vec![rows, in_dim], in_dim),
        });
        out.push(Param {
            name: format!("classifier.layer{layer}.bias"),
            value: Tensor::zeros(vec![rows]),
        });
    }
    out
}

impl<E: Element> Model<E> {
    /// Builds the full network with seed-determined parameters.
    pub fn somnonet(cfg: &ModelConfig, seed: u64) -> Result<Model<E>> {
        Model::build(Arch::Somnonet, cfg, seed)
    }

    /// Builds the compact variant around `parent`'s trained encoder: the
    /// encoder parameters and running statistics are copied bit for bit
    /// and frozen; the recurrent unit and classifier start fresh from
    /// `seed`.
    pub fn nano(parent: &Model<E>, cfg: &ModelConfig, seed: u64) -> Result<Model<E>> {
        if parent.arch != Arch::Somnonet {
            return Err(Error::Config("parent must be the full network".into()));
        }
        let p = &parent.cfg;
        if p.feature_dim != cfg.feature_dim
            || p.encoder_channels != cfg.encoder_channels
            || p.encoder_fuse != cfg.encoder_fuse
            || p.dilations != cfg.dilations
        {
            return Err(Error::Config(
                "encoder dimensions differ from the parent's".into(),
            ));
        }
        let mut model = Model::build(Arch::Nano, cfg, seed)?;
        model.groups[0].params = parent.groups[0].params.clone();
        model.groups[0].buffers = parent.groups[0].buffers.clone();
        Ok(model)
    }

    fn build(arch: Arch, cfg: &ModelConfig, seed: u64) -> Result<Model<E>> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nb = cfg.dilations.len();

        let mut params = Vec::new();
        let mut buffers = Vec::new();
        let mut in_ch = 1usize;
        for blk in 0..3 {
            let out_ch = cfg.encoder_channels[blk];
            for br in 0..nb {
                let stem = format!("encoder.block{blk}.branch{br}");
                params.push(Param {
                    name: format!("{stem}.kernel"),
                    value: uniform_fan_in(&mut rng, vec![out_ch, in_ch, 3], in_ch * 3),
                });
                params.push(Param { name: format!("{stem}.bias"), value: Tensor::zeros(vec![out_ch]) });
                params.push(Param { name: format!("{stem}.gamma"), value: Tensor::full(vec![out_ch], E::one()) });
                params.push(Param { name: format!("{stem}.beta"), value: Tensor::zeros(vec![out_ch]) });
                buffers.push(Param { name: format!("{stem}.running_mean"), value: Tensor::zeros(vec![out_ch]) });
                buffers.push(Param { name: format!("{stem}.running_var"), value: Tensor::full(vec![out_ch], E::one()) });
            }
            let fuse = cfg.encoder_fuse[blk];
            let stem = format!("encoder.block{blk}.fuse");
            params.push(Param {
                name: format!("{stem}.kernel"),
                value: uniform_fan_in(&mut rng, vec![fuse, nb * out_ch, 1], nb * out_ch),
            });
            params.push(Param { name: format!("{stem}.bias"), value: Tensor::zeros(vec![fuse]) });
            params.push(Param { name: format!("{stem}.gamma"), value: Tensor::full(vec![fuse], E::one()) });
            params.push(Param { name: format!("{stem}.beta"), value: Tensor::zeros(vec![fuse]) });
            buffers.push(Param { name: format!("{stem}.running_mean"), value: Tensor::zeros(vec![fuse]) });
            buffers.push(Param { name: format!("{stem}.running_var"), value: Tensor::full(vec![fuse], E::one()) });
            in_ch = fuse;
        }
        let encoder = ParamGroup {
            name: "encoder",
            frozen: arch == Arch::Nano,
            params,
            buffers,
        };

        let groups = match arch {
            Arch::Somnonet => vec![
                encoder,
                ParamGroup {
                    name: "local_seq",
                    frozen: false,
                    params: gru_params(&mut rng, "local_seq", 1, cfg.feature_dim, cfg.local_hidden),
                    buffers: Vec::new(),
                },
                ParamGroup {
                    name: "global_seq",
                    frozen: false,
                    params: gru_params(
                        &mut rng,
                        "global_seq",
                        cfg.global_layers,
                        2 * cfg.local_hidden,
                        cfg.global_hidden,
                    ),
                    buffers: Vec::new(),
                },
                ParamGroup {
                    name: "classifier",
                    frozen: false,
                    params: classifier_params(
                        &mut rng,
                        2 * cfg.global_hidden,
                        cfg.n_classes,
                        cfg.classifier_depth,
                    ),
                    buffers: Vec::new(),
                },
            ],
            Arch::Nano => vec![
                encoder,
                ParamGroup {
                    name: "compact_seq",
                    frozen: false,
                    params: gru_params(&mut rng, "compact_seq", 1, cfg.feature_dim, cfg.nano_hidden),
                    buffers: Vec::new(),
                },
                ParamGroup {
                    name: "classifier",
                    frozen: false,
                    params: classifier_params(
                        &mut rng,
                        2 * cfg.nano_hidden,
                        cfg.n_classes,
                        cfg.classifier_depth,
                    ),
                    buffers: Vec::new(),
                },
            ],
        };
        Ok(Model { arch, cfg: cfg.clone(), groups })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn groups(&self) -> &[ParamGroup<E>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup<E>] {
        &mut self.groups
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Index of the classifier group (always the last one).
    pub fn classifier_group(&self) -> usize {
        self.groups.len() - 1
    }

    fn bn_sites(&self) -> usize {
        3 * (self.cfg.dilations.len() + 1)
    }

    /// Attaches every parameter to `g` as a leaf and returns their ids.
    pub fn bind(&self, g: &mut Graph<E>, mode: BindMode) -> Bindings {
        let by_group = self
            .groups
            .iter()
            .map(|grp| {
                let track = mode == BindMode::Train && !grp.frozen;
                grp.params.iter().map(|p| g.leaf_tracked(&p.value, track)).collect()
            })
            .collect();
        Bindings { by_group }
    }

    fn bn(
        &self,
        g: &mut Graph<E>,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        site: usize,
        train: bool,
    ) -> Result<VarId> {
        let eps = E::from_f64(BN_EPS);
        if train {
            g.batchnorm_train(x, gamma, beta, eps, Some(site))
        } else {
            let grp = &self.groups[0];
            let mean = grp.buffers[2 * site].value.data();
            let var = grp.buffers[2 * site + 1].value.data();
            g.batchnorm_eval(x, gamma, beta, eps, mean, var)
        }
    }

    /// Encodes one `[1, chunk_len]` chunk into a `[feature_dim]` vector.
    /// With `bn_train`, batch statistics are used and recorded under the
    /// site index; otherwise the running buffers apply.
    pub fn encode_chunk(
        &self,
        g: &mut Graph<E>,
        binds: &Bindings,
        chunk: VarId,
        bn_train: bool,
    ) -> Result<VarId> {
        let ids = binds.group(0);
        let nb = self.cfg.dilations.len();
        let mut cur = chunk;
        let mut site = 0usize;
        for blk in 0..3 {
            let base = blk * (4 * nb + 4);
            let mut branches = Vec::with_capacity(nb);
            for (br, &dilation) in self.cfg.dilations.iter().enumerate() {
                let p = base + 4 * br;
                let spec = ConvSpec { stride: 1, dilation, padding: PadMode::Same };
                let c = g.conv1d(cur, ids[p], ids[p + 1], spec)?;
                let n = self.bn(g, c, ids[p + 2], ids[p + 3], site, bn_train)?;
                site += 1;
                branches.push(g.relu6(n));
            }
            let merged = g.concat_channels(&branches)?;
            let p = base + 4 * nb;
            let f = g.conv1d(merged, ids[p], ids[p + 1], ConvSpec::default())?;
            let n = self.bn(g, f, ids[p + 2], ids[p + 3], site, bn_train)?;
            site += 1;
            let r = g.relu6(n);
            cur = g.pool1d(r, PoolKind::Max, 2, 2)?;
        }
        g.pool1d(cur, PoolKind::GlobalAvg, 1, 1)
    }

    /// Runs the whole network over a window. `chunks[frame][i]` must be a
    /// `[1, chunk_len]` leaf; every frame needs exactly `n_chunks` chunks,
    /// and any window length >= 1 is accepted. With `train`, batchnorm
    /// uses per-call statistics (never for a frozen encoder).
    pub fn forward_window(
        &self,
        g: &mut Graph<E>,
        binds: &Bindings,
        chunks: &[Vec<VarId>],
        train: bool,
    ) -> Result<Trace> {
        if chunks.is_empty() {
            return Err(Error::Shape("window must contain at least one frame".into()));
        }
        let bn_train = train && !self.groups[0].frozen;
        let mut feats = Vec::with_capacity(chunks.len());
        for frame in chunks {
            if frame.len() != self.cfg.n_chunks {
                return Err(Error::Shape(format!(
                    "frame has {} chunks, expected {}",
                    frame.len(),
                    self.cfg.n_chunks
                )));
            }
            let f = frame
                .iter()
                .map(|&c| self.encode_chunk(g, binds, c, bn_train))
                .collect::<Result<Vec<VarId>>>()?;
            feats.push(f);
        }
        self.sequence_forward(g, binds, feats)
    }

    /// Runs only the sequence stages and classifier over precomputed
    /// `[feature_dim]` chunk features, `feats[frame][i]`.
    pub fn forward_from_features(
        &self,
        g: &mut Graph<E>,
        binds: &Bindings,
        feats: &[Vec<VarId>],
    ) -> Result<Trace> {
        if feats.is_empty() {
            return Err(Error::Shape("window must contain at least one frame".into()));
        }
        for frame in feats {
            if frame.len() != self.cfg.n_chunks {
                return Err(Error::Shape(format!(
                    "frame has {} features, expected {}",
                    frame.len(),
                    self.cfg.n_chunks
                )));
            }
            for &f in frame {
                if g.value(f).shape() != [self.cfg.feature_dim] {
                    return Err(Error::Shape(format!(
                        "chunk feature has shape {:?}, expected [{}]",
                        g.value(f).shape(),
                        self.cfg.feature_dim
                    )));
                }
            }
        }
        self.sequence_forward(g, binds, feats.to_vec())
    }

    fn sequence_forward(
        &self,
        g: &mut Graph<E>,
        binds: &Bindings,
        feats: Vec<Vec<VarId>>,
    ) -> Result<Trace> {
        let frames = feats.len();
        match self.arch {
            Arch::Somnonet => {
                let lids = binds.group(1);
                let mut frame_feats = Vec::with_capacity(frames);
                for frame in &feats {
                    let seq = g.stack_rows(frame)?;
                    let states = g.bigru(seq, dir_ids(lids, 0, 0), dir_ids(lids, 0, 1))?;
                    frame_feats.push(g.mean_rows(states)?);
                }
                let gids = binds.group(2);
                let mut seq = g.stack_rows(&frame_feats)?;
                for layer in 0..self.cfg.global_layers {
                    seq = g.bigru(seq, dir_ids(gids, layer, 0), dir_ids(gids, layer, 1))?;
                }
                let logits = self.classifier_forward(g, seq, binds.group(3))?;
                Ok(Trace { chunk_feats: feats, frame_feats, seq_out: seq, logits })
            }
            Arch::Nano => {
                let flat: Vec<VarId> = feats.iter().flatten().copied().collect();
                let seq = g.stack_rows(&flat)?;
                let cids = binds.group(1);
                let states = g.bigru(seq, dir_ids(cids, 0, 0), dir_ids(cids, 0, 1))?;
                let n = self.cfg.n_chunks;
                let frame_feats = (0..frames)
                    .map(|t| g.mean_rows_range(states, t * n, (t + 1) * n))
                    .collect::<Result<Vec<VarId>>>()?;
                let rows = g.stack_rows(&frame_feats)?;
                let logits = self.classifier_forward(g, rows, binds.group(2))?;
                Ok(Trace { chunk_feats: feats, frame_feats, seq_out: rows, logits })
            }
        }
    }

    fn classifier_forward(&self, g: &mut Graph<E>, x: VarId, ids: &[VarId]) -> Result<VarId> {
        let depth = self.cfg.classifier_depth;
        let mut cur = x;
        for layer in 0..depth {
            cur = g.linear(cur, ids[2 * layer], ids[2 * layer + 1])?;
            if layer + 1 != depth {
                cur = g.relu6(cur);
            }
        }
        Ok(cur)
    }

    /// Encodes every chunk of one epoch with running-statistics
    /// normalization and no tape. This is the cached-feature path used by
    /// sliding-window inference and compact-variant training, where the
    /// encoder output per chunk never changes.
    pub fn chunk_features(&self, cs: &ChunkSet) -> Result<Vec<Tensor<E>>> {
        let mut g = Graph::new();
        let binds = self.bind(&mut g, BindMode::Eval);
        (0..cs.n_chunks())
            .map(|i| {
                let t = Tensor::from_f32_slice(vec![1, cs.chunk_len()], cs.chunk(i));
                let leaf = g.leaf(&t);
                let f = self.encode_chunk(&mut g, &binds, leaf, false)?;
                Ok(g.value(f).clone())
            })
            .collect()
    }

    /// True when every parameter and buffer is finite.
    pub fn is_finite(&self) -> bool {
        self.groups
            .iter()
            .flat_map(|grp| grp.params.iter().chain(&grp.buffers))
            .all(|p| p.value.is_finite())
    }

    pub fn param_report(&self) -> ParamReport {
        let groups: Vec<GroupCount> = self
            .groups
            .iter()
            .map(|grp| {
                let n: usize = grp.params.iter().map(|p| p.value.len()).sum();
                GroupCount {
                    name: grp.name.to_string(),
                    params: n,
                    trainable: if grp.frozen { 0 } else { n },
                }
            })
            .collect();
        let total = groups.iter().map(|g| g.params).sum();
        let trainable = groups.iter().map(|g| g.trainable).sum();
        let buffer_elements = self
            .groups
            .iter()
            .flat_map(|g| &g.buffers)
            .map(|p| p.value.len())
            .sum();
        ParamReport { groups, total, trainable, buffer_elements }
    }

    /// Folds captured batch statistics into the encoder's running buffers,
    /// `running <- (1 - momentum) * running + momentum * batch`, in the
    /// order the records are given.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats<E>], momentum: E) -> Result<()> {
        let sites = self.bn_sites();
        let keep = E::one() - momentum;
        for s in stats {
            if s.key >= sites {
                return Err(Error::Usage(format!(
                    "batch statistics key {} out of range for {sites} sites",
                    s.key
                )));
            }
            let grp = &mut self.groups[0];
            let mean = grp.buffers[2 * s.key].value.data_mut();
            if s.mean.len() != mean.len() || s.var.len() != mean.len() {
                return Err(Error::Shape(format!(
                    "batch statistics for site {} have {} channels, expected {}",
                    s.key,
                    s.mean.len(),
                    mean.len()
                )));
            }
            for (r, &b) in mean.iter_mut().zip(&s.mean) {
                *r = keep * *r + momentum * b;
            }
            let var = grp.buffers[2 * s.key + 1].value.data_mut();
            for (r, &b) in var.iter_mut().zip(&s.var) {
                *r = keep * *r + momentum * b;
            }
        }
        Ok(())
    }

    /// Writes the weights to `path` and the architecture to the `cfg`
    /// sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::new();
        for grp in &self.groups {
            for p in grp.params.iter().chain(&grp.buffers) {
                entries.push((
                    p.name.clone(),
                    Tensor::<f32>::new(p.value.shape().to_vec(), p.value.to_f32_vec()),
                ));
            }
        }
        write_snwt(path, &entries)?;
        write_model_config(&config_sidecar_path(path), self.arch, &self.cfg)
    }

    /// Rebuilds a model from a weights file and its sidecar. The file must
    /// hold exactly the tensors the architecture defines.
    pub fn load(path: &Path) -> Result<Model<E>> {
        let (arch, cfg) = read_model_config(&config_sidecar_path(path))?;
        let mut model = Model::build(arch, &cfg, 0)?;
        let mut by_name: HashMap<String, Tensor<f32>> = read_snwt(path)?.into_iter().collect();
        for grp in &mut model.groups {
            for p in grp.params.iter_mut().chain(grp.buffers.iter_mut()) {
                let t = by_name.remove(&p.name).ok_or_else(|| {
                    Error::Validation(format!("checkpoint is missing tensor {:?}", p.name))
                })?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Validation(format!(
                        "tensor {:?} has shape {:?}, expected {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )));
                }
                p.value = Tensor::from_f32_slice(t.shape().to_vec(), t.data());
            }
        }
        if let Some(name) = by_name.keys().next() {
            return Err(Error::Validation(format!(
                "checkpoint holds unexpected tensor {name:?}"
            )));
        }
        Ok(model)
    }
}

fn dir_ids(ids: &[VarId], layer: usize, dir: usize) -> (VarId, VarId, VarId, VarId) {
    let p = 8 * layer + 4 * dir;
    (ids[p], ids[p + 1], ids[p + 2], ids[p + 3])
}

/// Sidecar path for a checkpoint: the same location with extension `cfg`.
pub fn config_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("cfg")
}

/// Inserts every chunk of a window as an untracked `[1, chunk_len]` leaf.
pub fn window_leaves<E: Element>(g: &mut Graph<E>, window: &[ChunkSet]) -> Vec<Vec<VarId>> {
    window
        .iter()
        .map(|cs| {
            (0..cs.n_chunks())
                .map(|i| {
                    let t = Tensor::from_f32_slice(vec![1, cs.chunk_len()], cs.chunk(i));
                    g.leaf(&t)
                })
                .collect()
        })
        .collect()
}
