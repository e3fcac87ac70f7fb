//! Tumour segmentation: a 3-D residual U-net with squeeze-and-excitation
//! gating, trained on soft-Dice loss, plus the Dice score metric.

use crate::checkpoint::{read_param_file, write_param_file, CheckpointError};
use crate::nn::init::{he_normal, xavier_normal, ParamKind, ParamSet};
use crate::nn::optim::Adam;
use crate::nn::{Graph, NodeId, Tensor};
use crate::volume::{GridDims, Mask, Volume};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite loss in epoch {0}")]
    NonFiniteLoss(u64),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegConfig {
    /// Resolution levels; levels - 1 downsamplings.
    pub levels: usize,
    pub base_channels: usize,
    pub epochs: u64,
    pub batch_size: usize,
    /// Probability cut for binarization.
    pub threshold: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            base_channels: 8,
            epochs: 30,
            batch_size: 4,
            threshold: 0.5,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if self.levels < 2 {
            return Err(SegError::Config(format!("levels {} must be >= 2", self.levels)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(SegError::Config(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        if self.base_channels == 0 || self.epochs == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(SegError::Config("channels, epochs, batch and rate must be positive".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        crate::nn::init::hex_string(&hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegArch {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub levels: usize,
    pub base_channels: usize,
}

impl SegArch {
    pub fn new(dims: GridDims, config: &SegConfig) -> Result<Self, SegError> {
        config.validate()?;
        let factor = 1usize << (config.levels - 1);
        for (axis, d) in [("width", dims.width), ("height", dims.height), ("depth", dims.depth)] {
            if d % factor != 0 || d / factor == 0 {
                return Err(SegError::Config(format!(
                    "{axis} {d} not divisible by 2^(levels-1) = {factor}"
                )));
            }
        }
        Ok(Self {
            width: dims.width,
            height: dims.height,
            depth: dims.depth,
            levels: config.levels,
            base_channels: config.base_channels,
        })
    }

    pub fn dims(&self) -> GridDims {
        GridDims::new(self.width, self.height, self.depth)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone)]
pub struct SegmenterParams {
    pub arch: SegArch,
    pub set: ParamSet,
}

impl SegmenterParams {
    pub fn save(&self, path: &Path, epochs: u64, config_digest: &str) -> Result<(), SegError> {
        let arch = serde_json::to_value(&self.arch)
            .map_err(|e| SegError::Checkpoint(CheckpointError::BadManifest(e.to_string())))?;
        write_param_file(path, "segmenter", epochs, config_digest, arch, None, &[("segmenter", &self.set)])?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SegError> {
        let file = read_param_file(path)?;
        if file.model != "segmenter" {
            return Err(SegError::Checkpoint(CheckpointError::ModelMismatch {
                expected: "segmenter".into(),
                got: file.model,
            }));
        }
        let arch: SegArch = serde_json::from_value(file.arch)
            .map_err(|e| SegError::Checkpoint(CheckpointError::BadManifest(e.to_string())))?;
        let set = file
            .groups
            .into_iter()
            .find(|(g, _)| g == "segmenter")
            .map(|(_, s)| s)
            .ok_or_else(|| SegError::Checkpoint(CheckpointError::BadManifest("no segmenter group".into())))?;
        Ok(Self { arch, set })
    }
}

fn push_resse(set: &mut ParamSet, prefix: &str, c: usize, rng: &mut rand_chacha::ChaCha8Rng) {
    let r = (c / 4).max(1);
    set.push(
        format!("{prefix}.conv0.weight"),
        he_normal(vec![c, c, 3, 3, 3], c * 27, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push(format!("{prefix}.conv0.bias"), Tensor::zeros(vec![c]), ParamKind::Bias);
    set.push(
        format!("{prefix}.conv1.weight"),
        he_normal(vec![c, c, 3, 3, 3], c * 27, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push(format!("{prefix}.conv1.bias"), Tensor::zeros(vec![c]), ParamKind::Bias);
    set.push(
        format!("{prefix}.se.fc0.weight"),
        he_normal(vec![r, c], c, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push(format!("{prefix}.se.fc0.bias"), Tensor::zeros(vec![r]), ParamKind::Bias);
    set.push(
        format!("{prefix}.se.fc1.weight"),
        xavier_normal(vec![c, r], r, c, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push(format!("{prefix}.se.fc1.bias"), Tensor::zeros(vec![c]), ParamKind::Bias);
}

pub fn init_segmenter(arch: &SegArch, rng: &mut rand_chacha::ChaCha8Rng) -> SegmenterParams {
    let mut set = ParamSet::new();
    let c0 = arch.channels(0);
    set.push("stem.weight", he_normal(vec![c0, 1, 3, 3, 3], 27, rng), ParamKind::Weight { out_axis: 0 });
    set.push("stem.bias", Tensor::zeros(vec![c0]), ParamKind::Bias);
    for level in 0..arch.levels {
        push_resse(&mut set, &format!("enc{level}"), arch.channels(level), rng);
        if level + 1 < arch.levels {
            let (ci, co) = (arch.channels(level), arch.channels(level + 1));
            set.push(
                format!("down{level}.weight"),
                he_normal(vec![co, ci, 2, 2, 2], ci * 8, rng),
                ParamKind::Weight { out_axis: 0 },
            );
            set.push(format!("down{level}.bias"), Tensor::zeros(vec![co]), ParamKind::Bias);
        }
    }
    for level in (0..arch.levels - 1).rev() {
        let (ci, co) = (arch.channels(level + 1), arch.channels(level));
        set.push(
            format!("up{level}.weight"),
            he_normal(vec![ci, co, 2, 2, 2], ci * 8, rng),
            ParamKind::Weight { out_axis: 1 },
        );
        set.push(format!("up{level}.bias"), Tensor::zeros(vec![co]), ParamKind::Bias);
        set.push(
            format!("merge{level}.weight"),
            he_normal(vec![co, 2 * co, 3, 3, 3], 2 * co * 27, rng),
            ParamKind::Weight { out_axis: 0 },
        );
        set.push(format!("merge{level}.bias"), Tensor::zeros(vec![co]), ParamKind::Bias);
        push_resse(&mut set, &format!("dec{level}"), co, rng);
    }
    let head_in = arch.channels(0);
    set.push(
        "head.weight",
        xavier_normal(vec![1, head_in, 1, 1, 1], head_in, 1, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push("head.bias", Tensor::zeros(vec![1]), ParamKind::Bias);
    SegmenterParams { arch: arch.clone(), set }
}

struct SegBound<'a> {
    set: &'a ParamSet,
    ids: Vec<NodeId>,
}

impl SegBound<'_> {
    fn get(&self, name: &str) -> NodeId {
        let idx = self
            .set
            .entries
            .iter()
            .position(|e| e.name == name)
            .unwrap_or_else(|| panic!("no segmenter parameter {name}"));
        self.ids[idx]
    }
}

fn bind_seg<'a>(g: &mut Graph, set: &'a ParamSet, trainable: bool) -> SegBound<'a> {
    let ids = set
        .entries
        .iter()
        .map(|e| if trainable { g.param(e.tensor.clone()) } else { g.constant(e.tensor.clone()) })
        .collect();
    SegBound { set, ids }
}

fn resse_forward(g: &mut Graph, b: &SegBound<'_>, prefix: &str, x: NodeId) -> NodeId {
    let h = g.conv3d(x, b.get(&format!("{prefix}.conv0.weight")), b.get(&format!("{prefix}.conv0.bias")), [1, 1, 1], [1, 1, 1]);
    let h = g.relu(h);
    let h = g.conv3d(h, b.get(&format!("{prefix}.conv1.weight")), b.get(&format!("{prefix}.conv1.bias")), [1, 1, 1], [1, 1, 1]);
    let pooled = g.global_avg_pool(h);
    let a = g.linear(b.get(&format!("{prefix}.se.fc0.weight")), pooled, b.get(&format!("{prefix}.se.fc0.bias")));
    let a = g.relu(a);
    let gate = g.linear(b.get(&format!("{prefix}.se.fc1.weight")), a, b.get(&format!("{prefix}.se.fc1.bias")));
    let gate = g.sigmoid(gate);
    let h = g.channel_scale(h, gate);
    let out = g.add(x, h);
    g.relu(out)
}

/// Probability-map forward pass: [1,D,H,W] node in (0, 1).
fn seg_forward(g: &mut Graph, arch: &SegArch, b: &SegBound<'_>, volume: NodeId) -> NodeId {
    let mut x = g.conv3d(volume, b.get("stem.weight"), b.get("stem.bias"), [1, 1, 1], [1, 1, 1]);
    x = g.relu(x);
    let mut skips = Vec::new();
    for level in 0..arch.levels - 1 {
        x = resse_forward(g, b, &format!("enc{level}"), x);
        skips.push(x);
        x = g.conv3d(x, b.get(&format!("down{level}.weight")), b.get(&format!("down{level}.bias")), [2, 2, 2], [0, 0, 0]);
        x = g.relu(x);
    }
    x = resse_forward(g, b, &format!("enc{}", arch.levels - 1), x);
    for level in (0..arch.levels - 1).rev() {
        x = g.conv3d_t(x, b.get(&format!("up{level}.weight")), b.get(&format!("up{level}.bias")), [2, 2, 2], [0, 0, 0]);
        x = g.relu(x);
        x = g.concat_channels(skips[level], x);
        x = g.conv3d(x, b.get(&format!("merge{level}.weight")), b.get(&format!("merge{level}.bias")), [1, 1, 1], [1, 1, 1]);
        x = g.relu(x);
        x = resse_forward(g, b, &format!("dec{level}"), x);
    }
    let logits = g.conv3d(x, b.get("head.weight"), b.get("head.bias"), [1, 1, 1], [0, 0, 0]);
    g.sigmoid(logits)
}

const DICE_EPS: f64 = 1.0;

fn soft_dice_loss_node(g: &mut Graph, probs: NodeId, target: NodeId) -> NodeId {
    let inter = g.mul(probs, target);
    let inter = g.sum(inter);
    let numer = g.affine(inter, 2.0, DICE_EPS);
    let p_sum = g.sum(probs);
    let t_sum = g.sum(target);
    let denom = g.add(p_sum, t_sum);
    let denom = g.affine(denom, 1.0, DICE_EPS);
    let dice = g.div(numer, denom);
    g.affine(dice, -1.0, 1.0)
}

fn volume_node(g: &mut Graph, v: &Volume) -> NodeId {
    let data: Vec<f64> = v.data.iter().map(|&x| f64::from(x)).collect();
    g.constant(Tensor::new(vec![1, v.dims.depth, v.dims.height, v.dims.width], data))
}

fn mask_node(g: &mut Graph, m: &Mask) -> NodeId {
    let data: Vec<f64> = m.data.iter().map(|&x| f64::from(x)).collect();
    g.constant(Tensor::new(vec![1, m.dims.depth, m.dims.height, m.dims.width], data))
}

/// Soft-Dice loss of one (volume, mask) pair under `params`.
pub fn soft_dice_loss(params: &SegmenterParams, volume: &Volume, mask: &Mask) -> f64 {
    let mut g = Graph::new();
    let b = bind_seg(&mut g, &params.set, false);
    let vol = volume_node(&mut g, volume);
    let probs = seg_forward(&mut g, &params.arch, &b, vol);
    let target = mask_node(&mut g, mask);
    let loss = soft_dice_loss_node(&mut g, probs, target);
    g.value(loss).item()
}

/// Soft-Dice loss and its gradients with respect to every parameter.
pub fn soft_dice_grads(params: &SegmenterParams, volume: &Volume, mask: &Mask) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let b = bind_seg(&mut g, &params.set, true);
    let vol = volume_node(&mut g, volume);
    let probs = seg_forward(&mut g, &params.arch, &b, vol);
    let target = mask_node(&mut g, mask);
    let loss = soft_dice_loss_node(&mut g, probs, target);
    let grads = g.backward(loss);
    let out = b
        .ids
        .iter()
        .zip(&params.set.entries)
        .map(|(id, e)| grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(e.tensor.shape.clone())))
        .collect();
    (g.value(loss).item(), out)
}

/// Trains on paired images/masks, minimizing soft-Dice; deterministic per
/// `config.seed`, returns the final-epoch parameters.
pub fn train_segmenter(images: &[Volume], masks: &[Mask], config: &SegConfig) -> Result<SegmenterParams, SegError> {
    config.validate()?;
    if images.is_empty() || images.len() != masks.len() {
        return Err(SegError::EmptyDataset);
    }
    let dims = images[0].dims;
    for (i, (v, m)) in images.iter().zip(masks).enumerate() {
        if v.dims != dims || m.dims != dims {
            return Err(SegError::GridMismatch(format!("pair {i} not on grid {dims:?}")));
        }
    }
    let arch = SegArch::new(dims, config)?;
    let mut rng = crate::seed::rng_from_seed(config.seed);
    let mut params = init_segmenter(&arch, &mut rng);
    let mut opt = Adam::new(config.learning_rate, &params.set);

    let n = images.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let results = crate::exec::map_slice(chunk, |&idx| {
                soft_dice_grads(&params, &images[idx], &masks[idx])
            });
            let batch = chunk.len() as f64;
            let mut iter = results.into_iter();
            let (mut loss, mut acc) = iter.next().expect("nonempty chunk");
            for (l, grads) in iter {
                loss += l;
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (av, gv) in a.data.iter_mut().zip(g.data) {
                        *av += gv;
                    }
                }
            }
            loss /= batch;
            if !loss.is_finite() {
                return Err(SegError::NonFiniteLoss(epoch));
            }
            for g in &mut acc {
                for v in &mut g.data {
                    *v /= batch;
                }
            }
            opt.step(&mut params.set, &acc);
        }
    }
    Ok(params)
}

/// Thresholds the probability map into a binary mask (`p > threshold`).
pub fn segment(params: &SegmenterParams, volume: &Volume, threshold: f64) -> Result<Mask, SegError> {
    if volume.dims != params.arch.dims() {
        return Err(SegError::GridMismatch(format!(
            "volume {:?} vs segmenter grid {:?}",
            volume.dims,
            params.arch.dims()
        )));
    }
    let mut g = Graph::new();
    let b = bind_seg(&mut g, &params.set, false);
    let vol = volume_node(&mut g, volume);
    let probs = seg_forward(&mut g, &params.arch, &b, vol);
    let data = g.value(probs).data.iter().map(|&p| u8::from(p > threshold)).collect();
    Ok(Mask { dims: volume.dims, voxel_size_mm: volume.voxel_size_mm, data })
}

/// Dice similarity 2|A n B| / (|A| + |B|); both masks empty scores 1,
/// exactly one empty scores 0.
pub fn dice_score(pred: &Mask, truth: &Mask) -> Result<f64, SegError> {
    if pred.dims != truth.dims {
        return Err(SegError::GridMismatch(format!("{:?} vs {:?}", pred.dims, truth.dims)));
    }
    let a: usize = pred.count();
    let b: usize = truth.count();
    if a == 0 && b == 0 {
        return Ok(1.0);
    }
    if a == 0 || b == 0 {
        return Ok(0.0);
    }
    let inter = pred
        .data
        .iter()
        .zip(&truth.data)
        .filter(|(&p, &t)| p == 1 && t == 1)
        .count();
    Ok(2.0 * inter as f64 / (a + b) as f64)
}
