//! The conditional slice-sequence GAN.
//!
//! The generator is split in two: a temporal generator expands the latent
//! `z0` into one latent `z1(t)` per slice, and a slice generator renders
//! each slice from `(z0, z1(t))` plus an encoding of that slice's tumour
//! mask. The discriminator consumes the mask-weighted two-channel volume
//! `((1-omega) * image, omega * mask)` and emits a score in [-1, 1].
//! Training is Wasserstein-style with RMSProp and singular value clipping
//! of the discriminator every few steps.

mod model;
mod svc;
mod train;

pub use model::{
    discriminate, generate_volume, init_discriminator, init_generator, sample_latent, synthesize,
    temporal_generate, weighted_input,
};
pub(crate) use model::{bind, generator_forward, mask_to_tensor, volume_to_tensor};
pub use svc::{max_weight_singular_value, singular_value_clip};
pub use train::{train_trgan, train_trgan_with, TrainHooks};

use crate::checkpoint::{
    read_param_file, write_param_file, CheckpointError, RngStateSer,
};
use crate::nn::ParamSet;
use crate::volume::GridDims;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("latent seed supplies {seed} slices but the mask depth is {mask}")]
    DepthMismatch { seed: usize, mask: usize },
    #[error("non-finite {part} loss at step {step}")]
    NonFiniteLoss { step: u64, part: &'static str },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

/// Training/model configuration. Paper-scale values are the defaults where
/// the original recipe speaks (omega, learning rate, clipping interval);
/// sizes default to desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrganConfig {
    /// Input latent dimension.
    pub d0: usize,
    /// Per-slice latent dimension.
    pub d1: usize,
    /// Mask weighting in the discriminator input, in (0, 1).
    pub omega: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Steps between singular value clippings.
    pub svc_interval: u64,
    pub total_steps: u64,
    pub checkpoint_interval: u64,
    /// Hidden width of the temporal generator stages.
    pub g0_hidden: usize,
    /// Channels of the slice generator's projected feature map.
    pub g1_base_channels: usize,
    /// Channels after the first upsampling stage.
    pub g1_mid_channels: usize,
    /// Channels of the mask encoder.
    pub mask_channels: usize,
    /// Channel width per discriminator stage; the length fixes the number
    /// of downsampling stages.
    pub disc_channels: Vec<usize>,
    /// Also clip the generator's singular values (off in the original
    /// recipe, which constrains only the critic).
    pub svc_on_generator: bool,
    pub seed: u64,
}

impl Default for TrganConfig {
    fn default() -> Self {
        Self {
            d0: 32,
            d1: 32,
            omega: 0.01,
            learning_rate: 5e-5,
            batch_size: 8,
            svc_interval: 5,
            total_steps: 500,
            checkpoint_interval: 100,
            g0_hidden: 32,
            g1_base_channels: 16,
            g1_mid_channels: 16,
            mask_channels: 8,
            disc_channels: vec![16, 32, 32],
            svc_on_generator: false,
            seed: 0,
        }
    }
}

impl TrganConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(GanError::Config(format!("omega {} not in (0, 1)", self.omega)));
        }
        if self.svc_interval == 0 || self.checkpoint_interval == 0 || self.total_steps == 0 {
            return Err(GanError::Config("intervals and total_steps must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(GanError::Config("learning_rate and batch_size must be positive".into()));
        }
        if self.d0 == 0 || self.d1 == 0 || self.disc_channels.is_empty() {
            return Err(GanError::Config("latent dims and disc_channels must be nonempty".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding; checkpoints carry it so
    /// evaluation refuses silently drifted configs.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        crate::nn::init::hex_string(&hasher.finalize())
    }
}

/// Concrete layer plan for one grid size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanArch {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub d0: usize,
    pub d1: usize,
    pub g0_hidden: usize,
    pub g0_stages: usize,
    pub g1_base_channels: usize,
    pub g1_mid_channels: usize,
    pub mask_channels: usize,
    pub disc_channels: Vec<usize>,
}

impl GanArch {
    pub fn new(dims: GridDims, config: &TrganConfig) -> Result<Self, GanError> {
        config.validate()?;
        let t = dims.depth;
        if t < 2 || !t.is_power_of_two() {
            return Err(GanError::Config(format!("depth {t} must be a power of two >= 2")));
        }
        for (axis, d) in [("width", dims.width), ("height", dims.height)] {
            if d % 4 != 0 || d < 4 {
                return Err(GanError::Config(format!("{axis} {d} must be a multiple of 4")));
            }
        }
        // every discriminator stage halves (t, h, w); dims must stay even
        let mut cur = [t, dims.height, dims.width];
        for (i, _) in config.disc_channels.iter().enumerate() {
            for d in &mut cur {
                if *d < 2 || *d % 2 != 0 {
                    return Err(GanError::Config(format!(
                        "discriminator stage {i} cannot halve dims {cur:?}"
                    )));
                }
                *d /= 2;
            }
        }
        Ok(Self {
            width: dims.width,
            height: dims.height,
            depth: t,
            d0: config.d0,
            d1: config.d1,
            g0_hidden: config.g0_hidden,
            g0_stages: t.trailing_zeros() as usize,
            g1_base_channels: config.g1_base_channels,
            g1_mid_channels: config.g1_mid_channels,
            mask_channels: config.mask_channels,
            disc_channels: config.disc_channels.clone(),
        })
    }

    pub fn dims(&self) -> GridDims {
        GridDims::new(self.width, self.height, self.depth)
    }

    /// Flattened size entering the discriminator head.
    pub fn disc_flat(&self) -> usize {
        let n = self.disc_channels.len() as u32;
        let c = *self.disc_channels.last().unwrap();
        c * (self.depth >> n) * (self.height >> n) * (self.width >> n)
    }
}

/// The `(z0, z1(1..T))` pair that drives generation. `z1` is produced from
/// `z0` by the temporal generator; [`sample_latent`] leaves it empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeed {
    pub z0: Vec<f64>,
    pub z1: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub arch: GanArch,
    pub set: ParamSet,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    pub arch: GanArch,
    pub set: ParamSet,
}

/// Generator + discriminator frozen at one training step.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub config_digest: String,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub rng: RngStateSer,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), GanError> {
        let arch = serde_json::to_value(&self.generator.arch)
            .map_err(|e| GanError::Checkpoint(CheckpointError::BadManifest(e.to_string())))?;
        write_param_file(
            path,
            "gan",
            self.step,
            &self.config_digest,
            arch,
            Some(self.rng.clone()),
            &[("generator", &self.generator.set), ("discriminator", &self.discriminator.set)],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GanError> {
        let file = read_param_file(path)?;
        if file.model != "gan" {
            return Err(GanError::Checkpoint(CheckpointError::ModelMismatch {
                expected: "gan".into(),
                got: file.model,
            }));
        }
        let arch: GanArch = serde_json::from_value(file.arch)
            .map_err(|e| GanError::Checkpoint(CheckpointError::BadManifest(e.to_string())))?;
        let mut generator = None;
        let mut discriminator = None;
        for (group, set) in file.groups {
            match group.as_str() {
                "generator" => generator = Some(GeneratorParams { arch: arch.clone(), set }),
                "discriminator" => discriminator = Some(DiscriminatorParams { arch: arch.clone(), set }),
                other => {
                    return Err(GanError::Checkpoint(CheckpointError::BadManifest(format!(
                        "unknown group {other:?}"
                    ))))
                }
            }
        }
        let generator = generator
            .ok_or_else(|| GanError::Checkpoint(CheckpointError::BadManifest("no generator group".into())))?;
        let discriminator = discriminator.ok_or_else(|| {
            GanError::Checkpoint(CheckpointError::BadManifest("no discriminator group".into()))
        })?;
        let rng = file.rng.ok_or_else(|| {
            GanError::Checkpoint(CheckpointError::BadManifest("gan checkpoint lacks rng state".into()))
        })?;
        Ok(Self {
            step: file.step,
            config_digest: file.config_digest,
            generator,
            discriminator,
            rng,
        })
    }
}
