//! Experiment configuration: one TOML file drives the whole study.
//!
//! The master seed fans out to per-stage seeds through
//! [`crate::seed::derive_seed`]; each repeat gets its own `repeat/<r>` seed
//! first, then stages hang off that, so any stage can be re-run standalone
//! and reproduce the full run's numbers.

use crate::attack::AttackNetConfig;
use crate::gan::TrganConfig;
use crate::segmenter::SegConfig;
use crate::volume::PhantomConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    /// Phantom cases to generate.
    pub n_cases: usize,
    /// Cases withheld from GAN training.
    pub n_holdout: usize,
    /// Attack scenario size (members + non-members).
    pub attack_n: usize,
    /// Members within the attack scenario.
    pub attack_m: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self { n_cases: 16, n_holdout: 8, attack_n: 16, attack_m: 8 }
    }
}

/// Which masks accompany synthetic volumes during fidelity feature
/// extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    /// Masks predicted by the per-checkpoint segmenter (default); samples
    /// whose prediction is empty are dropped from the population.
    Predicted,
    /// The conditioning masks the volumes were generated from.
    Conditioning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub synthetic_mask_source: MaskSource,
    /// Checkpoint step for the expensive generator attack; 0 means the
    /// final step.
    pub generator_attack_step: u64,
    /// Also run the augmentation-utility experiment at the final step.
    pub utility_augmentation: bool,
    /// Real cases kept aside for the augmentation baseline segmenter.
    pub augmentation_real_count: usize,
    /// Independent repeats aggregated as mean +/- sd.
    pub repeats: u32,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            synthetic_mask_source: MaskSource::Predicted,
            generator_attack_step: 0,
            utility_augmentation: false,
            augmentation_real_count: 4,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: String,
    pub phantom: PhantomConfig,
    pub data: DataSpec,
    pub trgan: TrganConfig,
    pub segmenter: SegConfig,
    pub attack: AttackNetConfig,
    pub eval: EvalSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: "out".into(),
            phantom: PhantomConfig::default(),
            data: DataSpec::default(),
            trgan: TrganConfig::default(),
            segmenter: SegConfig::default(),
            attack: AttackNetConfig::default(),
            eval: EvalSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::stage("config", format!("{}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| ExperimentError::stage("config", format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let stage = |m: String| ExperimentError::stage("config", m);
        self.phantom.validate().map_err(|e| stage(e.to_string()))?;
        self.trgan.validate().map_err(|e| stage(e.to_string()))?;
        self.segmenter.validate().map_err(|e| stage(e.to_string()))?;
        let d = &self.data;
        if d.n_holdout == 0 || d.n_holdout >= d.n_cases {
            return Err(stage(format!("n_holdout {} out of range for {} cases", d.n_holdout, d.n_cases)));
        }
        let train = d.n_cases - d.n_holdout;
        if d.attack_m == 0 || d.attack_m >= d.attack_n {
            return Err(stage(format!("need 0 < attack_m < attack_n, got {}/{}", d.attack_m, d.attack_n)));
        }
        if d.attack_m > train {
            return Err(stage(format!("attack_m {} exceeds train size {train}", d.attack_m)));
        }
        if d.attack_n - d.attack_m > d.n_holdout {
            return Err(stage(format!(
                "attack needs {} non-members but only {} are withheld",
                d.attack_n - d.attack_m,
                d.n_holdout
            )));
        }
        if self.attack.iterations == 0 {
            return Err(stage("attack.iterations must be >= 1".into()));
        }
        if self.eval.repeats == 0 {
            return Err(stage("eval.repeats must be >= 1".into()));
        }
        if self.eval.utility_augmentation {
            let keep = self.eval.augmentation_real_count;
            if keep == 0 || keep >= train {
                return Err(stage(format!(
                    "augmentation_real_count {keep} out of range for train size {train}"
                )));
            }
        }
        Ok(())
    }

    /// Seed of one repeat's stage stream.
    pub fn repeat_seed(&self, repeat: u32) -> u64 {
        crate::seed::derive_seed(self.master_seed, &format!("repeat/{repeat}"))
    }

    /// Stage configs with seeds derived for `repeat`; these effective
    /// configs (not the file's) are what training digests.
    pub fn effective_phantom(&self, repeat: u32) -> PhantomConfig {
        let mut c = self.phantom.clone();
        c.seed = crate::seed::derive_seed(self.repeat_seed(repeat), "phantoms");
        c
    }

    pub fn effective_trgan(&self, repeat: u32) -> TrganConfig {
        let mut c = self.trgan.clone();
        c.seed = crate::seed::derive_seed(self.repeat_seed(repeat), "trgan");
        c
    }

    pub fn split_seed(&self, repeat: u32) -> u64 {
        crate::seed::derive_seed(self.repeat_seed(repeat), "split")
    }

    pub fn synth_seed(&self, repeat: u32, step: u64) -> u64 {
        crate::seed::derive_seed(self.repeat_seed(repeat), &format!("synthesize/{step}"))
    }

    pub fn segmenter_seed(&self, repeat: u32, step: u64) -> u64 {
        crate::seed::derive_seed(self.repeat_seed(repeat), &format!("segmenter/{step}"))
    }

    pub fn attack_seed(&self, repeat: u32) -> u64 {
        crate::seed::derive_seed(self.repeat_seed(repeat), "attack")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_paper_defaults_hold() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        assert_eq!(config.trgan.omega, 0.01);
        assert_eq!(config.trgan.learning_rate, 5e-5);
        assert_eq!(config.trgan.svc_interval, 5);
        assert_eq!(config.attack.iterations, 10_000);
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let text = r#"
            master_seed = 9
            output_dir = "out/test"

            [data]
            n_cases = 12
            n_holdout = 4
            attack_n = 8
            attack_m = 4

            [trgan]
            total_steps = 50
            checkpoint_interval = 25
            learning_rate = 0.001

            [eval]
            synthetic_mask_source = "conditioning"
        "#;
        let config: ExperimentConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.master_seed, 9);
        assert_eq!(config.data.n_cases, 12);
        assert_eq!(config.trgan.total_steps, 50);
        assert_eq!(config.trgan.omega, 0.01); // untouched default
        assert_eq!(config.eval.synthetic_mask_source, MaskSource::Conditioning);
    }

    #[test]
    fn invalid_counts_are_rejected() {
        let mut config = ExperimentConfig::default();
        config.data.attack_m = 20;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::default();
        config.data.n_holdout = 16;
        assert!(config.validate().is_err());
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let config = ExperimentConfig { master_seed: 5, ..Default::default() };
        let a = config.effective_trgan(0).seed;
        let b = config.effective_phantom(0).seed;
        let c = config.split_seed(0);
        assert_ne!(a, b);
        assert_ne!(b, c);
        assert_eq!(a, config.effective_trgan(0).seed);
        assert_ne!(a, config.effective_trgan(1).seed);
    }
}
