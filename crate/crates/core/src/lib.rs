//! Workbench for studying privacy leakage in a conditional volumetric GAN.

pub mod attack;
pub mod checkpoint;
pub mod exec;
pub mod experiment;
pub mod gan;
pub mod nn;
pub mod metrics;
pub mod radiomics;
pub mod seed;
pub mod segmenter;
pub mod volume;
