//! Deterministic tumour phantoms.
//!
//! Each phantom is a head-like ellipsoid of tissue inside background, with a
//! single brighter tumour ellipsoid placed inside it; the mask labels
//! exactly the tumour voxels. Intensities are emitted directly in [-1, 1],
//! so a phantom is already in the grid/value contract the rest of the
//! pipeline expects. Generation is a pure function of `(config.seed, index)`.

use super::{GridDims, Mask, Sample, Volume, VolumeError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("intensity range [{lo}, {hi}] invalid or outside [-1, 1] once noise {noise} is added")]
    BadIntensityRange { lo: f64, hi: f64, noise: f64 },
    #[error("tumour intensity range must lie strictly above the tissue range")]
    TumourNotHotter,
    #[error("tumour semi-axis range [{lo}, {hi}] invalid (need 1 <= lo <= hi)")]
    BadTumourAxes { lo: f64, hi: f64 },
    #[error("head semi-axis fraction range [{lo}, {hi}] invalid (need 0 < lo <= hi <= 1)")]
    BadHeadFraction { lo: f64, hi: f64 },
    #[error("tumour cannot fit inside the head region (sample index {index})")]
    TumourDoesNotFit { index: usize },
    #[error("{0}")]
    Volume(#[from] VolumeError),
}

/// Closed interval used for sampled phantom parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub lo: f64,
    pub hi: f64,
}

impl IntensityRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    fn valid_with_noise(&self, noise: f64) -> bool {
        self.lo <= self.hi && self.lo - noise >= -1.0 && self.hi + noise <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: GridDims,
    pub voxel_size_mm: [f64; 3],
    /// Head semi-axes as fractions of each half-extent, sampled per axis.
    pub head_fraction: IntensityRange,
    pub background: IntensityRange,
    pub tissue: IntensityRange,
    pub tumour: IntensityRange,
    /// Tumour semi-axes in voxels, sampled per axis.
    pub tumour_semiaxes: IntensityRange,
    /// Tumour centre offset bound, as a fraction of the head semi-axes.
    pub placement_fraction: f64,
    /// Uniform per-voxel noise amplitude added to the region level.
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: GridDims::new(16, 16, 8),
            voxel_size_mm: [3.7, 3.7, 3.7],
            head_fraction: IntensityRange::new(0.78, 0.92),
            background: IntensityRange::new(-0.95, -0.9),
            tissue: IntensityRange::new(-0.45, -0.15),
            tumour: IntensityRange::new(0.35, 0.85),
            tumour_semiaxes: IntensityRange::new(1.2, 2.6),
            placement_fraction: 0.45,
            noise_amplitude: 0.05,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let noise = self.noise_amplitude;
        for range in [&self.background, &self.tissue, &self.tumour] {
            if !(noise >= 0.0) || !range.valid_with_noise(noise) {
                return Err(PhantomError::BadIntensityRange { lo: range.lo, hi: range.hi, noise });
            }
        }
        if self.tumour.lo <= self.tissue.hi {
            return Err(PhantomError::TumourNotHotter);
        }
        if !(self.tumour_semiaxes.lo >= 1.0 && self.tumour_semiaxes.lo <= self.tumour_semiaxes.hi) {
            return Err(PhantomError::BadTumourAxes {
                lo: self.tumour_semiaxes.lo,
                hi: self.tumour_semiaxes.hi,
            });
        }
        if !(self.head_fraction.lo > 0.0
            && self.head_fraction.lo <= self.head_fraction.hi
            && self.head_fraction.hi <= 1.0)
        {
            return Err(PhantomError::BadHeadFraction {
                lo: self.head_fraction.lo,
                hi: self.head_fraction.hi,
            });
        }
        Ok(())
    }
}

/// Generates the phantom at `index`. Bit-identical for the same
/// `(config.seed, index)`; distinct indices use independent RNG streams.
pub fn generate_phantom(config: &PhantomConfig, index: usize) -> Result<Sample, PhantomError> {
    config.validate()?;
    let dims = config.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let centre = [
        (dims.width as f64 - 1.0) / 2.0,
        (dims.height as f64 - 1.0) / 2.0,
        (dims.depth as f64 - 1.0) / 2.0,
    ];
    let half = [dims.width as f64 / 2.0, dims.height as f64 / 2.0, dims.depth as f64 / 2.0];
    let head: Vec<f64> = (0..3)
        .map(|a| half[a] * config.head_fraction.sample(&mut rng))
        .collect();

    let background_level = config.background.sample(&mut rng);
    let tissue_level = config.tissue.sample(&mut rng);
    let tumour_level = config.tumour.sample(&mut rng);

    // Sufficient containment test: any tumour point p satisfies
    // |p_a - c_a| <= |d_a| + r_a, so this bound keeps the whole ellipsoid
    // inside the head.
    let fits = |radii: &[f64; 3], offset: &[f64; 3]| {
        (0..3)
            .map(|a| {
                let reach = offset[a].abs() + radii[a];
                (reach / head[a]).powi(2)
            })
            .sum::<f64>()
            <= 1.0
    };
    // a minimal centred tumour must fit, otherwise the config is broken
    let min_radii = [config.tumour_semiaxes.lo; 3];
    if !fits(&min_radii, &[0.0, 0.0, 0.0]) {
        return Err(PhantomError::TumourDoesNotFit { index });
    }
    // rejection-sample a feasible (radii, offset) pair; fall back to the
    // minimal centred tumour, which is always feasible
    let mut radii = min_radii;
    let mut offset = [0.0f64; 3];
    for _ in 0..64 {
        let mut r_try = [0.0f64; 3];
        for r in &mut r_try {
            *r = config.tumour_semiaxes.sample(&mut rng);
        }
        let mut o_try = [0.0f64; 3];
        for (a, o) in o_try.iter_mut().enumerate() {
            let bound = head[a] * config.placement_fraction;
            *o = rng.gen_range(-bound..=bound);
        }
        if fits(&r_try, &o_try) {
            radii = r_try;
            offset = o_try;
            break;
        }
    }
    let tumour_centre = [centre[0] + offset[0], centre[1] + offset[1], centre[2] + offset[2]];

    let n = dims.voxel_count();
    let mut data = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for t in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                let p = [x as f64, y as f64, t as f64];
                let in_head = (0..3)
                    .map(|a| ((p[a] - centre[a]) / head[a]).powi(2))
                    .sum::<f64>()
                    <= 1.0;
                let in_tumour = (0..3)
                    .map(|a| ((p[a] - tumour_centre[a]) / radii[a]).powi(2))
                    .sum::<f64>()
                    <= 1.0;
                let level = if in_tumour {
                    tumour_level
                } else if in_head {
                    tissue_level
                } else {
                    background_level
                };
                let noise = if config.noise_amplitude > 0.0 {
                    config.noise_amplitude * rng.gen_range(-1.0..=1.0)
                } else {
                    0.0
                };
                data.push((level + noise) as f32);
                mask.push(u8::from(in_tumour));
            }
        }
    }

    let volume = Volume::new(dims, config.voxel_size_mm, data)?;
    let mask = Mask::new(dims, config.voxel_size_mm, mask)?;
    let mut sample = Sample::new(format!("case_{index:05}"), volume, mask)?;
    sample.member = None;
    Ok(sample)
}

/// Generates phantoms `0..count` (in parallel with the `parallel` feature).
pub fn generate_population(config: &PhantomConfig, count: usize) -> Result<Vec<Sample>, PhantomError> {
    let results = crate::exec::map_indices(count, |i| generate_phantom(config, i));
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed_and_index() {
        let config = PhantomConfig { seed: 7, ..Default::default() };
        let a = generate_phantom(&config, 0).unwrap();
        let b = generate_phantom(&config, 0).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&config, 1).unwrap();
        assert_ne!(a.volume.data, c.volume.data);
    }

    #[test]
    fn zero_noise_separates_tumour_from_tissue_strictly() {
        let config = PhantomConfig { noise_amplitude: 0.0, seed: 3, ..Default::default() };
        for index in 0..20 {
            let s = generate_phantom(&config, index).unwrap();
            let mut min_tumour = f32::INFINITY;
            let mut max_tissue = f32::NEG_INFINITY;
            let bg = config.background.hi as f32;
            for (i, &v) in s.volume.data.iter().enumerate() {
                if s.mask.data[i] == 1 {
                    min_tumour = min_tumour.min(v);
                } else if v > bg {
                    max_tissue = max_tissue.max(v);
                }
            }
            assert!(min_tumour > max_tissue, "index {index}: {min_tumour} <= {max_tissue}");
        }
    }

    #[test]
    fn in_mask_mean_exceeds_out_mean_on_default_population() {
        let config = PhantomConfig { seed: 11, ..Default::default() };
        let samples = generate_population(&config, 100).unwrap();
        assert_eq!(samples.len(), 100);
        for s in &samples {
            let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0f64, 0usize, 0.0f64, 0usize);
            for (i, &v) in s.volume.data.iter().enumerate() {
                if s.mask.data[i] == 1 {
                    in_sum += f64::from(v);
                    in_n += 1;
                } else {
                    out_sum += f64::from(v);
                    out_n += 1;
                }
            }
            assert!(in_n > 0, "{}: empty mask", s.id);
            assert!(in_sum / in_n as f64 > out_sum / out_n as f64, "{}", s.id);
        }
    }

    #[test]
    fn invariants_hold_over_randomized_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let dims = GridDims::new(
                8 + 2 * rng.gen_range(0..5usize),
                8 + 2 * rng.gen_range(0..5usize),
                4 + 2 * rng.gen_range(0..3usize),
            );
            // keep a centred tumour feasible: sum_i (r / a_i)^2 <= 0.81
            let inv_sq: f64 = [dims.width, dims.height, dims.depth]
                .iter()
                .map(|&d| {
                    let a = 0.78 * d as f64 / 2.0;
                    1.0 / (a * a)
                })
                .sum();
            let hi = (0.9 / inv_sq.sqrt()).clamp(1.05, 2.5);
            let config = PhantomConfig {
                dims,
                noise_amplitude: rng.gen_range(0.0..0.05),
                tumour_semiaxes: IntensityRange::new(1.0, hi),
                seed: trial,
                ..Default::default()
            };
            let s = generate_phantom(&config, trial as usize).unwrap();
            assert!(s.volume.all_finite());
            assert!(s.volume.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
            assert!(s.mask.data.iter().all(|&m| m <= 1));
            assert!(!s.mask.is_empty());
            assert_eq!(s.volume.dims, s.mask.dims);
        }
    }

    #[test]
    fn oversized_tumour_is_a_configuration_error() {
        let config = PhantomConfig {
            tumour_semiaxes: IntensityRange::new(20.0, 30.0),
            ..Default::default()
        };
        assert!(matches!(
            generate_phantom(&config, 0),
            Err(PhantomError::TumourDoesNotFit { index: 0 })
        ));
    }

    #[test]
    fn tumour_must_be_hotter_than_tissue() {
        let config = PhantomConfig {
            tumour: IntensityRange::new(-0.5, -0.2),
            ..Default::default()
        };
        assert!(matches!(generate_phantom(&config, 0), Err(PhantomError::TumourNotHotter)));
    }
}
