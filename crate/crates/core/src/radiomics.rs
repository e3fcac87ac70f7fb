//! Radiomic features over segmented tumours and population fidelity scores.
//!
//! Feature definitions are pinned bit-exactly so an independently coded
//! extractor can serve as a decisive oracle:
//!
//! * in-mask intensities quantized to `levels` equal-width bins between the
//!   in-mask min and max (degenerate min = max puts all mass at (0,0));
//! * co-occurrences over the 13 unique unit-distance 3-D offsets, both
//!   voxels inside the mask, accumulated symmetrically, normalized to sum 1;
//! * SUV-peak is the mean of the 3x3x3 neighbourhood of the max voxel,
//!   clipped to the volume bounds;
//! * GLCM features use 8 levels: energy, entropy (0*log 0 = 0, base-2 log),
//!   homogeneity sum p/(1+|i-j|).

use crate::volume::{Mask, Volume};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadiomicsError {
    #[error("mask is empty; features are undefined")]
    EmptyMask,
    #[error("volume and mask grids differ")]
    GridMismatch,
    #[error("glcm needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("need at least 3 feature vectors, got {0}")]
    TooFewVectors(usize),
    #[error("feature '{0}' is constant across the population; correlation undefined")]
    DegenerateFeature(&'static str),
}

/// The 13 unique unit-distance 3-D offsets, as `(dx, dy, dt)`.
pub const UNIT_OFFSETS: [(i64, i64, i64); 13] = [
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 1, 0),
    (1, -1, 0),
    (1, 0, 1),
    (1, 0, -1),
    (0, 1, 1),
    (0, 1, -1),
    (1, 1, 1),
    (1, 1, -1),
    (1, -1, 1),
    (1, -1, -1),
];

/// Canonical feature order used by every table and correlation matrix.
pub const FEATURE_NAMES: [&str; 8] = [
    "mtv",
    "suv_max",
    "suv_mean",
    "suv_peak",
    "tlg",
    "glcm_energy",
    "glcm_entropy",
    "glcm_homogeneity",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiomicVector {
    /// Metabolic tumour volume in mm^3.
    pub mtv: f64,
    pub suv_max: f64,
    pub suv_mean: f64,
    pub suv_peak: f64,
    /// Total lesion glycolysis: mtv * suv_mean.
    pub tlg: f64,
    pub glcm_energy: f64,
    pub glcm_entropy: f64,
    pub glcm_homogeneity: f64,
}

impl RadiomicVector {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.mtv,
            self.suv_max,
            self.suv_mean,
            self.suv_peak,
            self.tlg,
            self.glcm_energy,
            self.glcm_entropy,
            self.glcm_homogeneity,
        ]
    }
}

/// Symmetric 8x8 Pearson matrix over [`FEATURE_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub values: [[f64; 8]; 8],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub correlation_accuracy: f64,
    pub correlation_mse: f64,
}

/// Normalized symmetric grey-level co-occurrence matrix.
pub fn glcm(
    volume: &Volume,
    mask: &Mask,
    levels: usize,
    offsets: &[(i64, i64, i64)],
) -> Result<Vec<Vec<f64>>, RadiomicsError> {
    if volume.dims != mask.dims {
        return Err(RadiomicsError::GridMismatch);
    }
    if levels < 2 {
        return Err(RadiomicsError::TooFewLevels(levels));
    }
    if mask.is_empty() {
        return Err(RadiomicsError::EmptyMask);
    }
    let dims = volume.dims;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &m) in mask.data.iter().enumerate() {
        if m == 1 {
            let v = f64::from(volume.data[i]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }

    let quantize = |v: f64| -> usize {
        if hi == lo {
            0
        } else {
            let bin = ((v - lo) / (hi - lo) * levels as f64) as usize;
            bin.min(levels - 1)
        }
    };

    let mut counts = vec![vec![0.0f64; levels]; levels];
    let mut total = 0.0f64;
    for t in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                if mask.get(x, y, t) != 1 {
                    continue;
                }
                let a = quantize(f64::from(volume.get(x, y, t)));
                for &(dx, dy, dt) in offsets {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    let nt = t as i64 + dt;
                    if nx < 0
                        || ny < 0
                        || nt < 0
                        || nx >= dims.width as i64
                        || ny >= dims.height as i64
                        || nt >= dims.depth as i64
                    {
                        continue;
                    }
                    let (nx, ny, nt) = (nx as usize, ny as usize, nt as usize);
                    if mask.get(nx, ny, nt) != 1 {
                        continue;
                    }
                    let b = quantize(f64::from(volume.get(nx, ny, nt)));
                    counts[a][b] += 1.0;
                    counts[b][a] += 1.0;
                    total += 2.0;
                }
            }
        }
    }
    if total == 0.0 {
        // isolated voxels with no in-mask neighbours: all mass at (0,0),
        // same convention as the degenerate single-level case
        counts[0][0] = 1.0;
        return Ok(counts);
    }
    for row in &mut counts {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(counts)
}

/// The eight features over one segmented tumour.
pub fn radiomic_features(volume: &Volume, mask: &Mask) -> Result<RadiomicVector, RadiomicsError> {
    if volume.dims != mask.dims {
        return Err(RadiomicsError::GridMismatch);
    }
    if mask.is_empty() {
        return Err(RadiomicsError::EmptyMask);
    }
    let dims = volume.dims;
    let voxel_volume = volume.voxel_volume_mm3();

    let mut count = 0usize;
    let mut sum = 0.0f64;
    let mut max = f64::NEG_INFINITY;
    let mut max_pos = (0usize, 0usize, 0usize);
    for t in 0..dims.depth {
        for y in 0..dims.height {
            for x in 0..dims.width {
                if mask.get(x, y, t) != 1 {
                    continue;
                }
                let v = f64::from(volume.get(x, y, t));
                count += 1;
                sum += v;
                if v > max {
                    max = v;
                    max_pos = (x, y, t);
                }
            }
        }
    }
    let mtv = count as f64 * voxel_volume;
    let suv_mean = sum / count as f64;
    let suv_max = max;

    // 3x3x3 neighbourhood of the max voxel, clipped to the grid.
    let mut peak_sum = 0.0;
    let mut peak_n = 0usize;
    for dt in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nx = max_pos.0 as i64 + dx;
                let ny = max_pos.1 as i64 + dy;
                let nt = max_pos.2 as i64 + dt;
                if nx < 0
                    || ny < 0
                    || nt < 0
                    || nx >= dims.width as i64
                    || ny >= dims.height as i64
                    || nt >= dims.depth as i64
                {
                    continue;
                }
                peak_sum += f64::from(volume.get(nx as usize, ny as usize, nt as usize));
                peak_n += 1;
            }
        }
    }
    let suv_peak = peak_sum / peak_n as f64;

    let matrix = glcm(volume, mask, 8, &UNIT_OFFSETS)?;
    let mut energy = 0.0;
    let mut entropy = 0.0;
    let mut homogeneity = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            energy += p * p;
            if p > 0.0 {
                entropy -= p * p.log2();
            }
            homogeneity += p / (1.0 + (i as f64 - j as f64).abs());
        }
    }

    Ok(RadiomicVector {
        mtv,
        suv_max,
        suv_mean,
        suv_peak,
        tlg: mtv * suv_mean,
        glcm_energy: energy,
        glcm_entropy: entropy,
        glcm_homogeneity: homogeneity,
    })
}

/// Pearson correlation for every unordered feature pair.
pub fn feature_correlations(vectors: &[RadiomicVector]) -> Result<CorrelationMatrix, RadiomicsError> {
    if vectors.len() < 3 {
        return Err(RadiomicsError::TooFewVectors(vectors.len()));
    }
    let n = vectors.len() as f64;
    let columns: Vec<Vec<f64>> = (0..8)
        .map(|f| vectors.iter().map(|v| v.as_array()[f]).collect())
        .collect();
    let means: Vec<f64> = columns.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(8);
    for (f, col) in columns.iter().enumerate() {
        let c: Vec<f64> = col.iter().map(|v| v - means[f]).collect();
        if c.iter().all(|&v| v == 0.0) {
            return Err(RadiomicsError::DegenerateFeature(FEATURE_NAMES[f]));
        }
        centered.push(c);
    }
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut values = [[0.0f64; 8]; 8];
    for i in 0..8 {
        values[i][i] = 1.0;
        for j in (i + 1)..8 {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = dot / (norms[i] * norms[j]);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { values })
}

/// Mean squared difference over the 28 unordered off-diagonal pairs.
pub fn correlation_mse(real: &CorrelationMatrix, synthetic: &CorrelationMatrix) -> f64 {
    let mut sum = 0.0;
    for i in 0..8 {
        for j in (i + 1)..8 {
            let d = real.values[i][j] - synthetic.values[i][j];
            sum += d * d;
        }
    }
    sum / 28.0
}

/// Index of the 5-bin partition of [-1, 1] with edges
/// -1, -0.6, -0.2, 0.2, 0.6, 1; bins are right-closed.
fn correlation_bin(c: f64) -> usize {
    if c <= -0.6 {
        0
    } else if c <= -0.2 {
        1
    } else if c <= 0.2 {
        2
    } else if c <= 0.6 {
        3
    } else {
        4
    }
}

/// Fraction of the 28 pairs whose synthetic coefficient falls in the same
/// bin as the real coefficient.
pub fn correlation_accuracy(real: &CorrelationMatrix, synthetic: &CorrelationMatrix) -> f64 {
    let mut hits = 0usize;
    for i in 0..8 {
        for j in (i + 1)..8 {
            if correlation_bin(real.values[i][j]) == correlation_bin(synthetic.values[i][j]) {
                hits += 1;
            }
        }
    }
    hits as f64 / 28.0
}

/// Computes [`FidelityScore`] from two feature populations.
pub fn fidelity_score(
    real: &[RadiomicVector],
    synthetic: &[RadiomicVector],
) -> Result<FidelityScore, RadiomicsError> {
    let real_corr = feature_correlations(real)?;
    let syn_corr = feature_correlations(synthetic)?;
    Ok(FidelityScore {
        correlation_accuracy: correlation_accuracy(&real_corr, &syn_corr),
        correlation_mse: correlation_mse(&real_corr, &syn_corr),
    })
}
