//! Voxel grids and the samples every pipeline stage consumes.
//!
//! A [`Volume`] is a 3-D scalar grid stored slice-major: x varies fastest,
//! then y, then the transversal slice index t. The slice axis doubles as the
//! sequence axis of the generator, so `depth` equals the sequence length T.

mod io;
mod phantom;
mod split;

pub use io::{load_mask_file, load_sample, load_volume_file, save_sample, write_mask_file, write_volume_file};
pub use phantom::{generate_phantom, generate_population, IntensityRange, PhantomConfig};
pub use split::{split_dataset, DatasetSplit};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("normalize: invalid range lo={lo} hi={hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("normalize: value {value} at voxel {index} outside [{lo}, {hi}]")]
    ValueOutOfRange { value: f64, index: usize, lo: f64, hi: f64 },
    #[error("bad magic in volume header: expected \"vol1\", got {0:?}")]
    BadMagic(String),
    #[error("malformed volume header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} values, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("payload kind mismatch: expected {expected}, file says {got}")]
    KindMismatch { expected: &'static str, got: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Grid extents in voxels: `(width, height, depth)` with depth = slice count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
}

impl GridDims {
    pub fn new(width: usize, height: usize, depth: usize) -> Self {
        Self { width, height, depth }
    }

    pub fn voxel_count(&self) -> usize {
        self.width * self.height * self.depth
    }

    /// Slice-major linear index: x fastest, then y, then slice t.
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        (t * self.height + y) * self.width + x
    }
}

/// A 3-D scalar grid. After normalization every value lies in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: GridDims,
    /// Millimetres per voxel along (x, y, t).
    pub voxel_size_mm: [f64; 3],
    /// Scalar per voxel, slice-major.
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: GridDims, voxel_size_mm: [f64; 3], data: Vec<f32>) -> Result<Self, VolumeError> {
        if data.len() != dims.voxel_count() {
            return Err(VolumeError::DimensionMismatch(format!(
                "volume payload has {} values for a {}x{}x{} grid",
                data.len(),
                dims.width,
                dims.height,
                dims.depth
            )));
        }
        Ok(Self { dims, voxel_size_mm, data })
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> f32 {
        self.data[self.dims.index(x, y, t)]
    }

    /// Volume of one voxel in mm^3.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.voxel_size_mm[0] * self.voxel_size_mm[1] * self.voxel_size_mm[2]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Binary labelling on the same grid as its paired [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub dims: GridDims,
    pub voxel_size_mm: [f64; 3],
    /// 0 or 1 per voxel, slice-major.
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(dims: GridDims, voxel_size_mm: [f64; 3], data: Vec<u8>) -> Result<Self, VolumeError> {
        if data.len() != dims.voxel_count() {
            return Err(VolumeError::DimensionMismatch(format!(
                "mask payload has {} values for a {}x{}x{} grid",
                data.len(),
                dims.width,
                dims.height,
                dims.depth
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(VolumeError::DimensionMismatch(format!("mask value {v} is not binary")));
        }
        Ok(Self { dims, voxel_size_mm, data })
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> u8 {
        self.data[self.dims.index(x, y, t)]
    }

    /// Number of labelled voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// One case: an image, its tumour mask and (once assigned) membership truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub volume: Volume,
    pub mask: Mask,
    /// Membership ground truth; `None` until a split assigns it.
    pub member: Option<bool>,
}

impl Sample {
    pub fn new(id: impl Into<String>, volume: Volume, mask: Mask) -> Result<Self, VolumeError> {
        if volume.dims != mask.dims {
            return Err(VolumeError::DimensionMismatch(format!(
                "volume grid {:?} != mask grid {:?}",
                volume.dims, mask.dims
            )));
        }
        Ok(Self { id: id.into(), volume, mask, member: None })
    }
}

/// Affine map of `[lo, hi]` onto [-1, 1].
///
/// Values outside `[lo, hi]` are a caller bug and surface as an error; there
/// is no silent clamping.
pub fn normalize(volume: &Volume, lo: f64, hi: f64) -> Result<Volume, VolumeError> {
    if !(lo < hi) {
        return Err(VolumeError::InvalidRange { lo, hi });
    }
    let scale = 2.0 / (hi - lo);
    let mut data = Vec::with_capacity(volume.data.len());
    for (i, &v) in volume.data.iter().enumerate() {
        let v = f64::from(v);
        if v < lo || v > hi {
            return Err(VolumeError::ValueOutOfRange { value: v, index: i, lo, hi });
        }
        data.push((-1.0 + (v - lo) * scale) as f32);
    }
    Ok(Volume { dims: volume.dims, voxel_size_mm: volume.voxel_size_mm, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume_from(values: &[f32]) -> Volume {
        let dims = GridDims::new(values.len(), 1, 1);
        Volume::new(dims, [1.0; 3], values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_maps_endpoints_and_midpoint() {
        let v = volume_from(&[0.0, 5.0, 10.0]);
        let n = normalize(&v, 0.0, 10.0).unwrap();
        assert_eq!(n.data, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_identity_on_unit_range() {
        let v = volume_from(&[-1.0, -0.25, 0.5, 1.0]);
        let n = normalize(&v, -1.0, 1.0).unwrap();
        assert_eq!(n.data, v.data);
    }

    #[test]
    fn normalize_affine_arithmetic() {
        let v = volume_from(&[2.0, 3.0]);
        let n = normalize(&v, 2.0, 4.0).unwrap();
        assert_eq!(n.data, vec![-1.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_bad_range_and_out_of_range_values() {
        let v = volume_from(&[0.0]);
        assert!(matches!(normalize(&v, 1.0, 1.0), Err(VolumeError::InvalidRange { .. })));
        assert!(matches!(normalize(&v, 2.0, 1.0), Err(VolumeError::InvalidRange { .. })));
        let v = volume_from(&[0.0, 11.0]);
        assert!(matches!(
            normalize(&v, 0.0, 10.0),
            Err(VolumeError::ValueOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn sample_requires_matching_grids() {
        let vol = volume_from(&[0.0, 0.5]);
        let mask = Mask::new(GridDims::new(1, 1, 1), [1.0; 3], vec![1]).unwrap();
        assert!(Sample::new("s", vol, mask).is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(Mask::new(GridDims::new(1, 1, 1), [1.0; 3], vec![2]).is_err());
    }

    #[test]
    fn slice_major_indexing() {
        let dims = GridDims::new(3, 2, 2);
        // x fastest, then y, then t
        assert_eq!(dims.index(0, 0, 0), 0);
        assert_eq!(dims.index(1, 0, 0), 1);
        assert_eq!(dims.index(0, 1, 0), 3);
        assert_eq!(dims.index(0, 0, 1), 6);
    }
}
