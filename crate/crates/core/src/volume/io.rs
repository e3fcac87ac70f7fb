//! The `vol1` on-disk format.
//!
//! One UTF-8 JSON header line terminated by `\n`:
//!
//! ```text
//! {"magic":"vol1","dims":[W,H,D],"voxel_size_mm":[x,y,z],"kind":"volume"}
//! ```
//!
//! followed by exactly W*H*D payload values in slice-major order (x fastest,
//! then y, then slice t): little-endian 32-bit floats for `kind:"volume"`,
//! 8-bit unsigned integers for `kind:"mask"`.
//!
//! A [`Sample`] is stored as a `<stem>.volume.vol1` / `<stem>.mask.vol1`
//! pair; the sample id is the stem's file name. Membership truth is an
//! experiment-level attribute and is not part of the image files.

use super::{GridDims, Mask, Sample, Volume, VolumeError};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &str = "vol1";

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    kind: String,
}

fn write_header<W: Write>(w: &mut W, dims: GridDims, voxel_size_mm: [f64; 3], kind: &str) -> Result<(), VolumeError> {
    let header = Header {
        magic: MAGIC.to_string(),
        dims: [dims.width, dims.height, dims.depth],
        voxel_size_mm,
        kind: kind.to_string(),
    };
    let line = serde_json::to_string(&header).map_err(|e| VolumeError::BadHeader(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Header, VolumeError> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(VolumeError::BadHeader("missing newline after header".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(VolumeError::BadHeader("header line exceeds 4096 bytes".into()));
        }
    }
    let text = String::from_utf8(line).map_err(|e| VolumeError::BadHeader(e.to_string()))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| VolumeError::BadHeader(e.to_string()))?;
    if header.magic != MAGIC {
        return Err(VolumeError::BadMagic(header.magic));
    }
    if header.dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::BadHeader(format!("zero-sized dims {:?}", header.dims)));
    }
    Ok(header)
}

/// Writes a scalar volume as `kind:"volume"` with an f32 payload.
pub fn write_volume_file(path: &Path, volume: &Volume) -> Result<(), VolumeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, volume.dims, volume.voxel_size_mm, "volume")?;
    for &v in &volume.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a binary mask as `kind:"mask"` with a u8 payload.
pub fn write_mask_file(path: &Path, mask: &Mask) -> Result<(), VolumeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, mask.dims, mask.voxel_size_mm, "mask")?;
    w.write_all(&mask.data)?;
    w.flush()?;
    Ok(())
}

/// Reads a `kind:"volume"` file.
pub fn load_volume_file(path: &Path) -> Result<Volume, VolumeError> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    if header.kind != "volume" {
        return Err(VolumeError::KindMismatch { expected: "volume", got: header.kind });
    }
    let dims = GridDims::new(header.dims[0], header.dims[1], header.dims[2]);
    let expected = dims.voxel_count();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < expected * 4 {
        return Err(VolumeError::TruncatedPayload { expected, got: bytes.len() / 4 });
    }
    if bytes.len() > expected * 4 {
        return Err(VolumeError::BadHeader(format!(
            "payload has {} trailing bytes beyond {} values",
            bytes.len() - expected * 4,
            expected
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(dims, header.voxel_size_mm, data)
}

/// Reads a `kind:"mask"` file.
pub fn load_mask_file(path: &Path) -> Result<Mask, VolumeError> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    if header.kind != "mask" {
        return Err(VolumeError::KindMismatch { expected: "mask", got: header.kind });
    }
    let dims = GridDims::new(header.dims[0], header.dims[1], header.dims[2]);
    let expected = dims.voxel_count();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < expected {
        return Err(VolumeError::TruncatedPayload { expected, got: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(VolumeError::BadHeader(format!(
            "payload has {} trailing bytes beyond {} values",
            bytes.len() - expected,
            expected
        )));
    }
    Mask::new(dims, header.voxel_size_mm, bytes)
}

fn sample_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let mut vol = stem.as_os_str().to_owned();
    vol.push(".volume.vol1");
    let mut mask = stem.as_os_str().to_owned();
    mask.push(".mask.vol1");
    (PathBuf::from(vol), PathBuf::from(mask))
}

/// Saves a sample as a `<stem>.volume.vol1` / `<stem>.mask.vol1` pair.
pub fn save_sample(sample: &Sample, stem: &Path) -> Result<(), VolumeError> {
    let (vol_path, mask_path) = sample_paths(stem);
    write_volume_file(&vol_path, &sample.volume)?;
    write_mask_file(&mask_path, &sample.mask)?;
    Ok(())
}

/// Loads a sample pair saved by [`save_sample`]; the id is the stem's file
/// name and membership truth is `None`.
pub fn load_sample(stem: &Path) -> Result<Sample, VolumeError> {
    let (vol_path, mask_path) = sample_paths(stem);
    let volume = load_volume_file(&vol_path)?;
    let mask = load_mask_file(&mask_path)?;
    let id = stem
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Sample::new(id, volume, mask)
}
