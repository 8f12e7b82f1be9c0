//! On-disk formats: sample tensors, mask bitmaps, checkpoints and dataset
//! directories.
//!
//! Sample and mask files share one little-endian header:
//!
//! ```text
//! "RMAP" | version u16 | n_x n_y n_t n_f u32 | mean f64 | std f64
//! ```
//!
//! A sample file continues with the tensor as `f32` in row-major
//! `(x, y, t, f)` order. A mask file continues with one bit per voxel in the
//! same order, least significant bit first, `1` for visible.

pub mod checkpoint;
pub mod dataset;
pub mod mask;
pub mod rmap;

use crate::error::{Error, Result};
use crate::shape::MapShape;
use crate::simulator::Standardization;

pub const RMAP_MAGIC: &[u8; 4] = b"RMAP";
pub const RMAP_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 8 + 8;

/// Shared header of sample and mask files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmapHeader {
    pub version: u16,
    pub shape: MapShape,
    pub stats: Standardization,
}

impl RmapHeader {
    pub fn new(shape: MapShape, stats: Standardization) -> Self {
        Self {
            version: RMAP_VERSION,
            shape,
            stats,
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(RMAP_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        for d in self.shape.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.stats.mean.to_le_bytes());
        out.extend_from_slice(&self.stats.std.to_le_bytes());
    }

    /// Parses the header and returns it with the remaining payload.
    pub fn read(bytes: &[u8]) -> Result<(Self, &[u8])> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file has {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != RMAP_MAGIC {
            return Err(Error::Format("bad magic, expected RMAP".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != RMAP_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 4];
        for (k, d) in dims.iter_mut().enumerate() {
            let o = 6 + 4 * k;
            *d = u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        }
        if dims.contains(&0) {
            return Err(Error::Format(format!("zero dimension in {dims:?}")));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(Error::Format(format!("dimensions {dims:?} overflow")));
        }
        let mean = f64::from_le_bytes(bytes[22..30].try_into().expect("8 bytes"));
        let std = f64::from_le_bytes(bytes[30..38].try_into().expect("8 bytes"));
        if !mean.is_finite() || !(std > 0.0 && std.is_finite()) {
            return Err(Error::Format(format!("invalid standardization mean={mean} std={std}")));
        }
        let header = Self {
            version,
            shape: MapShape::from_array(dims),
            stats: Standardization { mean, std },
        };
        Ok((header, &bytes[HEADER_LEN..]))
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
