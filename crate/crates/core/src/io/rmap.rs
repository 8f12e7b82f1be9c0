//! Sample tensor files.

use std::path::Path;

use super::{read_file, RmapHeader};
use crate::error::{Error, Result};
use crate::simulator::{RadioMapSample, Standardization};

/// Encodes a sample in dBm together with its dataset's standardization.
pub fn encode_rmap(sample: &RadioMapSample, stats: Standardization) -> Vec<u8> {
    let mut out = Vec::with_capacity(super::HEADER_LEN + 4 * sample.phi.len());
    RmapHeader::new(sample.shape, stats).write(&mut out);
    for &v in &sample.phi {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes a sample file. The tensor is returned in the stored units.
pub fn decode_rmap(bytes: &[u8]) -> Result<(RmapHeader, RadioMapSample)> {
    let (header, payload) = RmapHeader::read(bytes)?;
    let n = header.shape.len();
    if n.checked_mul(4) != Some(payload.len()) {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {} for {:?}",
            payload.len(),
            n.saturating_mul(4),
            header.shape.dims()
        )));
    }
    let mut phi = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at voxel {}", phi.len())));
        }
        phi.push(v as f64);
    }
    let mut sample = RadioMapSample::new(header.shape, phi)?;
    sample.units_dbm = true;
    Ok((header, sample))
}

pub fn write_rmap(path: &Path, sample: &RadioMapSample, stats: Standardization) -> Result<()> {
    std::fs::write(path, encode_rmap(sample, stats))?;
    Ok(())
}

pub fn read_rmap(path: &Path) -> Result<(RmapHeader, RadioMapSample)> {
    decode_rmap(&read_file(path)?)
}
