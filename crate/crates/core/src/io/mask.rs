//! Visibility bitmap files.

use std::path::Path;

use super::{read_file, RmapHeader};
use crate::error::{Error, Result};
use crate::masking::MaskPartition;
use crate::simulator::Standardization;

pub fn encode_mask(mask: &MaskPartition) -> Vec<u8> {
    let n = mask.shape.len();
    let mut out = Vec::with_capacity(super::HEADER_LEN + n.div_ceil(8));
    RmapHeader::new(mask.shape, Standardization::IDENTITY).write(&mut out);
    let mut bits = vec![0u8; n.div_ceil(8)];
    for &i in &mask.visible {
        bits[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bits);
    out
}

/// Decodes a mask file. The header must carry the identity
/// standardization and padding bits past the last voxel must be zero.
pub fn decode_mask(bytes: &[u8]) -> Result<MaskPartition> {
    let (header, payload) = RmapHeader::read(bytes)?;
    if header.stats != Standardization::IDENTITY {
        return Err(Error::Format(format!(
            "mask header must store mean 0 and std 1, found mean={} std={}",
            header.stats.mean, header.stats.std
        )));
    }
    let n = header.shape.len();
    if payload.len() != n.div_ceil(8) {
        return Err(Error::Format(format!(
            "bitmap has {} bytes, expected {} for {:?}",
            payload.len(),
            n.div_ceil(8),
            header.shape.dims()
        )));
    }
    if n % 8 != 0 && payload[n / 8] >> (n % 8) != 0 {
        return Err(Error::Format("nonzero padding bits in bitmap".into()));
    }
    let flags: Vec<bool> = (0..n).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
    MaskPartition::from_visibility(header.shape, &flags)
}

pub fn write_mask(path: &Path, mask: &MaskPartition) -> Result<()> {
    std::fs::write(path, encode_mask(mask))?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<MaskPartition> {
    decode_mask(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::MaskStrategy;
    use crate::shape::MapShape;

    #[test]
    fn roundtrip_bit_order() {
        let shape = MapShape::new(3, 1, 1, 3);
        let mask = MaskPartition::from_fn(shape, MaskStrategy::Custom, |i| i == 0 || i == 8);
        let bytes = encode_mask(&mask);
        assert_eq!(&bytes[38..], &[0b0000_0001, 0b0000_0001]);
        let back = decode_mask(&bytes).unwrap();
        assert_eq!(back.visible, vec![0, 8]);
        assert_eq!(back.masked.len(), 7);
    }

    #[test]
    fn rejects_padding_and_length() {
        let shape = MapShape::new(3, 1, 1, 3);
        let mask = MaskPartition::from_fn(shape, MaskStrategy::Custom, |i| i < 4);
        let mut bytes = encode_mask(&mask);
        *bytes.last_mut().unwrap() |= 0b1000_0000;
        assert!(decode_mask(&bytes).is_err());
        bytes.push(0);
        assert!(decode_mask(&bytes).is_err());
    }

    #[test]
    fn rejects_non_identity_header_stats() {
        let shape = MapShape::new(2, 2, 1, 1);
        let mask = MaskPartition::from_fn(shape, MaskStrategy::Custom, |i| i == 1);
        let mut bytes = encode_mask(&mask);
        bytes[30..38].copy_from_slice(&2.0f64.to_le_bytes());
        assert!(decode_mask(&bytes).is_err());
    }
}
