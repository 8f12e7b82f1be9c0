//! Visible/masked voxel partitions for the spatial, temporal and spectral
//! reconstruction tasks.

use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PartitionError, Result};
use crate::shape::MapShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Spatial,
    Temporal,
    Spectral,
    /// Loaded from a mask file or built by hand.
    Custom,
}

impl MaskStrategy {
    pub const PRETRAINING: [MaskStrategy; 3] = [
        MaskStrategy::Spatial,
        MaskStrategy::Temporal,
        MaskStrategy::Spectral,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::Spatial => "spatial",
            MaskStrategy::Temporal => "temporal",
            MaskStrategy::Spectral => "spectral",
            MaskStrategy::Custom => "custom",
        }
    }
}

/// Disjoint sorted visible and masked flat-index sets covering a tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPartition {
    pub shape: MapShape,
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
    pub strategy: MaskStrategy,
}

impl MaskPartition {
    /// Builds a partition from a visibility predicate over flat indices.
    pub fn from_fn(shape: MapShape, strategy: MaskStrategy, is_visible: impl Fn(usize) -> bool) -> Self {
        let (visible, masked): (Vec<usize>, Vec<usize>) = (0..shape.len()).partition(|&i| is_visible(i));
        Self {
            shape,
            visible,
            masked,
            strategy,
        }
    }

    /// Builds a partition from a per-voxel visibility flag (the observation
    /// tensor, 1 = measured).
    pub fn from_visibility(shape: MapShape, visible_flags: &[bool]) -> Result<Self> {
        if visible_flags.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![shape.len()],
                actual: vec![visible_flags.len()],
            });
        }
        Ok(Self::from_fn(shape, MaskStrategy::Custom, |i| visible_flags[i]))
    }

    /// Per-voxel visibility flags.
    pub fn visibility(&self) -> Vec<bool> {
        let mut flags = vec![false; self.shape.len()];
        for &i in &self.visible {
            flags[i] = true;
        }
        flags
    }

    pub fn mask_ratio(&self) -> f64 {
        self.masked.len() as f64 / self.shape.len() as f64
    }
}

fn check_ratio(ratio: f64, lo_inclusive: bool) -> Result<()> {
    let ok = if lo_inclusive {
        ratio > 0.0 && ratio <= 1.0
    } else {
        ratio > 0.0 && ratio < 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("mask ratio {ratio} out of range")))
    }
}

/// `⌊ratio · n⌋`, robust to representation error in `ratio`.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Masks `⌊ratio · N⌋` voxels drawn uniformly without replacement.
pub fn mask_spatial<R: Rng + ?Sized>(shape: MapShape, mask_ratio: f64, rng: &mut R) -> Result<MaskPartition> {
    check_ratio(mask_ratio, false)?;
    let n = shape.len();
    let count = masked_count(mask_ratio, n);
    if count == 0 || count >= n {
        return Err(Error::InvalidArgument(format!(
            "mask ratio {mask_ratio} leaves an empty side on {n} voxels"
        )));
    }
    let mut hidden = vec![false; n];
    for i in sample_indices(rng, n, count) {
        hidden[i] = true;
    }
    Ok(MaskPartition::from_fn(shape, MaskStrategy::Spatial, |i| !hidden[i]))
}

/// Masks every voxel in slots `t >= t_h`.
pub fn mask_temporal(shape: MapShape, t_h: usize) -> Result<MaskPartition> {
    if t_h == 0 || t_h >= shape.n_t {
        return Err(Error::InvalidArgument(format!(
            "t_h={t_h} leaves an empty side for n_t={}",
            shape.n_t
        )));
    }
    Ok(MaskPartition::from_fn(shape, MaskStrategy::Temporal, |i| {
        shape.voxel(i).t < t_h
    }))
}

/// Masks `⌊ratio · |band|⌋` voxels inside each target band; other bands stay
/// fully visible.
pub fn mask_spectral<R: Rng + ?Sized>(
    shape: MapShape,
    target_bands: &BTreeSet<usize>,
    within_band_ratio: f64,
    rng: &mut R,
) -> Result<MaskPartition> {
    mask_spectral_mixed(
        shape,
        &target_bands.iter().map(|&b| (b, within_band_ratio)).collect::<Vec<_>>(),
        rng,
    )
}

/// Spectral masking with a separate ratio per target band.
pub fn mask_spectral_mixed<R: Rng + ?Sized>(
    shape: MapShape,
    bands: &[(usize, f64)],
    rng: &mut R,
) -> Result<MaskPartition> {
    if bands.is_empty() {
        return Err(Error::InvalidArgument("no target bands".into()));
    }
    let mut seen = BTreeSet::new();
    for &(b, r) in bands {
        if b >= shape.n_f {
            return Err(Error::InvalidArgument(format!("band {b} >= n_f={}", shape.n_f)));
        }
        if !seen.insert(b) {
            return Err(Error::InvalidArgument(format!("band {b} listed twice")));
        }
        check_ratio(r, true)?;
    }
    if seen.len() == shape.n_f && bands.iter().all(|&(_, r)| r >= 1.0) {
        return Err(Error::InvalidArgument(
            "masking every band completely leaves no frequency anchor".into(),
        ));
    }
    let per_band = shape.n_x * shape.n_y * shape.n_t;
    let mut hidden = vec![false; shape.len()];
    for &(band, ratio) in bands {
        let members: Vec<usize> = (0..shape.len()).filter(|&i| shape.voxel(i).f == band).collect();
        let count = masked_count(ratio, per_band);
        for k in sample_indices(rng, per_band, count) {
            hidden[members[k]] = true;
        }
    }
    let partition = MaskPartition::from_fn(shape, MaskStrategy::Spectral, |i| !hidden[i]);
    if partition.masked.is_empty() {
        return Err(Error::InvalidArgument("spectral ratios mask nothing".into()));
    }
    if partition.visible.is_empty() {
        return Err(Error::InvalidArgument("spectral ratios leave nothing visible".into()));
    }
    Ok(partition)
}

/// Checks the partition law and reports the first violation found.
pub fn validate_partition(p: &MaskPartition) -> std::result::Result<(), PartitionError> {
    let total = p.shape.len();
    let mut owner = vec![0u8; total];
    for (set, bit) in [(&p.visible, 1u8), (&p.masked, 2u8)] {
        for (pos, &i) in set.iter().enumerate() {
            if i >= total {
                return Err(PartitionError::OutOfRange { index: i, total });
            }
            if pos > 0 && set[pos - 1] >= i {
                return Err(PartitionError::Unsorted(pos));
            }
            if owner[i] != 0 && owner[i] != bit {
                return Err(PartitionError::Overlap(i));
            }
            owner[i] |= bit;
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == 0) {
        return Err(PartitionError::NotCovered(i));
    }
    if p.visible.is_empty() {
        return Err(PartitionError::EmptyVisible);
    }
    if p.masked.is_empty() {
        return Err(PartitionError::EmptyMasked);
    }
    Ok(())
}
