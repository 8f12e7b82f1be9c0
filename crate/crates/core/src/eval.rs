//! Reconstruction tasks and RMSE reports.
//!
//! Sparsity is the fraction of voxels left visible. Masks are drawn from a
//! per-sample seed so every estimator sees the same partitions.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{kriging_reconstruct, mean_predictor, KrigingParams};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::io::dataset::LoadedDataset;
use crate::masking::{mask_spatial, mask_spectral, mask_temporal, MaskPartition};
use crate::shape::MapShape;
use crate::simulator::{sample_seed, RadioMapSample};

pub const DEFAULT_SPARSITIES: [f64; 3] = [0.1, 0.3, 0.5];

/// Root mean squared error over `masked`.
pub fn rmse(phi_hat: &[f64], phi_true: &[f64], masked: &[usize]) -> Result<f64> {
    if masked.is_empty() {
        return Err(Error::InvalidArgument("masked set is empty".into()));
    }
    if phi_hat.len() != phi_true.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![phi_true.len()],
            actual: vec![phi_hat.len()],
        });
    }
    let sum: f64 = masked.iter().map(|&i| (phi_hat[i] - phi_true[i]).powi(2)).sum();
    Ok((sum / masked.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Task {
    /// Uniform spatial masking leaving `sparsity` of the voxels visible.
    Spatial { sparsity: f64 },
    /// Slots `t >= t_h` hidden.
    Temporal { t_h: usize },
    /// `ratio` of every listed band hidden.
    Spectral { bands: BTreeSet<usize>, ratio: f64 },
    /// Spatial masking on a dataset the model never saw in training.
    ZeroShot { sparsity: f64 },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Spatial { .. } => "spatial",
            Task::Temporal { .. } => "temporal",
            Task::Spectral { .. } => "spectral",
            Task::ZeroShot { .. } => "zero-shot",
        }
    }

    /// Task parameter as it appears in reports.
    pub fn param(&self) -> String {
        match self {
            Task::Spatial { sparsity } | Task::ZeroShot { sparsity } => format!("sparsity={sparsity}"),
            Task::Temporal { t_h } => format!("t_h={t_h}"),
            Task::Spectral { bands, ratio } => {
                let b: Vec<String> = bands.iter().map(|b| b.to_string()).collect();
                format!("bands={};ratio={ratio}", b.join(" "))
            }
        }
    }

    /// The partition this task uses on one sample.
    pub fn mask(&self, shape: MapShape, rng: &mut ChaCha8Rng) -> Result<MaskPartition> {
        match self {
            Task::Spatial { sparsity } | Task::ZeroShot { sparsity } => {
                if !(*sparsity > 0.0 && *sparsity < 1.0) {
                    return Err(Error::InvalidArgument(format!("sparsity {sparsity} must lie in (0, 1)")));
                }
                mask_spatial(shape, 1.0 - sparsity, rng)
            }
            Task::Temporal { t_h } => mask_temporal(shape, *t_h),
            Task::Spectral { bands, ratio } => mask_spectral(shape, bands, *ratio, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Fmrme,
    Kriging,
    Mean,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Fmrme => "fmrme",
            Estimator::Kriging => "kriging",
            Estimator::Mean => "mean",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fmrme" => Ok(Estimator::Fmrme),
            "kriging" => Ok(Estimator::Kriging),
            "mean" => Ok(Estimator::Mean),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator {other:?} (expected fmrme, kriging or mean)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub seed: u64,
}

/// Per-sample RMSE in dBm with aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub estimator: Estimator,
    pub rmse_dbm: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the per-sample values.
    pub std: f64,
}

pub const REPORT_HEADER: &str = "sample_index,task,param,estimator,rmse_dbm";

impl EvalReport {
    pub fn new(task: Task, estimator: Estimator, rmse_dbm: Vec<f64>) -> Result<Self> {
        if rmse_dbm.is_empty() {
            return Err(Error::EmptyInput("no samples evaluated".into()));
        }
        let n = rmse_dbm.len() as f64;
        let mean = rmse_dbm.iter().sum::<f64>() / n;
        let std = (rmse_dbm.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            task,
            estimator,
            rmse_dbm,
            mean,
            std,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        let (task, param) = (self.task.name(), self.task.param());
        for (i, r) in self.rmse_dbm.iter().enumerate() {
            writeln!(out, "{i},{task},{param},{},{r}", self.estimator)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "task={} {} estimator={} samples={} rmse_mean_dbm={:.6} rmse_std_dbm={:.6}",
            self.task.name(),
            self.task.param(),
            self.estimator,
            self.rmse_dbm.len(),
            self.mean,
            self.std
        )
    }
}

/// Standardized estimate of the whole map of one standardized sample.
pub fn estimate(
    estimator: Estimator,
    sample: &RadioMapSample,
    mask: &MaskPartition,
    checkpoint: Option<&Checkpoint>,
) -> Result<Vec<f64>> {
    match estimator {
        Estimator::Mean => mean_predictor(sample, mask),
        Estimator::Kriging => kriging_reconstruct(sample, mask, &KrigingParams::default()),
        Estimator::Fmrme => {
            let ckpt = checkpoint.ok_or_else(|| Error::InvalidArgument("the fmrme estimator needs a checkpoint".into()))?;
            Ok(ckpt
                .model
                .predict_tiled(sample, mask, ckpt.manifest.train.window_rows)?
                .to_vec())
        }
    }
}

/// Runs `spec` with `estimator` on every sample of `dataset`.
pub fn run_task(
    spec: &TaskSpec,
    estimator: Estimator,
    dataset: &LoadedDataset,
    checkpoint: Option<&Checkpoint>,
) -> Result<EvalReport> {
    if let Task::ZeroShot { .. } = spec.task {
        let ckpt = checkpoint.ok_or_else(|| Error::Protocol("zero-shot evaluation needs a checkpoint".into()))?;
        if ckpt.manifest.trained_on(&dataset.manifest.fingerprint) {
            return Err(Error::Protocol(format!(
                "dataset {:?} was part of the checkpoint's training data",
                dataset.manifest.config.name
            )));
        }
    }
    let stats = dataset.stats();
    let standardized = dataset.standardized();
    let mut values = Vec::with_capacity(standardized.len());
    for (i, (sample, raw)) in standardized.iter().zip(&dataset.samples).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, i));
        let mask = spec.task.mask(sample.shape, &mut rng)?;
        let est = estimate(estimator, sample, &mask, checkpoint)?;
        let est_dbm: Vec<f64> = est.iter().map(|&v| stats.invert(v)).collect();
        values.push(rmse(&est_dbm, &raw.phi, &mask.masked)?);
    }
    EvalReport::new(spec.task.clone(), estimator, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_cases() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&t, &t, &[0, 1, 2]).unwrap(), 0.0);
        let h = [1.0 - 2.5, 2.0 + 2.5, 3.0];
        assert!((rmse(&h, &t, &[0, 1]).unwrap() - 2.5).abs() < 1e-15);
        assert!(rmse(&h, &t, &[]).is_err());
    }

    #[test]
    fn spatial_task_masks_complement_of_sparsity() {
        let shape = MapShape::new(10, 10, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Task::Spatial { sparsity: 0.3 }.mask(shape, &mut rng).unwrap();
        assert_eq!(m.masked.len(), 70);
        assert!(Task::Spatial { sparsity: 1.0 }.mask(shape, &mut rng).is_err());
    }

    #[test]
    fn report_aggregates() {
        let r = EvalReport::new(Task::Temporal { t_h: 2 }, Estimator::Mean, vec![1.0, 3.0]).unwrap();
        assert_eq!(r.mean, 2.0);
        assert_eq!(r.std, 1.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "sample_index,task,param,estimator,rmse_dbm\n0,temporal,t_h=2,mean,1\n1,temporal,t_h=2,mean,3\n");
    }

    #[test]
    fn estimator_names_roundtrip() {
        for e in [Estimator::Fmrme, Estimator::Kriging, Estimator::Mean] {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert!("other".parse::<Estimator>().is_err());
    }
}
