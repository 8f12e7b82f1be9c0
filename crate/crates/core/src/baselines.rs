//! Reference estimators: ordinary kriging with a Gaussian kernel, applied
//! per `(t, f)` slice, and the global visible mean.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::masking::MaskPartition;
use crate::simulator::RadioMapSample;

/// Pivot threshold of the kriging factorization, relative to the largest
/// diagonal entry.
const PIVOT_TOL: f64 = 1e-13;
/// Nugget escalation used by [`kriging_reconstruct`] when a slice system is
/// numerically singular at the configured nugget.
const NUGGET_GROWTH: f64 = 10.0;
const MAX_NUGGET_RETRIES: usize = 8;

/// Kernel hyperparameters. `None` selects the data-driven default: visible
/// sample variance for `variance`, three times the mean nearest-neighbor
/// distance for `length_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingParams {
    pub variance: Option<f64>,
    pub length_scale: Option<f64>,
    pub nugget: f64,
}

impl Default for KrigingParams {
    fn default() -> Self {
        Self {
            variance: None,
            length_scale: None,
            nugget: 1e-6,
        }
    }
}

pub fn gaussian_kernel(a: [f64; 2], b: [f64; 2], variance: f64, length_scale: f64) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    variance * (-d2 / (2.0 * length_scale * length_scale)).exp()
}

/// Fitted ordinary-kriging system.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    pub positions: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub variance: f64,
    pub length_scale: f64,
    pub nugget: f64,
    chol: Cholesky,
    /// `(K + nugget I)⁻¹ 1`.
    k_inv_one: Array1<f64>,
    one_k_inv_one: f64,
}

/// Factorizes `K + nugget I` for the given samples.
pub fn kriging_fit(
    positions: &[[f64; 2]],
    values: &[f64],
    variance: f64,
    length_scale: f64,
    nugget: f64,
) -> Result<KrigingModel> {
    if positions.is_empty() || positions.len() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "kriging needs matching nonempty inputs, got {} positions and {} values",
            positions.len(),
            values.len()
        )));
    }
    if !(variance > 0.0) || !(length_scale > 0.0) || !(nugget >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kriging needs variance > 0, length scale > 0, nugget >= 0 (got {variance}, {length_scale}, {nugget})"
        )));
    }
    let n = positions.len();
    let k = Array2::from_shape_fn((n, n), |(i, j)| {
        gaussian_kernel(positions[i], positions[j], variance, length_scale) + if i == j { nugget } else { 0.0 }
    });
    let chol = Cholesky::new(&k, PIVOT_TOL).map_err(|e| {
        Error::Numerical(format!("kriging system is singular ({e}); increase the nugget above {nugget}"))
    })?;
    let k_inv_one = chol.solve(&vec![1.0; n]);
    let one_k_inv_one = k_inv_one.sum();
    Ok(KrigingModel {
        positions: positions.to_vec(),
        values: values.to_vec(),
        variance,
        length_scale,
        nugget,
        chol,
        k_inv_one,
        one_k_inv_one,
    })
}

impl KrigingModel {
    /// Ordinary-kriging weights for `query`; they sum to one.
    pub fn weights(&self, query: [f64; 2]) -> Array1<f64> {
        let rhs: Vec<f64> = self
            .positions
            .iter()
            .map(|&p| gaussian_kernel(p, query, self.variance, self.length_scale))
            .collect();
        let a = self.chol.solve(&rhs);
        let mu = (a.sum() - 1.0) / self.one_k_inv_one;
        a - &(&self.k_inv_one * mu)
    }

    pub fn predict(&self, query: [f64; 2]) -> f64 {
        self.weights(query).iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nearest_neighbor_distance(positions: &[[f64; 2]]) -> Option<f64> {
    if positions.len() < 2 {
        return None;
    }
    let total: f64 = positions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Some(total / positions.len() as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

/// Predictions at `queries` from one slice's visible samples, resolving
/// default hyperparameters and degenerate slices.
fn krige_slice(
    positions: &[[f64; 2]],
    values: &[f64],
    queries: &[[f64; 2]],
    params: &KrigingParams,
) -> Result<Vec<f64>> {
    let var = params.variance.unwrap_or_else(|| variance(values));
    let ell = match params.length_scale {
        Some(l) => Some(l),
        None => mean_nearest_neighbor_distance(positions).map(|d| 3.0 * d),
    };
    let (var, ell) = match ell {
        Some(ell) if var > 0.0 && ell > 0.0 => (var, ell),
        // one sample or a constant slice: every weighting gives the mean
        _ => return Ok(vec![mean(values); queries.len()]),
    };
    let mut nugget = params.nugget;
    let mut tries = 0;
    let model = loop {
        match kriging_fit(positions, values, var, ell, nugget) {
            Ok(m) => break m,
            Err(Error::Numerical(_)) if tries < MAX_NUGGET_RETRIES => {
                nugget = (nugget * NUGGET_GROWTH).max(var * 1e-12);
                tries += 1;
            }
            Err(e) => return Err(e),
        }
    };
    Ok(queries.iter().map(|&q| model.predict(q)).collect())
}

/// Kriging estimate of every voxel: each `(t, f)` slice is fitted on its
/// visible cells and predicts its masked cells. Slices without visible
/// cells receive the global visible mean; visible voxels keep their values.
pub fn kriging_reconstruct(sample: &RadioMapSample, mask: &MaskPartition, params: &KrigingParams) -> Result<Vec<f64>> {
    check_pair(sample, mask)?;
    let shape = sample.shape;
    let global = mean(&mask.visible.iter().map(|&i| sample.phi[i]).collect::<Vec<_>>());
    let mut out = sample.phi.clone();
    let n_slices = shape.n_t * shape.n_f;
    let mut vis: Vec<Vec<usize>> = vec![Vec::new(); n_slices];
    let mut hid: Vec<Vec<usize>> = vec![Vec::new(); n_slices];
    for &i in &mask.visible {
        let v = shape.voxel(i);
        vis[v.t * shape.n_f + v.f].push(i);
    }
    for &i in &mask.masked {
        let v = shape.voxel(i);
        hid[v.t * shape.n_f + v.f].push(i);
    }
    let pos = |i: usize| {
        let v = shape.voxel(i);
        [v.x as f64, v.y as f64]
    };
    for s in 0..n_slices {
        if hid[s].is_empty() {
            continue;
        }
        if vis[s].is_empty() {
            for &i in &hid[s] {
                out[i] = global;
            }
            continue;
        }
        let positions: Vec<[f64; 2]> = vis[s].iter().map(|&i| pos(i)).collect();
        let values: Vec<f64> = vis[s].iter().map(|&i| sample.phi[i]).collect();
        let queries: Vec<[f64; 2]> = hid[s].iter().map(|&i| pos(i)).collect();
        let pred = krige_slice(&positions, &values, &queries, params)?;
        for (&i, p) in hid[s].iter().zip(pred) {
            out[i] = p;
        }
    }
    Ok(out)
}

/// Every masked voxel gets the mean of all visible values.
pub fn mean_predictor(sample: &RadioMapSample, mask: &MaskPartition) -> Result<Vec<f64>> {
    check_pair(sample, mask)?;
    let m = mean(&mask.visible.iter().map(|&i| sample.phi[i]).collect::<Vec<_>>());
    let mut out = sample.phi.clone();
    for &i in &mask.masked {
        out[i] = m;
    }
    Ok(out)
}

fn check_pair(sample: &RadioMapSample, mask: &MaskPartition) -> Result<()> {
    if sample.shape != mask.shape {
        return Err(Error::ShapeMismatch {
            expected: sample.shape.dims().to_vec(),
            actual: mask.shape.dims().to_vec(),
        });
    }
    if mask.visible.is_empty() {
        return Err(Error::InvalidArgument("no visible voxels".into()));
    }
    Ok(())
}
