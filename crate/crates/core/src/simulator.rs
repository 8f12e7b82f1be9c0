//! Synthetic spatial-temporal-spectral radio maps.
//!
//! Every voxel holds the received PSD
//! `Σ_m Γ_m(f) · |G_m(x, f)|² + η`, accumulated in linear mW and stored in
//! dBm. Channels follow a log-distance path-loss law with one Gudmundson
//! (exponentially correlated log-normal) shadowing field per transmitter.
//! Transmitters drive through the region at vehicular speed and bounce off
//! its edges; within a slot everything is frozen.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, Propagation};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::shape::{MapShape, Voxel};

/// dBm value used for voxels with exactly zero linear power.
pub const MIN_DBM: f64 = -200.0;

const SHADOW_JITTER: f64 = 1e-10;

/// Zero-mean shadowing realization on the spatial grid, dB.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowingField {
    pub n_x: usize,
    pub n_y: usize,
    pub cell_m: (f64, f64),
    /// Row-major `(x, y)`.
    pub values: Vec<f64>,
    pub sigma_db: f64,
    pub d_corr_m: f64,
}

impl ShadowingField {
    /// A field that is identically zero.
    pub fn zeros(config: &DatasetConfig) -> Self {
        Self {
            n_x: config.grid.0,
            n_y: config.grid.1,
            cell_m: config.cell_m(),
            values: vec![0.0; config.grid.0 * config.grid.1],
            sigma_db: config.propagation.sigma_db,
            d_corr_m: config.propagation.d_corr_m,
        }
    }

    pub fn at_cell(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.n_y + iy]
    }

    /// Value of the cell containing `pos_m`; positions are clamped to the grid.
    pub fn at(&self, pos_m: [f64; 2]) -> f64 {
        let cell = |p: f64, size: f64, n: usize| ((p / size).floor().max(0.0) as usize).min(n - 1);
        self.at_cell(
            cell(pos_m[0], self.cell_m.0, self.n_x),
            cell(pos_m[1], self.cell_m.1, self.n_y),
        )
    }

    /// Exponential covariance at separation `d_m`.
    pub fn covariance(&self, d_m: f64) -> f64 {
        exp_covariance(self.sigma_db, self.d_corr_m, d_m)
    }
}

fn exp_covariance(sigma_db: f64, d_corr_m: f64, d_m: f64) -> f64 {
    sigma_db * sigma_db * (-d_m / d_corr_m).exp()
}

/// Center of grid cell `(ix, iy)` in meters.
pub fn cell_center(config: &DatasetConfig, ix: usize, iy: usize) -> [f64; 2] {
    let (cx, cy) = config.cell_m();
    [(ix as f64 + 0.5) * cx, (iy as f64 + 0.5) * cy]
}

/// Draws shadowing fields for one dataset configuration.
///
/// The exponential covariance is factorized once on a lattice of at most
/// `shadow_max_side` points per axis. Grids finer than that lattice are
/// filled by bilinear interpolation, rescaled per cell so each cell keeps the
/// exact marginal variance `sigma_db²`.
#[derive(Debug, Clone)]
pub struct ShadowingSampler {
    n_x: usize,
    n_y: usize,
    cell_m: (f64, f64),
    sigma_db: f64,
    d_corr_m: f64,
    chol: Cholesky,
    /// `None` when the lattice is the grid itself.
    upsample: Option<Vec<[(usize, f64); 4]>>,
}

impl ShadowingSampler {
    pub fn new(config: &DatasetConfig) -> Result<Self> {
        let prop = &config.propagation;
        if !(prop.sigma_db > 0.0) || !(prop.d_corr_m > 0.0) {
            return Err(Error::Config("shadowing needs sigma_db > 0 and d_corr_m > 0".into()));
        }
        let (n_x, n_y) = config.grid;
        if n_x == 0 || n_y == 0 {
            return Err(Error::Config("shadowing grid must be non-empty".into()));
        }
        let lx = n_x.min(prop.shadow_max_side);
        let ly = n_y.min(prop.shadow_max_side);
        // Lattice nodes span the first to the last cell center on each axis.
        let first = cell_center(config, 0, 0);
        let last = cell_center(config, n_x - 1, n_y - 1);
        let axis = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|a| lo + (hi - lo) * a as f64 / (n - 1) as f64).collect()
            }
        };
        let ux = axis(lx, first[0], last[0]);
        let uy = axis(ly, first[1], last[1]);
        let coords: Vec<[f64; 2]> = ux
            .iter()
            .flat_map(|&x| uy.iter().map(move |&y| [x, y]))
            .collect();
        let m = coords.len();
        let mut cov = Array2::<f64>::zeros((m, m));
        let s2 = prop.sigma_db * prop.sigma_db;
        for i in 0..m {
            for j in 0..=i {
                let d = dist(coords[i], coords[j]);
                let c = exp_covariance(prop.sigma_db, prop.d_corr_m, d);
                cov[[i, j]] = c;
                cov[[j, i]] = c;
            }
            cov[[i, i]] += SHADOW_JITTER * s2;
        }
        let chol = Cholesky::new(&cov, 1e-14).map_err(|e| {
            Error::Numerical(format!("shadowing covariance after jitter: {e}"))
        })?;

        let upsample = if lx == n_x && ly == n_y {
            None
        } else {
            let bracket = |u: &[f64], p: f64| -> (usize, usize, f64) {
                if u.len() == 1 {
                    return (0, 0, 0.0);
                }
                let step = u[1] - u[0];
                let a = (((p - u[0]) / step).floor().max(0.0) as usize).min(u.len() - 2);
                let w = ((p - u[a]) / step).clamp(0.0, 1.0);
                (a, a + 1, w)
            };
            let mut table = Vec::with_capacity(n_x * n_y);
            for ix in 0..n_x {
                for iy in 0..n_y {
                    let c = cell_center(config, ix, iy);
                    let (x0, x1, wx) = bracket(&ux, c[0]);
                    let (y0, y1, wy) = bracket(&uy, c[1]);
                    let mut corners = [
                        (x0 * ly + y0, (1.0 - wx) * (1.0 - wy)),
                        (x0 * ly + y1, (1.0 - wx) * wy),
                        (x1 * ly + y0, wx * (1.0 - wy)),
                        (x1 * ly + y1, wx * wy),
                    ];
                    // Var(Σ w_a S_a) / σ² = Σ_ab w_a w_b ρ(d_ab)
                    let mut var = 0.0;
                    for &(a, wa) in &corners {
                        for &(b, wb) in &corners {
                            var += wa * wb * (-dist(coords[a], coords[b]) / prop.d_corr_m).exp();
                        }
                    }
                    let scale = 1.0 / var.sqrt();
                    for corner in corners.iter_mut() {
                        corner.1 *= scale;
                    }
                    table.push(corners);
                }
            }
            Some(table)
        };

        Ok(Self {
            n_x,
            n_y,
            cell_m: config.cell_m(),
            sigma_db: prop.sigma_db,
            d_corr_m: prop.d_corr_m,
            chol,
            upsample,
        })
    }

    /// Whether the field is drawn exactly on the grid (no upsampling).
    pub fn is_exact(&self) -> bool {
        self.upsample.is_none()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ShadowingField {
        let z: Vec<f64> = (0..self.chol.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let lattice = self.chol.mul_lower(&z);
        let values = match &self.upsample {
            None => lattice,
            Some(table) => table
                .iter()
                .map(|corners| corners.iter().map(|&(a, w)| w * lattice[a]).sum())
                .collect(),
        };
        ShadowingField {
            n_x: self.n_x,
            n_y: self.n_y,
            cell_m: self.cell_m,
            values,
            sigma_db: self.sigma_db,
            d_corr_m: self.d_corr_m,
        }
    }
}

/// One-shot shadowing draw. Prefer [`ShadowingSampler`] when drawing many.
pub fn sample_shadowing<R: Rng + ?Sized>(
    config: &DatasetConfig,
    rng: &mut R,
) -> Result<ShadowingField> {
    Ok(ShadowingSampler::new(config)?.sample(rng))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Log-distance path loss in dB, frequency-shifted relative to `f_ref_ghz`.
pub fn path_loss_db(d_m: f64, freq_hz: f64, prop: &Propagation) -> f64 {
    let d = d_m.max(prop.d0_m);
    prop.pl0_db
        + 20.0 * (freq_hz / (prop.f_ref_ghz * 1e9)).log10()
        + 10.0 * prop.alpha * (d / prop.d0_m).log10()
}

/// `|G|²` in dB between a transmitter and a receiver, including the
/// receiver-side shadowing of the transmitter's field.
pub fn channel_gain_db(
    tx_pos: [f64; 2],
    rx_pos: [f64; 2],
    freq_hz: f64,
    shadow: &ShadowingField,
    prop: &Propagation,
) -> f64 {
    -(path_loss_db(dist(tx_pos, rx_pos), freq_hz, prop) + shadow.at(rx_pos))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmitterState {
    pub position_m: [f64; 2],
    pub velocity_mps: [f64; 2],
    /// Transmit PSD per frequency band, dBm.
    pub psd_per_band: Vec<f64>,
    /// Path length covered during the most recent advance, m.
    pub last_path_m: f64,
}

impl TransmitterState {
    pub fn speed(&self) -> f64 {
        (self.velocity_mps[0].powi(2) + self.velocity_mps[1].powi(2)).sqrt()
    }

    fn draw<R: Rng + ?Sized>(config: &DatasetConfig, rng: &mut R) -> Self {
        let position_m = [
            rng.gen::<f64>() * config.region_m,
            rng.gen::<f64>() * config.region_m,
        ];
        let heading = rng.gen::<f64>() * std::f64::consts::TAU;
        let speed = draw_in(config.speed_range_mps, rng);
        let psd_per_band = (0..config.n_f)
            .map(|_| draw_in(config.power_range_dbm, rng))
            .collect();
        Self {
            position_m,
            velocity_mps: [speed * heading.cos(), speed * heading.sin()],
            psd_per_band,
            last_path_m: 0.0,
        }
    }
}

fn draw_in<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..=range.1)
    } else {
        range.0
    }
}

/// Folds `p` into `[0, len]` by specular reflection; returns the folded
/// coordinate and whether the direction of travel flipped.
fn reflect(p: f64, len: f64) -> (f64, bool) {
    let period = 2.0 * len;
    let q = p.rem_euclid(period);
    let bounces = (p / len).floor() as i64;
    let flipped = bounces.rem_euclid(2) == 1;
    if q > len {
        (period - q, flipped)
    } else {
        (q, flipped)
    }
}

/// Moves every transmitter along its velocity for `dt` seconds, bouncing off
/// the region walls, then re-draws each speed for the next slot (heading
/// kept).
pub fn advance_transmitters<R: Rng + ?Sized>(
    states: &[TransmitterState],
    dt: f64,
    config: &DatasetConfig,
    rng: &mut R,
) -> Result<Vec<TransmitterState>> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be >= 0, got {dt}")));
    }
    let len = config.region_m;
    Ok(states
        .iter()
        .map(|s| {
            let mut next = s.clone();
            if dt > 0.0 {
                let mut vel = s.velocity_mps;
                for axis in 0..2 {
                    let (p, flipped) = reflect(s.position_m[axis] + vel[axis] * dt, len);
                    next.position_m[axis] = p;
                    if flipped {
                        vel[axis] = -vel[axis];
                    }
                }
                let heading = vel[1].atan2(vel[0]);
                next.last_path_m = s.speed() * dt;
                let speed = draw_in(config.speed_range_mps, rng);
                next.velocity_mps = [speed * heading.cos(), speed * heading.sin()];
            } else {
                next.last_path_m = 0.0;
            }
            next
        })
        .collect())
}

/// Everything random about one sample: per-slot transmitter states and the
/// per-transmitter shadowing fields.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// `trajectories[t][m]` is transmitter `m` during slot `t`.
    pub trajectories: Vec<Vec<TransmitterState>>,
    pub shadows: Vec<ShadowingField>,
}

impl Scenario {
    pub fn tx_count(&self) -> usize {
        self.shadows.len()
    }

    /// Keeps only the listed transmitters.
    pub fn subset(&self, keep: &[usize]) -> Scenario {
        Scenario {
            trajectories: self
                .trajectories
                .iter()
                .map(|slot| keep.iter().map(|&m| slot[m].clone()).collect())
                .collect(),
            shadows: keep.iter().map(|&m| self.shadows[m].clone()).collect(),
        }
    }
}

/// Received-power tensor, row-major `(x, y, t, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMapSample {
    pub shape: MapShape,
    pub phi: Vec<f64>,
    /// `true` for dBm, `false` once standardized.
    pub units_dbm: bool,
    pub config_name: String,
    pub seed: u64,
}

impl RadioMapSample {
    pub fn new(shape: MapShape, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![shape.len()],
                actual: vec![phi.len()],
            });
        }
        Ok(Self {
            shape,
            phi,
            units_dbm: false,
            config_name: String::new(),
            seed: 0,
        })
    }

    pub fn get(&self, v: Voxel) -> f64 {
        self.phi[self.shape.flat(v)]
    }

    /// Rows `x0 .. x0 + width` as a standalone sample. Because `x` is the
    /// outermost axis the window is a contiguous run of flat indices that
    /// starts at `x0 * x_stride`.
    pub fn x_window(&self, x0: usize, width: usize) -> Result<RadioMapSample> {
        if width == 0 || x0 + width > self.shape.n_x {
            return Err(Error::InvalidArgument(format!(
                "window {x0}+{width} outside n_x={}",
                self.shape.n_x
            )));
        }
        let stride = self.shape.x_stride();
        let shape = MapShape::new(width, self.shape.n_y, self.shape.n_t, self.shape.n_f);
        Ok(RadioMapSample {
            shape,
            phi: self.phi[x0 * stride..(x0 + width) * stride].to_vec(),
            units_dbm: self.units_dbm,
            config_name: self.config_name.clone(),
            seed: self.seed,
        })
    }
}

/// Draws transmitters, trajectories and shadowing for one sample.
pub fn draw_scenario<R: Rng + ?Sized>(
    config: &DatasetConfig,
    sampler: &ShadowingSampler,
    rng: &mut R,
) -> Result<Scenario> {
    let (lo, hi) = config.tx_count_range;
    let count = rng.gen_range(lo..=hi);
    let mut slot: Vec<TransmitterState> = (0..count).map(|_| TransmitterState::draw(config, rng)).collect();
    let shadows = (0..count).map(|_| sampler.sample(rng)).collect();
    let mut trajectories = Vec::with_capacity(config.n_t);
    for t in 0..config.n_t {
        if t > 0 {
            slot = advance_transmitters(&slot, config.delta_t_s, config, rng)?;
        }
        trajectories.push(slot.clone());
    }
    Ok(Scenario {
        trajectories,
        shadows,
    })
}

/// Linear-domain PSD (mW) of one slot, row-major `(x, y, f)`.
pub fn render_slot_linear(
    config: &DatasetConfig,
    transmitters: &[TransmitterState],
    shadows: &[ShadowingField],
    include_noise: bool,
) -> Vec<f64> {
    let (n_x, n_y) = config.grid;
    let n_f = config.n_f;
    let noise = match (include_noise, config.noise_psd_dbm) {
        (true, Some(db)) => dbm_to_mw(db),
        _ => 0.0,
    };
    let carriers: Vec<f64> = (0..n_f).map(|f| config.carrier_hz(f)).collect();
    let mut out = vec![noise; n_x * n_y * n_f];
    for ix in 0..n_x {
        for iy in 0..n_y {
            let rx = cell_center(config, ix, iy);
            let base = (ix * n_y + iy) * n_f;
            for (tx, shadow) in transmitters.iter().zip(shadows) {
                for (f, &freq) in carriers.iter().enumerate() {
                    let gain = channel_gain_db(tx.position_m, rx, freq, shadow, &config.propagation);
                    out[base + f] += dbm_to_mw(tx.psd_per_band[f] + gain);
                }
            }
        }
    }
    out
}

/// Linear-domain PSD (mW) of a whole scenario, row-major `(x, y, t, f)`.
pub fn render_linear(config: &DatasetConfig, scenario: &Scenario, include_noise: bool) -> Vec<f64> {
    let shape = MapShape::from_array(config.shape());
    let mut out = vec![0.0; shape.len()];
    for (t, slot) in scenario.trajectories.iter().enumerate() {
        let plane = render_slot_linear(config, slot, &scenario.shadows, include_noise);
        for ix in 0..shape.n_x {
            for iy in 0..shape.n_y {
                for f in 0..shape.n_f {
                    out[shape.flat(Voxel { x: ix, y: iy, t, f })] =
                        plane[(ix * shape.n_y + iy) * shape.n_f + f];
                }
            }
        }
    }
    out
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    if mw > 0.0 {
        10.0 * mw.log10()
    } else {
        MIN_DBM
    }
}

/// Sample generator for one configuration; holds the shadowing factor.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: DatasetConfig,
    sampler: ShadowingSampler,
}

impl Simulator {
    pub fn new(config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            sampler: ShadowingSampler::new(config)?,
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn sampler(&self) -> &ShadowingSampler {
        &self.sampler
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_scenario(&self.config, &self.sampler, &mut rng)
    }

    /// One sample in dBm; a pure function of `(config, seed)`.
    pub fn sample(&self, seed: u64) -> Result<RadioMapSample> {
        let scenario = self.scenario(seed)?;
        let linear = render_linear(&self.config, &scenario, true);
        let floor = self.config.noise_psd_dbm.unwrap_or(MIN_DBM);
        Ok(RadioMapSample {
            shape: MapShape::from_array(self.config.shape()),
            phi: linear.into_iter().map(|p| mw_to_dbm(p).max(floor)).collect(),
            units_dbm: true,
            config_name: self.config.name.clone(),
            seed,
        })
    }
}

/// One sample in dBm for `(config, seed)`.
pub fn synthesize_map(config: &DatasetConfig, seed: u64) -> Result<RadioMapSample> {
    Simulator::new(config)?.sample(seed)
}

/// Seed of sample `index` within a dataset generated from `base_seed`.
pub fn sample_seed(base_seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = base_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Affine standardization statistics, pooled over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, std: 1.0 };

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Degenerate-data threshold on the pooled standard deviation.
pub const MIN_POOLED_STD: f64 = 1e-9;

/// Pooled mean/std over every voxel of every sample.
pub fn pooled_stats(samples: &[RadioMapSample]) -> Result<Standardization> {
    let count: usize = samples.iter().map(|s| s.phi.len()).sum();
    if count == 0 {
        return Err(Error::EmptyInput("standardization needs at least one voxel".into()));
    }
    let n = count as f64;
    let mean = samples.iter().flat_map(|s| s.phi.iter()).sum::<f64>() / n;
    let var = samples
        .iter()
        .flat_map(|s| s.phi.iter())
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > MIN_POOLED_STD) {
        return Err(Error::DegenerateData(format!(
            "pooled std {std:e} is below {MIN_POOLED_STD:e}"
        )));
    }
    Ok(Standardization { mean, std })
}

/// Standardizes a dataset to pooled zero mean and unit variance.
pub fn standardize_dataset(
    samples: &[RadioMapSample],
) -> Result<(Vec<RadioMapSample>, Standardization)> {
    let stats = pooled_stats(samples)?;
    let out = samples
        .iter()
        .map(|s| RadioMapSample {
            phi: s.phi.iter().map(|&v| stats.apply(v)).collect(),
            units_dbm: false,
            ..s.clone()
        })
        .collect();
    Ok((out, stats))
}

/// Inverse of [`standardize_dataset`] for one sample.
pub fn destandardize(sample: &RadioMapSample, stats: Standardization) -> RadioMapSample {
    RadioMapSample {
        phi: sample.phi.iter().map(|&v| stats.invert(v)).collect(),
        units_dbm: true,
        ..sample.clone()
    }
}
