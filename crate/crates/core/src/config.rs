//! Dataset configuration: the knobs of one simulated 4D radio-map dataset.
//!
//! Configs are stored as TOML key/value text. Every field is addressable:
//!
//! ```toml
//! name = "D1"
//! n_f = 5
//! delta_f_mhz = 900.0
//! n_t = 6
//! delta_t_s = 1.0
//! grid = [64, 64]
//! region_m = 200.0
//! tx_count_range = [2, 5]
//! speed_range_mps = [10.0, 15.0]
//! power_range_dbm = [5.0, 11.0]
//! base_freq_ghz = 2.4
//! noise_psd_dbm = -120.0
//!
//! [propagation]
//! alpha = 2.5
//! pl0_db = 40.0
//! d0_m = 1.0
//! f_ref_ghz = 2.4
//! sigma_db = 6.0
//! d_corr_m = 50.0
//! shadow_max_side = 32
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Speed envelope for vehicular transmitters, m/s.
pub const SPEED_LIMITS_MPS: (f64, f64) = (10.0, 15.0);
/// Transmit power envelope, dBm.
pub const POWER_LIMITS_DBM: (f64, f64) = (5.0, 11.0);
/// Carrier envelope, GHz.
pub const CARRIER_LIMITS_GHZ: (f64, f64) = (2.4, 6.0);

const ENVELOPE_SLACK: f64 = 1e-9;

/// Log-distance path loss and Gudmundson shadowing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Propagation {
    /// Path-loss exponent.
    pub alpha: f64,
    /// Loss at the reference distance and reference frequency, dB.
    pub pl0_db: f64,
    /// Reference distance, m. Distances below it are clamped.
    pub d0_m: f64,
    /// Frequency at which `pl0_db` applies, GHz.
    pub f_ref_ghz: f64,
    /// Shadowing standard deviation, dB.
    pub sigma_db: f64,
    /// Shadowing decorrelation distance, m.
    pub d_corr_m: f64,
    /// Largest side of the lattice on which shadowing is drawn exactly;
    /// finer grids are filled by bilinear upsampling.
    pub shadow_max_side: usize,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            pl0_db: 40.0,
            d0_m: 1.0,
            f_ref_ghz: 2.4,
            sigma_db: 6.0,
            d_corr_m: 50.0,
            shadow_max_side: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub n_f: usize,
    pub delta_f_mhz: f64,
    pub n_t: usize,
    pub delta_t_s: f64,
    /// Spatial resolution `(n_x, n_y)`.
    pub grid: (usize, usize),
    /// Physical side length of the square region, m.
    #[serde(default = "default_region")]
    pub region_m: f64,
    #[serde(default = "default_tx_count")]
    pub tx_count_range: (usize, usize),
    #[serde(default = "default_speed")]
    pub speed_range_mps: (f64, f64),
    #[serde(default = "default_power")]
    pub power_range_dbm: (f64, f64),
    #[serde(default = "default_base_freq")]
    pub base_freq_ghz: f64,
    /// Noise floor PSD in dBm. `None` disables the noise term.
    #[serde(default = "default_noise")]
    pub noise_psd_dbm: Option<f64>,
    #[serde(default)]
    pub propagation: Propagation,
}

fn default_region() -> f64 {
    200.0
}
fn default_tx_count() -> (usize, usize) {
    (2, 5)
}
fn default_speed() -> (f64, f64) {
    SPEED_LIMITS_MPS
}
fn default_power() -> (f64, f64) {
    POWER_LIMITS_DBM
}
fn default_base_freq() -> f64 {
    2.4
}
fn default_noise() -> Option<f64> {
    Some(-120.0)
}

impl DatasetConfig {
    /// A config with default physics and the given tensor geometry.
    pub fn new(
        name: &str,
        grid: (usize, usize),
        n_t: usize,
        delta_t_s: f64,
        n_f: usize,
        delta_f_mhz: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            n_f,
            delta_f_mhz,
            n_t,
            delta_t_s,
            grid,
            region_m: default_region(),
            tx_count_range: default_tx_count(),
            speed_range_mps: default_speed(),
            power_range_dbm: default_power(),
            base_freq_ghz: default_base_freq(),
            noise_psd_dbm: default_noise(),
            propagation: Propagation::default(),
        }
    }

    /// The seven reference dataset geometries, `D1`..`D7`.
    pub fn preset(name: &str) -> Option<Self> {
        let cfg = match name.to_ascii_uppercase().as_str() {
            "D1" => Self::new("D1", (64, 64), 6, 1.0, 5, 900.0),
            "D2" => Self::new("D2", (64, 64), 60, 6.0, 5, 900.0),
            "D3" => Self::new("D3", (128, 128), 40, 1.0, 5, 900.0),
            "D4" => Self::new("D4", (128, 128), 30, 2.0, 3, 1800.0),
            "D5" => Self::new("D5", (128, 128), 30, 2.0, 4, 1200.0),
            "D6" => Self::new("D6", (128, 128), 60, 3.0, 3, 1800.0),
            "D7" => Self::new("D7", (64, 64), 50, 1.0, 8, 514.0),
            _ => return None,
        };
        Some(cfg)
    }

    /// Tensor shape `(n_x, n_y, n_t, n_f)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.grid.0, self.grid.1, self.n_t, self.n_f]
    }

    /// Carrier frequency of band `f`, Hz.
    pub fn carrier_hz(&self, f: usize) -> f64 {
        self.base_freq_ghz * 1e9 + f as f64 * self.delta_f_mhz * 1e6
    }

    /// Side length of one grid cell in meters along each axis.
    pub fn cell_m(&self) -> (f64, f64) {
        (
            self.region_m / self.grid.0 as f64,
            self.region_m / self.grid.1 as f64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("{}: {msg}", self.name)));
        if self.n_f < 1 || self.n_t < 1 {
            return fail(format!("n_f={} and n_t={} must be >= 1", self.n_f, self.n_t));
        }
        if self.grid.0 < 2 || self.grid.1 < 2 {
            return fail(format!("grid {:?} must be at least 2x2", self.grid));
        }
        if !(self.region_m > 0.0) || !self.region_m.is_finite() {
            return fail(format!("region_m={} must be positive", self.region_m));
        }
        if !(self.delta_t_s >= 0.0) || !self.delta_t_s.is_finite() {
            return fail(format!("delta_t_s={} must be >= 0", self.delta_t_s));
        }
        if self.n_f > 1 && !(self.delta_f_mhz > 0.0) {
            return fail(format!("delta_f_mhz={} must be positive", self.delta_f_mhz));
        }
        let within = |r: (f64, f64), lim: (f64, f64)| {
            r.0 <= r.1 && r.0 >= lim.0 - ENVELOPE_SLACK && r.1 <= lim.1 + ENVELOPE_SLACK
        };
        if !within(self.speed_range_mps, SPEED_LIMITS_MPS) {
            return fail(format!(
                "speed range {:?} outside {:?}",
                self.speed_range_mps, SPEED_LIMITS_MPS
            ));
        }
        if !within(self.power_range_dbm, POWER_LIMITS_DBM) {
            return fail(format!(
                "power range {:?} outside {:?}",
                self.power_range_dbm, POWER_LIMITS_DBM
            ));
        }
        let lo = self.carrier_hz(0) / 1e9;
        let hi = self.carrier_hz(self.n_f - 1) / 1e9;
        if !within((lo, hi), CARRIER_LIMITS_GHZ) {
            return fail(format!(
                "carriers [{lo}, {hi}] GHz outside {:?}",
                CARRIER_LIMITS_GHZ
            ));
        }
        if self.tx_count_range.0 > self.tx_count_range.1 {
            return fail(format!("tx_count_range {:?} is empty", self.tx_count_range));
        }
        let p = &self.propagation;
        if !(p.sigma_db > 0.0) || !(p.d_corr_m > 0.0) || !(p.d0_m > 0.0) || !(p.f_ref_ghz > 0.0)
        {
            return fail("sigma_db, d_corr_m, d0_m and f_ref_ghz must be positive".into());
        }
        if !p.alpha.is_finite() || !p.pl0_db.is_finite() {
            return fail("alpha and pl0_db must be finite".into());
        }
        if p.shadow_max_side < 2 {
            return fail("shadow_max_side must be >= 2".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Format(format!("dataset config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("dataset config is always representable as TOML")
    }

    /// Content hash identifying this dataset configuration.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }
}
