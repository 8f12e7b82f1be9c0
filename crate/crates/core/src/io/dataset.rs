//! Dataset directories: `manifest.toml` plus one sample file per map.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rmap::{read_rmap, write_rmap};
use crate::config::DatasetConfig;
use crate::error::{Error, Result};
use crate::shape::MapShape;
use crate::simulator::{pooled_stats, sample_seed, RadioMapSample, Simulator, Standardization};
use crate::training::TrainingSet;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub file: String,
    #[serde(with = "seed_text")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(with = "seed_text")]
    pub base_seed: u64,
    /// Pooled standardization over every voxel of every sample, in dBm.
    pub mean: f64,
    pub std: f64,
    pub fingerprint: String,
    pub config: DatasetConfig,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn stats(&self) -> Standardization {
        Standardization {
            mean: self.mean,
            std: self.std,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Format(format!("dataset manifest: {e}")))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.format_version)));
        }
        m.config.validate()?;
        if !m.mean.is_finite() || !(m.std > 0.0 && m.std.is_finite()) {
            return Err(Error::Format(format!("invalid standardization mean={} std={}", m.mean, m.std)));
        }
        for s in &m.samples {
            if s.file.is_empty() || s.file.contains(['/', '\\']) || s.file == ".." {
                return Err(Error::Format(format!("sample file name {:?} must be a plain file name", s.file)));
            }
        }
        if m.fingerprint != m.config.fingerprint() {
            return Err(Error::Format("manifest fingerprint does not match its config".into()));
        }
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// TOML integers are signed 64-bit, so seeds are stored as decimal text.
mod seed_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

pub fn sample_file_name(index: usize) -> String {
    format!("sample_{index:05}.rmap")
}

/// Simulates `count` samples of `config` into `dir` and writes the manifest.
pub fn write_dataset(dir: &Path, config: &DatasetConfig, base_seed: u64, count: usize) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::InvalidArgument("a dataset needs at least one sample".into()));
    }
    let sim = Simulator::new(config)?;
    let seeds: Vec<u64> = (0..count).map(|i| sample_seed(base_seed, i)).collect();
    let samples = seeds.iter().map(|&s| sim.sample(s)).collect::<Result<Vec<_>>>()?;
    let stats = pooled_stats(&samples)?;
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(count);
    for (i, (sample, &seed)) in samples.iter().zip(&seeds).enumerate() {
        let file = sample_file_name(i);
        write_rmap(&dir.join(&file), sample, stats)?;
        entries.push(SampleEntry { file, seed });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        base_seed,
        mean: stats.mean,
        std: stats.std,
        fingerprint: config.fingerprint(),
        config: config.clone(),
        samples: entries,
    };
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_toml_string())?;
    Ok(manifest)
}

/// Samples in dBm with the manifest that describes them.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub samples: Vec<RadioMapSample>,
}

impl LoadedDataset {
    pub fn stats(&self) -> Standardization {
        self.manifest.stats()
    }

    /// Samples in standardized units.
    pub fn standardized(&self) -> Vec<RadioMapSample> {
        let stats = self.stats();
        self.samples
            .iter()
            .map(|s| RadioMapSample {
                phi: s.phi.iter().map(|&v| stats.apply(v)).collect(),
                units_dbm: false,
                ..s.clone()
            })
            .collect()
    }

    pub fn training_set(&self) -> TrainingSet {
        TrainingSet {
            name: self.manifest.config.name.clone(),
            fingerprint: self.manifest.fingerprint.clone(),
            samples: self.standardized(),
            stats: self.stats(),
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(MANIFEST_FILE).display())))
    })?;
    DatasetManifest::from_toml_str(&text)
}

/// Loads every sample listed in the manifest and checks it against the
/// configured shape.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = read_manifest(dir)?;
    let expected = MapShape::from_array(manifest.config.shape());
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let (header, mut sample) = read_rmap(&dir.join(&entry.file))?;
        if header.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.dims().to_vec(),
                actual: header.shape.dims().to_vec(),
            });
        }
        sample.config_name = manifest.config.name.clone();
        sample.seed = entry.seed;
        samples.push(sample);
    }
    Ok(LoadedDataset {
        dir: dir.to_path_buf(),
        manifest,
        samples,
    })
}
