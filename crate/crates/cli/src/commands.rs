use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use fmrme_core::autoencoder::{Model, ModelConfig};
use fmrme_core::config::DatasetConfig;
use fmrme_core::eval::{run_task, Estimator, Task, TaskSpec};
use fmrme_core::io::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, TrainedOn};
use fmrme_core::io::dataset::{load_dataset, write_dataset};
use fmrme_core::io::mask::read_mask;
use fmrme_core::io::rmap::{read_rmap, write_rmap};
use fmrme_core::simulator::RadioMapSample;
use fmrme_core::training::{pretrain as run_pretrain, write_log, TrainConfig};
use fmrme_core::{Error, Result};

use crate::{out_dir, EstimatorKind, EvalArgs, InferArgs, PretrainArgs, SimulateArgs, TaskKind};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let config = match (&a.config, &a.preset) {
        (Some(path), _) => DatasetConfig::from_toml_str(&read_text(path)?)?,
        (None, Some(name)) => DatasetConfig::preset(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {name:?} (expected D1 to D7)")))?,
        (None, None) => return Err(Error::InvalidArgument("pass --config or --preset".into())),
    };
    let dir = a.out.clone().unwrap_or_else(|| out_dir().join(&config.name));
    let manifest = write_dataset(&dir, &config, a.seed, a.samples)?;
    println!(
        "dataset={} samples={} shape={:?} mean_dbm={:.6} std_dbm={:.6} dir={}",
        config.name,
        manifest.samples.len(),
        config.shape(),
        manifest.mean,
        manifest.std,
        dir.display()
    );
    Ok(())
}

fn train_config(a: &PretrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.train_config {
        Some(path) => toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.window_rows {
        cfg.window_rows = (v > 0).then_some(v);
    }
    if a.no_clip {
        cfg.clip_norm = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let model_cfg: ModelConfig = match &a.model_config {
        Some(path) => toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => ModelConfig::default(),
    };
    let datasets = a.data.iter().map(|d| load_dataset(d)).collect::<Result<Vec<_>>>()?;
    let sets: Vec<_> = datasets.iter().map(|d| d.training_set()).collect();
    let mut model = Model::new(model_cfg, cfg.seed)?;
    let log_every = a.log_every;
    let reports = run_pretrain(&mut model, &sets, &cfg, |r| {
        if log_every > 0 && (r.step % log_every == 0 || r.step + 1 == cfg.steps) {
            eprintln!(
                "step={} loss_mean={:.6} spatial={:.6} temporal={:.6} spectral={:.6} grad_norm={:.4}",
                r.step, r.loss_mean, r.loss_spatial, r.loss_temporal, r.loss_spectral, r.grad_norm
            );
        }
        Ok(())
    })?;
    let trained_on = sets
        .iter()
        .map(|s| TrainedOn {
            name: s.name.clone(),
            fingerprint: s.fingerprint.clone(),
            samples: s.samples.len(),
            stats: s.stats,
        })
        .collect();
    let out = a.out.clone().unwrap_or_else(|| out_dir().join("model.fmck"));
    ensure_parent(&out)?;
    let ckpt = Checkpoint::new(model, cfg.clone(), reports.len(), trained_on);
    write_checkpoint(&out, &ckpt)?;
    let log = a.log.clone().unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    ensure_parent(&log)?;
    write_log(fs::File::create(&log)?, &reports)?;
    println!(
        "checkpoint={} steps={} parameters={} log={}",
        out.display(),
        reports.len(),
        ckpt.model.params.scalar_count(),
        log.display()
    );
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let (header, sample) = read_rmap(&a.sample)?;
    let mask = read_mask(&a.mask)?;
    if mask.shape != sample.shape {
        return Err(Error::ShapeMismatch {
            expected: sample.shape.dims().to_vec(),
            actual: mask.shape.dims().to_vec(),
        });
    }
    let stats = header.stats;
    let standardized = RadioMapSample::new(sample.shape, sample.phi.iter().map(|&v| stats.apply(v)).collect())?;
    let est = ckpt
        .model
        .predict_tiled(&standardized, &mask, ckpt.manifest.train.window_rows)?;
    let mut out_sample = RadioMapSample::new(sample.shape, est.iter().map(|&v| stats.invert(v)).collect())?;
    out_sample.units_dbm = true;
    let out = a.out.clone().unwrap_or_else(|| out_dir().join("estimate.rmap"));
    ensure_parent(&out)?;
    write_rmap(&out, &out_sample, stats)?;
    println!(
        "estimate={} visible={} masked={}",
        out.display(),
        mask.visible.len(),
        mask.masked.len()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let shape = dataset.manifest.config.shape();
    let task = match a.task {
        TaskKind::Spatial => Task::Spatial { sparsity: a.sparsity },
        TaskKind::ZeroShot => Task::ZeroShot { sparsity: a.sparsity },
        TaskKind::Temporal => Task::Temporal {
            t_h: a.t_h.unwrap_or(shape[2].div_ceil(2)),
        },
        TaskKind::Spectral => {
            let bands: BTreeSet<usize> = if a.bands.is_empty() {
                BTreeSet::from([shape[3] - 1])
            } else {
                a.bands.iter().copied().collect()
            };
            Task::Spectral {
                bands,
                ratio: a.band_ratio,
            }
        }
    };
    let estimator = match a.estimator {
        EstimatorKind::Fmrme => Estimator::Fmrme,
        EstimatorKind::Kriging => Estimator::Kriging,
        EstimatorKind::Mean => Estimator::Mean,
    };
    let checkpoint = a.checkpoint.as_deref().map(read_checkpoint).transpose()?;
    let spec = TaskSpec { task, seed: a.seed };
    let report = run_task(&spec, estimator, &dataset, checkpoint.as_ref())?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| out_dir().join(format!("eval_{}_{}.csv", report.task.name(), estimator)));
    ensure_parent(&out)?;
    report.write_csv(fs::File::create(&out)?)?;
    println!("{} csv={}", report.summary(), out.display());
    Ok(())
}
