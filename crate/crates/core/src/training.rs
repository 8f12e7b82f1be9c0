//! Masked self-supervised pre-training.
//!
//! Every step draws a batch of samples pooled across datasets, masks each
//! sample once per strategy (spatial, temporal, spectral), and descends the
//! mean of the three masked reconstruction losses with Adam.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{Model, TokenLayout};
use crate::error::{Error, Result};
use crate::graph::{grid_diagonal, GeometricGraph};
use crate::masking::{mask_spatial, mask_spectral_mixed, mask_temporal, MaskPartition, MaskStrategy};
use crate::simulator::{RadioMapSample, Standardization};
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Mask ratios drawn uniformly for the spatial strategy.
    pub spatial_ratios: Vec<f64>,
    /// Ratios for the partially masked second band of the spectral strategy.
    pub spectral_ratios: Vec<f64>,
    /// Train on random windows of this many consecutive `x` rows instead of
    /// whole maps. `None` uses whole maps.
    pub window_rows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 6,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
            seed: 0,
            spatial_ratios: vec![0.5, 0.7, 0.9],
            spectral_ratios: vec![0.5],
            window_rows: Some(1),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam moments need beta in [0, 1) and epsilon > 0".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm {c} must be > 0"));
            }
        }
        let ratios_ok = |r: &[f64], upper_inclusive: bool| {
            !r.is_empty() && r.iter().all(|&x| x > 0.0 && (x < 1.0 || (upper_inclusive && x == 1.0)))
        };
        if !ratios_ok(&self.spatial_ratios, false) {
            return bad(format!("spatial_ratios {:?} must lie in (0, 1)", self.spatial_ratios));
        }
        if !ratios_ok(&self.spectral_ratios, true) {
            return bad(format!("spectral_ratios {:?} must lie in (0, 1]", self.spectral_ratios));
        }
        if self.window_rows == Some(0) {
            return bad("window_rows must be >= 1".into());
        }
        Ok(())
    }
}

/// Standardized samples of one dataset.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub name: String,
    pub fingerprint: String,
    pub samples: Vec<RadioMapSample>,
    pub stats: Standardization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub loss_spatial: f64,
    pub loss_temporal: f64,
    pub loss_spectral: f64,
    /// Mean of the three strategy losses.
    pub loss_mean: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "step,loss_spatial,loss_temporal,loss_spectral,loss_mean,grad_norm,wall_ms";

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.step,
            self.loss_spatial,
            self.loss_temporal,
            self.loss_spectral,
            self.loss_mean,
            self.grad_norm,
            self.wall_ms
        )
    }
}

/// Mean squared error over `masked` only.
pub fn masked_mse_loss(phi_hat: &[f64], phi_true: &[f64], masked: &[usize]) -> Result<f64> {
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
    Ok(sum / masked.len() as f64)
}

/// One masked reconstruction problem ready for the model.
#[derive(Debug, Clone)]
pub struct MaskedExample {
    pub graph: GeometricGraph,
    pub layout: TokenLayout,
    /// Ground truth at `layout.masked`, same order.
    pub targets: Vec<f64>,
}

impl MaskedExample {
    pub fn new(model: &Model, sample: &RadioMapSample, mask: &MaskPartition, coord_scale: f64, pos_offset: usize) -> Result<Self> {
        let graph = model.graph(sample, mask, coord_scale)?;
        let layout = TokenLayout::from_graph(&graph, sample.shape.len(), pos_offset)?;
        if layout.masked.is_empty() {
            return Err(Error::InvalidArgument("mask hides no voxel".into()));
        }
        let targets = layout.masked.iter().map(|&i| sample.phi[i]).collect();
        Ok(Self { graph, layout, targets })
    }

    /// Whole-map example with the sample's own position scale.
    pub fn whole(model: &Model, sample: &RadioMapSample, mask: &MaskPartition) -> Result<Self> {
        Self::new(model, sample, mask, grid_diagonal(sample.shape.n_x, sample.shape.n_y), 0)
    }
}

/// Losses of `examples` and the gradient of `Σ weight · loss` with respect
/// to every parameter, accumulated in example order.
pub fn compute_gradients(model: &Model, examples: &[(MaskedExample, f64)]) -> Result<(Vec<f64>, Vec<Array2<f64>>)> {
    let mut grads = model.params.zeros_like();
    let mut losses = Vec::with_capacity(examples.len());
    for (ex, weight) in examples {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let pred = model.forward_masked(&mut tape, &p, &ex.graph, &ex.layout)?;
        let loss = tape.masked_mse(pred, (0..ex.targets.len()).collect(), ex.targets.clone());
        losses.push(tape.value(loss)[[0, 0]]);
        let g = tape.backward(loss, *weight);
        p.accumulate(&g, 1.0, &mut grads);
    }
    Ok((losses, grads))
}

pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &Model) -> Self {
        Self {
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn apply(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let lr = cfg.learning_rate;
        for (((theta, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(theta).and(g).and(m).and(v).for_each(|theta, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            });
        }
    }
}

/// Draws one partition of `shape` for `strategy`.
pub fn draw_mask<R: Rng + ?Sized>(
    shape: crate::shape::MapShape,
    strategy: MaskStrategy,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<MaskPartition> {
    match strategy {
        MaskStrategy::Spatial => {
            let ratio = *cfg.spatial_ratios.choose(rng).expect("validated nonempty");
            mask_spatial(shape, ratio, rng)
        }
        MaskStrategy::Temporal => {
            if shape.n_t < 2 {
                return Err(Error::InvalidArgument("temporal masking needs n_t >= 2".into()));
            }
            let lo = shape.n_t.div_ceil(3).max(1);
            let t_h = rng.gen_range(lo..shape.n_t);
            mask_temporal(shape, t_h)
        }
        MaskStrategy::Spectral => {
            if shape.n_f < 2 {
                return Err(Error::InvalidArgument("spectral masking needs n_f >= 2".into()));
            }
            let mut bands: Vec<usize> = (0..shape.n_f).collect();
            bands.shuffle(rng);
            let ratio = *cfg.spectral_ratios.choose(rng).expect("validated nonempty");
            mask_spectral_mixed(shape, &[(bands[0], 1.0), (bands[1], ratio)], rng)
        }
        MaskStrategy::Custom => Err(Error::InvalidArgument("custom masks are not drawn".into())),
    }
}

/// Training view of a sample: either the whole map or a random window of
/// `x` rows, with the position offset and scale of its parent grid.
fn training_view<R: Rng + ?Sized>(sample: &RadioMapSample, window: Option<usize>, rng: &mut R) -> Result<(RadioMapSample, usize)> {
    match window {
        Some(w) if w < sample.shape.n_x => {
            let x0 = rng.gen_range(0..=sample.shape.n_x - w);
            Ok((sample.x_window(x0, w)?, x0 * sample.shape.x_stride()))
        }
        _ => Ok((sample.clone(), 0)),
    }
}

/// The three pre-training examples of one sample.
pub fn strategy_examples<R: Rng + ?Sized>(
    model: &Model,
    sample: &RadioMapSample,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<[MaskedExample; 3]> {
    let scale = grid_diagonal(sample.shape.n_x, sample.shape.n_y);
    let (view, offset) = training_view(sample, cfg.window_rows, rng)?;
    let make = |s: MaskStrategy, rng: &mut R| -> Result<MaskedExample> {
        let mask = draw_mask(view.shape, s, cfg, rng)?;
        MaskedExample::new(model, &view, &mask, scale, offset)
    };
    Ok([
        make(MaskStrategy::Spatial, rng)?,
        make(MaskStrategy::Temporal, rng)?,
        make(MaskStrategy::Spectral, rng)?,
    ])
}

/// One optimizer step on the mean composite loss of `batch`.
pub fn composite_step<R: Rng + ?Sized>(
    model: &mut Model,
    opt: &mut OptimizerState,
    batch: &[&RadioMapSample],
    cfg: &TrainConfig,
    step: usize,
    rng: &mut R,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let start = Instant::now();
    let weight = 1.0 / (3.0 * batch.len() as f64);
    let mut examples = Vec::with_capacity(3 * batch.len());
    for sample in batch {
        for ex in strategy_examples(model, sample, cfg, rng)? {
            examples.push((ex, weight));
        }
    }
    let (losses, mut grads) = compute_gradients(model, &examples)?;
    let mut per = [0.0; 3];
    for (i, l) in losses.iter().enumerate() {
        per[i % 3] += l / batch.len() as f64;
    }
    let loss_mean = (per[0] + per[1] + per[2]) / 3.0;
    let grad_norm = global_norm(&grads);
    if !loss_mean.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("losses {per:?}, gradient norm {grad_norm}"),
        });
    }
    if let Some(c) = cfg.clip_norm {
        if grad_norm > c {
            let s = c / grad_norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
    }
    opt.apply(model.params.tensors_mut(), &grads, cfg);
    Ok(LossReport {
        step,
        loss_spatial: per[0],
        loss_temporal: per[1],
        loss_spectral: per[2],
        loss_mean,
        grad_norm,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs `cfg.steps` composite steps over batches shuffled across all sets.
/// `on_report` sees every step's report as it is produced.
pub fn pretrain(
    model: &mut Model,
    sets: &[TrainingSet],
    cfg: &TrainConfig,
    mut on_report: impl FnMut(&LossReport) -> Result<()>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    let pool: Vec<&RadioMapSample> = sets.iter().flat_map(|s| s.samples.iter()).collect();
    if pool.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    // stream 1 keeps batching and masking independent of the initialization
    // draws, which may use the same seed on stream 0
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = OptimizerState::new(model);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut cursor = order.len();
    let mut reports = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(pool[order[cursor]]);
            cursor += 1;
        }
        let report = composite_step(model, &mut opt, &batch, cfg, step, &mut rng)?;
        on_report(&report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Writes the CSV training log.
pub fn write_log<W: Write>(mut out: W, reports: &[LossReport]) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}
