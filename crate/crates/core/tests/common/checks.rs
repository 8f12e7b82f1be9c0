//! Measurement routines shared by the integration tests and the acceptance
//! target. Each returns the measured quantity; callers apply thresholds.

#![allow(dead_code)]

use fmrme_core::autoencoder::{AttentionLayer, Model, ModelConfig, TokenLayout};
use fmrme_core::baselines::{kriging_fit, mean_nearest_neighbor_distance};
use fmrme_core::config::DatasetConfig;
use fmrme_core::gafe::{gafe_forward, Gafe, GafeConfig};
use fmrme_core::graph::{grid_diagonal, GeometricGraph, VoxelNode};
use fmrme_core::masking::{mask_spatial, mask_spectral_mixed, mask_temporal, MaskPartition};
use fmrme_core::nn::{Mlp, ParamStore};
use fmrme_core::shape::MapShape;
use fmrme_core::simulator::{
    draw_scenario, render_linear, sample_seed, standardize_dataset, RadioMapSample, ShadowingSampler, Simulator,
};
use fmrme_core::tape::Tape;
use fmrme_core::training::{compute_gradients, masked_mse_loss, pretrain, MaskedExample, TrainConfig, TrainingSet};
use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn flatten(m: &oracles::Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn to_array(m: &oracles::Mat) -> Array2<f64> {
    Array2::from_shape_fn((m.len(), m[0].len()), |(r, c)| m[r][c])
}

/// Random graph of `n` nodes drawn from distinct voxels of `shape`, with
/// continuous positions so neighbor sets have no ties.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, shape: MapShape, k: usize) -> GeometricGraph {
    let mut idx = sample_indices(rng, shape.len(), n).into_vec();
    idx.sort_unstable();
    let nodes = idx
        .into_iter()
        .map(|index| {
            let v = shape.voxel(index);
            VoxelNode {
                index,
                h0: [rng.gen_range(-2.0..2.0), shape.t_norm(v.t), shape.f_norm(v.f)],
                p: [rng.gen_range(0.0..shape.n_x as f64), rng.gen_range(0.0..shape.n_y as f64)],
                t: v.t,
                f: v.f,
            }
        })
        .collect();
    GeometricGraph::from_nodes(nodes, k, grid_diagonal(shape.n_x, shape.n_y), shape).unwrap()
}

pub fn gafe_output(store: &ParamStore, gafe: &Gafe, graph: &GeometricGraph) -> Vec<f64> {
    let mut tape = Tape::inference();
    let p = store.bind(&mut tape);
    let out = gafe_forward(&mut tape, &p, gafe, graph).unwrap();
    tape.value(out).iter().copied().collect()
}

/// Rigid-motion check over `cases` random graphs of at most 40 nodes.
/// Returns the largest GAFE output deviation and the largest end-to-end
/// model deviation.
pub fn equivariance_deviation(cases: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let model = Model::new(ModelConfig::default(), seed).unwrap();
    let shape = MapShape::new(8, 8, 3, 2);
    let (mut gafe_dev, mut model_dev) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = r.gen_range(2..=40);
        let graph = random_graph(&mut r, n, shape, model.config.k_neighbors);
        let layout = TokenLayout::from_graph(&graph, shape.len(), 0).unwrap();
        let angle = r.gen_range(0.0..std::f64::consts::TAU);
        let shift = [r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0)];
        let mut moved = graph.clone();
        moved.transform_positions(angle, shift);
        let g0 = gafe_output(&model.params, &model.layout.gafe, &graph);
        let g1 = gafe_output(&model.params, &model.layout.gafe, &moved);
        gafe_dev = gafe_dev.max(max_abs_diff(&g0, &g1));
        let y0 = model.predict_graph(&graph, &layout).unwrap();
        let y1 = model.predict_graph(&moved, &layout).unwrap();
        model_dev = model_dev.max(max_abs_diff(y0.as_slice().unwrap(), y1.as_slice().unwrap()));
    }
    (gafe_dev, model_dev)
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        gafe: GafeConfig {
            d_h: 8,
            d_m: 8,
            d_out: 16,
            layers: 1,
        },
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        d_dec: 8,
        k_neighbors: 4,
        ..ModelConfig::default()
    }
}

/// 3×3 grid, 3 slots, 3 bands: 27 voxels.
pub fn tiny_dataset(count: usize, seed: u64) -> (Vec<RadioMapSample>, TrainingSet) {
    let cfg = DatasetConfig::new("tiny", (3, 3), 3, 1.0, 3, 1200.0);
    let sim = Simulator::new(&cfg).unwrap();
    let raw: Vec<_> = (0..count).map(|i| sim.sample(sample_seed(seed, i)).unwrap()).collect();
    let (samples, stats) = standardize_dataset(&raw).unwrap();
    let set = TrainingSet {
        name: "tiny".into(),
        fingerprint: cfg.fingerprint(),
        samples: samples.clone(),
        stats,
    };
    (samples, set)
}

fn composite_loss(model: &Model, examples: &[(MaskedExample, f64)]) -> f64 {
    examples
        .iter()
        .map(|(ex, w)| {
            let pred = model.predict_graph(&ex.graph, &ex.layout).unwrap();
            let pred = pred.as_slice().unwrap();
            let hat: Vec<f64> = ex.layout.masked.iter().map(|&i| pred[i]).collect();
            let idx: Vec<usize> = (0..hat.len()).collect();
            w * masked_mse_loss(&hat, &ex.targets, &idx).unwrap()
        })
        .sum()
}

/// Worst relative error between analytic and central-difference gradients
/// over every scalar parameter, with the parameter name where it occurs.
/// The denominator is `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(model: &mut Model, examples: &[(MaskedExample, f64)], h: f64, floor: f64) -> (f64, String) {
    let (_, grads) = compute_gradients(model, examples).unwrap();
    let mut worst = (0.0f64, String::new());
    for id in 0..model.params.len() {
        let pid = fmrme_core::nn::ParamId(id);
        let (rows, cols) = model.params.get(pid).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.params.get(pid)[[r, c]];
                model.params.get_mut(pid)[[r, c]] = orig + h;
                let up = composite_loss(model, examples);
                model.params.get_mut(pid)[[r, c]] = orig - h;
                let down = composite_loss(model, examples);
                model.params.get_mut(pid)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[id][[r, c]];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                if rel > worst.0 {
                    worst = (rel, format!("{}[{r},{c}] analytic={analytic:e} numeric={numeric:e}", model.params.name(pid)));
                }
            }
        }
    }
    worst
}

/// One example per masking strategy on the first tiny sample, each
/// weighted 1/3.
pub fn tiny_examples(model: &Model, sample: &RadioMapSample, seed: u64) -> Vec<(MaskedExample, f64)> {
    let mut r = rng(seed);
    let masks = [
        mask_spatial(sample.shape, 0.5, &mut r).unwrap(),
        mask_temporal(sample.shape, 2).unwrap(),
        mask_spectral_mixed(sample.shape, &[(0, 1.0), (1, 0.5)], &mut r).unwrap(),
    ];
    masks
        .iter()
        .map(|m| (MaskedExample::whole(model, sample, m).unwrap(), 1.0 / 3.0))
        .collect()
}

/// Gradient check of the tiny model at initialization and after 100
/// training steps. Returns both worst cases.
pub fn gradient_suite(seed: u64) -> [(f64, String); 2] {
    let (samples, set) = tiny_dataset(8, seed);
    let mut model = Model::new(tiny_model_config(), seed).unwrap();
    let examples = tiny_examples(&model, &samples[0], seed);
    let at_init = gradient_check(&mut model, &examples, 1e-5, GRAD_FLOOR);
    let cfg = TrainConfig {
        steps: 100,
        batch_size: 1,
        window_rows: None,
        seed,
        ..TrainConfig::default()
    };
    pretrain(&mut model, &[set], &cfg, |_| Ok(())).unwrap();
    let examples = tiny_examples(&model, &samples[1], seed + 1);
    let trained = gradient_check(&mut model, &examples, 1e-5, GRAD_FLOOR);
    [at_init, trained]
}

/// Gradients below this magnitude are compared in absolute terms: central
/// differences at h = 1e-5 carry about 1e-10 of rounding noise.
pub const GRAD_FLOOR: f64 = 1e-4;

/// Number of no-leakage cases whose output changed bit-wise when the
/// hidden voxels were overwritten with noise.
pub fn leakage_failures(cases: usize, seed: u64) -> usize {
    let cfg = DatasetConfig::new("leak", (6, 6), 3, 1.0, 2, 1200.0);
    let sim = Simulator::new(&cfg).unwrap();
    let model = Model::new(ModelConfig::default(), seed).unwrap();
    let mut r = rng(seed);
    let mut failures = 0;
    for case in 0..cases {
        let raw = sim.sample(sample_seed(seed, case)).unwrap();
        let (std, _) = standardize_dataset(std::slice::from_ref(&raw)).unwrap();
        let sample = &std[0];
        let mask = match case % 3 {
            0 => mask_spatial(sample.shape, r.gen_range(0.1..0.9), &mut r).unwrap(),
            1 => mask_temporal(sample.shape, r.gen_range(1..sample.shape.n_t)).unwrap(),
            _ => mask_spectral_mixed(sample.shape, &[(1, 1.0), (0, 0.5)], &mut r).unwrap(),
        };
        let mut noisy = sample.clone();
        for &i in &mask.masked {
            noisy.phi[i] += r.gen_range(-10.0..10.0);
        }
        let window = if case % 2 == 0 { None } else { Some(2) };
        let a = model.predict_tiled(sample, &mask, window).unwrap();
        let b = model.predict_tiled(&noisy, &mask, window).unwrap();
        if a.iter().zip(b.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            failures += 1;
        }
    }
    failures
}

fn randomize_norms(store: &mut ParamStore, layer: &AttentionLayer, r: &mut ChaCha8Rng) {
    for id in [layer.norm_attn.gain, layer.norm_attn.bias, layer.norm_ffn.gain, layer.norm_ffn.bias] {
        store.get_mut(id).mapv_inplace(|_| r.gen_range(-1.5..1.5));
    }
}

fn random_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> oracles::Mat {
    (0..n).map(|_| (0..d).map(|_| r.gen_range(-2.0..2.0)).collect()).collect()
}

/// Largest deviation of each module from its loop oracle over `cases`
/// random instances.
pub fn oracle_deviations(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut dev = vec![
        ("gafe_layer", 0.0f64),
        ("gafe_stack", 0.0),
        ("attention_layer", 0.0),
        ("ffn", 0.0),
        ("model_forward", 0.0),
        ("model_forward_masked", 0.0),
        ("kriging", 0.0),
        ("masked_mse", 0.0),
        ("rmse", 0.0),
    ];
    let mut bump = |name: &str, v: f64| {
        let slot = dev.iter_mut().find(|(n, _)| *n == name).unwrap();
        slot.1 = slot.1.max(v);
    };
    let shape = MapShape::new(5, 5, 3, 2);
    for case in 0..cases {
        // GAFE, one layer and the default two-layer stack.
        for (name, layers) in [("gafe_layer", 1), ("gafe_stack", 2)] {
            let mut store = ParamStore::new();
            let cfg = GafeConfig {
                d_h: 6,
                d_m: 5,
                d_out: 7,
                layers,
            };
            let gafe = Gafe::new(&mut store, cfg, &mut r).unwrap();
            let n = r.gen_range(2..=12);
            let graph = random_graph(&mut r, n, shape, 3);
            let got = gafe_output(&store, &gafe, &graph);
            bump(name, max_abs_diff(&got, &flatten(&oracles::gafe(&graph, &store, &gafe))));
        }

        // Attention layer with non-trivial norm parameters.
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "l", 16, 4, &mut r);
        randomize_norms(&mut store, &layer, &mut r);
        let rows = r.gen_range(1..=7);
        let xs = random_rows(&mut r, rows, 16);
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape);
        let x = tape.constant(to_array(&xs));
        let y = layer.forward(&mut tape, &p, x);
        let got: Vec<f64> = tape.value(y).iter().copied().collect();
        bump("attention_layer", max_abs_diff(&got, &flatten(&oracles::attention_layer(&xs, &store, &layer))));

        // Feed-forward block.
        let mut store = ParamStore::new();
        let ffn = Mlp::new(&mut store, "ffn", [8, 32, 8], &mut r);
        let xs = random_rows(&mut r, 5, 8);
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape);
        let x = tape.constant(to_array(&xs));
        let y = ffn.forward(&mut tape, &p, x);
        let got: Vec<f64> = tape.value(y).iter().copied().collect();
        let want: oracles::Mat = xs.iter().map(|row| oracles::mlp(row, &store, &ffn)).collect();
        bump("ffn", max_abs_diff(&got, &flatten(&want)));

        // Whole model on a small map.
        if case < 5 {
            let model = Model::new(tiny_model_config(), seed + case as u64).unwrap();
            let n = r.gen_range(3..=20);
            let graph = random_graph(&mut r, n, shape, model.config.k_neighbors);
            let layout = TokenLayout::from_graph(&graph, shape.len(), r.gen_range(0..100)).unwrap();
            let got = model.predict_graph(&graph, &layout).unwrap();
            let want = oracles::model_forward(&model, &graph, &layout);
            bump("model_forward", max_abs_diff(got.as_slice().unwrap(), &want));
            if !layout.masked.is_empty() {
                let mut tape = Tape::inference();
                let p = model.params.bind(&mut tape);
                let out = model.forward_masked(&mut tape, &p, &graph, &layout).unwrap();
                let got: Vec<f64> = tape.value(out).column(0).to_vec();
                let want: Vec<f64> = layout.masked.iter().map(|&i| want[i]).collect();
                bump("model_forward_masked", max_abs_diff(&got, &want));
            }
        }

        // Kriging against the dense bordered solve.
        let n = r.gen_range(2..=8);
        let pos: Vec<[f64; 2]> = (0..n).map(|_| [r.gen_range(0.0..10.0), r.gen_range(0.0..10.0)]).collect();
        let vals: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let (var, ell, nugget) = (r.gen_range(0.5..2.0), r.gen_range(1.0..4.0), 1e-3);
        let fit = kriging_fit(&pos, &vals, var, ell, nugget).unwrap();
        for _ in 0..5 {
            let q = [r.gen_range(0.0..10.0), r.gen_range(0.0..10.0)];
            let (want, wts) = oracles::kriging(&pos, &vals, var, ell, nugget, q);
            bump("kriging", (fit.predict(q) - want).abs());
            bump("kriging", max_abs_diff(fit.weights(q).as_slice().unwrap(), &wts));
        }

        // Losses and metrics.
        let len = r.gen_range(2..40);
        let hat: Vec<f64> = (0..len).map(|_| r.gen_range(-5.0..5.0)).collect();
        let truth: Vec<f64> = (0..len).map(|_| r.gen_range(-5.0..5.0)).collect();
        let count = r.gen_range(1..=len);
        let mut masked = sample_indices(&mut r, len, count).into_vec();
        masked.sort_unstable();
        let lib = masked_mse_loss(&hat, &truth, &masked).unwrap();
        let mut tape = Tape::new();
        let pred = tape.constant(Array2::from_shape_vec((len, 1), hat.clone()).unwrap());
        let targets: Vec<f64> = masked.iter().map(|&i| truth[i]).collect();
        let loss = tape.masked_mse(pred, masked.clone(), targets);
        let want = oracles::masked_mse(&hat, &truth, &masked);
        bump("masked_mse", (lib - want).abs().max((tape.value(loss)[[0, 0]] - want).abs()));
        let got = fmrme_core::eval::rmse(&hat, &truth, &masked).unwrap();
        bump("rmse", (got - oracles::rmse(&hat, &truth, &masked)).abs());
    }
    dev
}

/// Per-module oracle tolerances.
pub fn oracle_tolerance(name: &str) -> f64 {
    match name {
        "gafe_layer" | "gafe_stack" | "attention_layer" | "ffn" => 1e-10,
        "model_forward" | "model_forward_masked" => 1e-9,
        "kriging" => 1e-8,
        _ => 1e-12,
    }
}

/// Zero-nugget interpolation error at the sample sites and the largest
/// `|Σ w − 1|` over `queries` random queries, across `trials` point sets.
pub fn kriging_properties(trials: usize, queries: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (mut interp, mut sum_err) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let n = r.gen_range(3..=25);
        // Jittered lattice keeps sites apart so the zero-nugget system is
        // well conditioned.
        let side = (n as f64).sqrt().ceil() as usize;
        let pos: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                [
                    (i % side) as f64 * 2.0 + r.gen_range(-0.4..0.4),
                    (i / side) as f64 * 2.0 + r.gen_range(-0.4..0.4),
                ]
            })
            .collect();
        let vals: Vec<f64> = (0..n).map(|_| r.gen_range(-90.0..-40.0)).collect();
        let ell = mean_nearest_neighbor_distance(&pos).unwrap();
        let fit = kriging_fit(&pos, &vals, 25.0, ell, 0.0).unwrap();
        for (p, v) in pos.iter().zip(&vals) {
            interp = interp.max((fit.predict(*p) - v).abs());
        }
        let extent = side as f64 * 2.0;
        for _ in 0..queries {
            let q = [r.gen_range(-1.0..extent), r.gen_range(-1.0..extent)];
            sum_err = sum_err.max((fit.weights(q).sum() - 1.0).abs());
        }
    }
    (interp, sum_err)
}

/// Largest relative gap between the noise-free multi-transmitter render
/// and the sum of single-transmitter renders.
pub fn superposition_error(scenarios: usize, seed: u64) -> f64 {
    let mut cfg = DatasetConfig::new("sup", (10, 10), 3, 1.0, 2, 1200.0);
    cfg.noise_psd_dbm = None;
    cfg.tx_count_range = (2, 4);
    let sampler = ShadowingSampler::new(&cfg).unwrap();
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..scenarios {
        let scenario = draw_scenario(&cfg, &sampler, &mut r).unwrap();
        let full = render_linear(&cfg, &scenario, true);
        let mut sum = vec![0.0; full.len()];
        for k in 0..scenario.tx_count() {
            for (s, v) in sum.iter_mut().zip(render_linear(&cfg, &scenario.subset(&[k]), true)) {
                *s += v;
            }
        }
        for (a, b) in full.iter().zip(&sum) {
            worst = worst.max((a - b).abs() / a.abs());
        }
    }
    worst
}

/// Ratio of the empirical shadowing variance (pooled over cells) to σ²
/// over `draws` independent fields.
pub fn shadowing_variance_ratio(draws: usize, seed: u64) -> f64 {
    let cfg = DatasetConfig::new("shadow", (12, 12), 1, 1.0, 1, 1200.0);
    let sampler = ShadowingSampler::new(&cfg).unwrap();
    assert!(sampler.is_exact());
    let mut r = rng(seed);
    let cells = 144;
    let mut sum = vec![0.0; cells];
    let mut sq = vec![0.0; cells];
    for _ in 0..draws {
        let field = sampler.sample(&mut r);
        for (i, v) in field.values.iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let n = draws as f64;
    let var: f64 = (0..cells)
        .map(|i| (sq[i] - sum[i] * sum[i] / n) / (n - 1.0))
        .sum::<f64>()
        / cells as f64;
    let sigma = cfg.propagation.sigma_db;
    var / (sigma * sigma)
}

/// Transmitter step statistics over `scenarios` draws: the range of path
/// lengths per step in units of Δt, and the largest gap between the
/// straight-line displacement and the path length on steps that did not
/// touch a wall.
pub fn displacement_ranges(scenarios: usize, seed: u64) -> ((f64, f64), f64) {
    let mut cfg = DatasetConfig::new("move", (8, 8), 12, 1.5, 1, 1200.0);
    cfg.tx_count_range = (1, 5);
    let sampler = ShadowingSampler::new(&cfg).unwrap();
    let mut r = rng(seed);
    let (mut lo, mut hi, mut gap) = (f64::INFINITY, 0.0f64, 0.0f64);
    let len = cfg.region_m;
    for _ in 0..scenarios {
        let scenario = draw_scenario(&cfg, &sampler, &mut r).unwrap();
        for pair in scenario.trajectories.windows(2) {
            for (a, b) in pair[0].iter().zip(&pair[1]) {
                let per_dt = b.last_path_m / cfg.delta_t_s;
                lo = lo.min(per_dt);
                hi = hi.max(per_dt);
                let free = [
                    a.position_m[0] + a.velocity_mps[0] * cfg.delta_t_s,
                    a.position_m[1] + a.velocity_mps[1] * cfg.delta_t_s,
                ];
                if free.iter().all(|&c| (0.0..=len).contains(&c)) {
                    let d = ((b.position_m[0] - a.position_m[0]).powi(2) + (b.position_m[1] - a.position_m[1]).powi(2)).sqrt();
                    gap = gap.max((d - b.last_path_m).abs());
                }
            }
        }
    }
    ((lo, hi), gap)
}

/// Helper for tests that need a standardized simulated sample.
pub fn standardized_sample(cfg: &DatasetConfig, seed: u64) -> RadioMapSample {
    let raw = Simulator::new(cfg).unwrap().sample(seed).unwrap();
    standardize_dataset(std::slice::from_ref(&raw)).unwrap().0.remove(0)
}

pub fn mask_from_indices(shape: MapShape, visible: &[usize]) -> MaskPartition {
    let mut flags = vec![false; shape.len()];
    for &i in visible {
        flags[i] = true;
    }
    MaskPartition::from_visibility(shape, &flags).unwrap()
}
