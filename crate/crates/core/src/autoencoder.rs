//! Masked autoencoder over the flattened voxel sequence.
//!
//! Visible voxels are embedded by the GAFE, position-encoded by flat index
//! and passed through a pre-norm attention encoder. The decoder sees the
//! full sequence: encoded rows at their original positions, one shared
//! learned embedding at every masked position. A linear head maps each
//! decoder row to a standardized PSD value.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gafe::{gafe_forward, Gafe, GafeConfig};
use crate::graph::{grid_diagonal, GeometricGraph, DEFAULT_K};
use crate::masking::MaskPartition;
use crate::nn::{normal_row, Bound, Linear, Mlp, Norm, ParamId, ParamStore};
use crate::simulator::RadioMapSample;
use crate::tape::{Tape, Var};

/// Largest voxel count the decoder accepts by default. Decoder attention
/// is quadratic in this number.
pub const DEFAULT_MAX_TOKENS: usize = 16_384;
const PE_BASE: f64 = 10_000.0;
const MASK_EMBEDDING_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gafe: GafeConfig,
    /// Attention heads in both stacks.
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Decoder width.
    pub d_dec: usize,
    /// Neighbors per node in the visible graph.
    pub k_neighbors: usize,
    pub max_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gafe: GafeConfig::default(),
            heads: 4,
            enc_layers: 4,
            dec_layers: 2,
            d_dec: 32,
            k_neighbors: DEFAULT_K,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl ModelConfig {
    /// Encoder width.
    pub fn d_model(&self) -> usize {
        self.gafe.d_out
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        let bad = |msg: String| Err(Error::Config(msg));
        if self.gafe.layers == 0 || self.gafe.d_h == 0 || self.gafe.d_m == 0 {
            return bad(format!("invalid GAFE widths {:?}", self.gafe));
        }
        if d == 0 || d % 2 != 0 || self.d_dec == 0 || self.d_dec % 2 != 0 {
            return bad(format!("model widths must be even and positive, got {d} and {}", self.d_dec));
        }
        if self.heads == 0 || d % self.heads != 0 || self.d_dec % self.heads != 0 {
            return bad(format!("{} heads do not divide widths {d} and {}", self.heads, self.d_dec));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("encoder and decoder need at least one layer".into());
        }
        if self.k_neighbors == 0 || self.max_tokens == 0 {
            return bad("k_neighbors and max_tokens must be >= 1".into());
        }
        Ok(())
    }
}

/// Sinusoidal encoding of one position: dimension `2j` is
/// `sin(pos / 10000^(2j/D))`, dimension `2j + 1` the matching cosine.
pub fn sts_pe(pos: usize, width: usize) -> Result<Vec<f64>> {
    if width % 2 != 0 {
        return Err(Error::Config(format!("positional encoding width {width} must be even")));
    }
    let mut out = vec![0.0; width];
    for j in 0..width / 2 {
        let angle = pos as f64 / PE_BASE.powf(2.0 * j as f64 / width as f64);
        out[2 * j] = angle.sin();
        out[2 * j + 1] = angle.cos();
    }
    Ok(out)
}

/// Encodings of `positions` stacked as rows.
pub fn pe_matrix(positions: impl ExactSizeIterator<Item = usize>, width: usize) -> Result<Array2<f64>> {
    if width % 2 != 0 {
        return Err(Error::Config(format!("positional encoding width {width} must be even")));
    }
    let inv_freq: Vec<f64> = (0..width / 2)
        .map(|j| 1.0 / PE_BASE.powf(2.0 * j as f64 / width as f64))
        .collect();
    let mut out = Array2::zeros((positions.len(), width));
    for (r, pos) in positions.enumerate() {
        for (j, &w) in inv_freq.iter().enumerate() {
            let (s, c) = (pos as f64 * w).sin_cos();
            out[[r, 2 * j]] = s;
            out[[r, 2 * j + 1]] = c;
        }
    }
    Ok(out)
}

/// Multi-head self-attention with output projection.
#[derive(Debug, Clone, Copy)]
pub struct Mhsa {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl Mhsa {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.q"), width, width, rng),
            key: Linear::new(store, &format!("{name}.k"), width, width, rng),
            value: Linear::new(store, &format!("{name}.v"), width, width, rng),
            output: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        self.forward_queries(tape, p, x, x)
    }

    /// Attention of the rows of `x_q` over all rows of `x`.
    pub fn forward_queries(&self, tape: &mut Tape, p: &Bound, x_q: Var, x: Var) -> Var {
        let q = self.query.forward(tape, p, x_q);
        let k = self.key.forward(tape, p, x);
        let v = self.value.forward(tape, p, x);
        let a = tape.attention(q, k, v, self.heads);
        self.output.forward(tape, p, a)
    }
}

/// Pre-norm block `z + MHSA(LN(z))` followed by `z + FFN(LN(z))`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionLayer {
    pub norm_attn: Norm,
    pub attn: Mhsa,
    pub norm_ffn: Norm,
    pub ffn: Mlp,
}

impl AttentionLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            norm_attn: Norm::new(store, &format!("{name}.norm_attn"), width),
            attn: Mhsa::new(store, &format!("{name}.attn"), width, heads, rng),
            norm_ffn: Norm::new(store, &format!("{name}.norm_ffn"), width),
            ffn: Mlp::new(store, &format!("{name}.ffn"), [width, 4 * width, width], rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, z: Var) -> Var {
        let n = self.norm_attn.forward(tape, p, z);
        let a = self.attn.forward(tape, p, n);
        let z = tape.add(z, a);
        let n = self.norm_ffn.forward(tape, p, z);
        let f = self.ffn.forward(tape, p, n);
        tape.add(z, f)
    }

    /// The layer output at `rows` only, in that order. Every row still
    /// serves as key and value.
    pub fn forward_rows(&self, tape: &mut Tape, p: &Bound, z: Var, rows: Vec<usize>) -> Var {
        let n = self.norm_attn.forward(tape, p, z);
        let n_q = tape.gather_rows(n, rows.clone());
        let a = self.attn.forward_queries(tape, p, n_q, n);
        let z_q = tape.gather_rows(z, rows);
        let z = tape.add(z_q, a);
        let n = self.norm_ffn.forward(tape, p, z);
        let f = self.ffn.forward(tape, p, n);
        tape.add(z, f)
    }
}

/// Runs a stack of attention layers.
pub fn stack_forward(tape: &mut Tape, p: &Bound, layers: &[AttentionLayer], x: Var) -> Var {
    layers.iter().fold(x, |z, layer| layer.forward(tape, p, z))
}

/// Flat indices of visible and masked voxels, both ascending, plus the
/// offset added to every index before positional encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
    pub pos_offset: usize,
}

impl TokenLayout {
    /// Layout implied by a graph's node indices within `n_total` voxels.
    pub fn from_graph(graph: &GeometricGraph, n_total: usize, pos_offset: usize) -> Result<Self> {
        let visible: Vec<usize> = graph.nodes.iter().map(|n| n.index).collect();
        Self::new(visible, n_total, pos_offset)
    }

    pub fn new(visible: Vec<usize>, n_total: usize, pos_offset: usize) -> Result<Self> {
        if visible.is_empty() {
            return Err(Error::EmptyInput("no visible voxels".into()));
        }
        if visible.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Partition(crate::PartitionError::Unsorted(
                visible.windows(2).position(|w| w[0] >= w[1]).unwrap_or(0),
            )));
        }
        if let Some(&last) = visible.last() {
            if last >= n_total {
                return Err(Error::Partition(crate::PartitionError::OutOfRange {
                    index: last,
                    total: n_total,
                }));
            }
        }
        let mut masked = Vec::with_capacity(n_total - visible.len());
        let mut it = visible.iter().peekable();
        for i in 0..n_total {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                masked.push(i);
            }
        }
        Ok(Self {
            visible,
            masked,
            pos_offset,
        })
    }

    pub fn n_total(&self) -> usize {
        self.visible.len() + self.masked.len()
    }
}

/// Decoder input: adapted encoder rows at visible positions, the mask
/// embedding everywhere else, plus positional encoding of every position.
pub fn assemble_decoder_input(
    tape: &mut Tape,
    p: &Bound,
    z: Var,
    layout: &TokenLayout,
    adapter: &Linear,
    mask_embedding: ParamId,
) -> Result<Var> {
    let rows = tape.value(z).nrows();
    if rows != layout.visible.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![layout.visible.len()],
            actual: vec![rows],
        });
    }
    let adapted = adapter.forward(tape, p, z);
    let y = tape.interleave(adapted, layout.visible.clone(), p.var(mask_embedding), layout.masked.clone());
    let pe = pe_matrix(
        (0..layout.n_total()).map(|i| i + layout.pos_offset),
        adapter.fan_out,
    )?;
    let pe = tape.constant(pe);
    Ok(tape.add(y, pe))
}

/// Learned layout of the full model inside its parameter store.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub gafe: Gafe,
    pub encoder: Vec<AttentionLayer>,
    pub adapter: Linear,
    pub mask_embedding: ParamId,
    pub decoder: Vec<AttentionLayer>,
    pub head: Linear,
}

impl ModelLayout {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = config.d_model();
        let gafe = Gafe::new(store, config.gafe, rng)?;
        let encoder = (0..config.enc_layers)
            .map(|l| AttentionLayer::new(store, &format!("encoder.{l}"), d, config.heads, rng))
            .collect();
        let adapter = Linear::new(store, "adapter", d, config.d_dec, rng);
        let mask_embedding = store.add("mask_embedding", normal_row(rng, config.d_dec, MASK_EMBEDDING_STD));
        let decoder = (0..config.dec_layers)
            .map(|l| AttentionLayer::new(store, &format!("decoder.{l}"), config.d_dec, config.heads, rng))
            .collect();
        let head = Linear::new(store, "head", config.d_dec, 1, rng);
        Ok(Self {
            gafe,
            encoder,
            adapter,
            mask_embedding,
            decoder,
            head,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: ModelLayout,
}

impl Model {
    /// Freshly initialized model. All randomness comes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = ModelLayout::new(&mut params, &config, &mut rng)?;
        Ok(Self { config, params, layout })
    }

    /// Rebuilds a model from named tensors. Names and shapes must match the
    /// layout implied by `config` exactly.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if tensors.len() != model.params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (i, (name, value)) in tensors.into_iter().enumerate() {
            let id = ParamId(i);
            if model.params.name(id) != name {
                return Err(Error::Format(format!(
                    "tensor {i} is {name:?}, expected {:?}",
                    model.params.name(id)
                )));
            }
            let slot = model.params.get_mut(id);
            if slot.dim() != value.dim() {
                return Err(Error::ShapeMismatch {
                    expected: slot.shape().to_vec(),
                    actual: value.shape().to_vec(),
                });
            }
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("tensor {name:?} has non-finite entries")));
            }
            *slot = value;
        }
        Ok(model)
    }

    /// Visible graph with the model's neighbor count and the given position
    /// scale.
    pub fn graph(&self, sample: &RadioMapSample, mask: &MaskPartition, coord_scale: f64) -> Result<GeometricGraph> {
        GeometricGraph::build_scaled(sample, mask, self.config.k_neighbors, coord_scale)
    }

    /// Encoder output for the visible tokens, `N_vis × D`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, graph: &GeometricGraph, layout: &TokenLayout) -> Result<Var> {
        let h = gafe_forward(tape, p, &self.layout.gafe, graph)?;
        let pe = pe_matrix(
            layout.visible.iter().map(|&i| i + layout.pos_offset),
            self.config.d_model(),
        )?;
        let pe = tape.constant(pe);
        let z0 = tape.add(h, pe);
        Ok(stack_forward(tape, p, &self.layout.encoder, z0))
    }

    /// Standardized estimate for every voxel, as an `N × 1` column in flat
    /// index order.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, graph: &GeometricGraph, layout: &TokenLayout) -> Result<Var> {
        self.forward_impl(tape, p, graph, layout, None)
    }

    /// Estimates at the masked voxels only, as a column in `layout.masked`
    /// order. Equal to the masked rows of [`Model::forward`]; the last
    /// decoder layer skips the visible rows.
    pub fn forward_masked(&self, tape: &mut Tape, p: &Bound, graph: &GeometricGraph, layout: &TokenLayout) -> Result<Var> {
        self.forward_impl(tape, p, graph, layout, Some(layout.masked.clone()))
    }

    fn forward_impl(
        &self,
        tape: &mut Tape,
        p: &Bound,
        graph: &GeometricGraph,
        layout: &TokenLayout,
        rows: Option<Vec<usize>>,
    ) -> Result<Var> {
        let n = layout.n_total();
        if n > self.config.max_tokens {
            return Err(Error::InvalidArgument(format!(
                "{n} voxels exceed the decoder cap of {}",
                self.config.max_tokens
            )));
        }
        if graph.len() != layout.visible.len() || graph.nodes.iter().zip(&layout.visible).any(|(a, &b)| a.index != b) {
            return Err(Error::InvalidArgument("graph nodes do not match the visible token list".into()));
        }
        let z = self.encode(tape, p, graph, layout)?;
        let y0 = assemble_decoder_input(tape, p, z, layout, &self.layout.adapter, self.layout.mask_embedding)?;
        let y = match rows {
            None => stack_forward(tape, p, &self.layout.decoder, y0),
            Some(rows) => {
                let (last, front) = self.layout.decoder.split_last().expect("validated dec_layers >= 1");
                let y = stack_forward(tape, p, front, y0);
                last.forward_rows(tape, p, y, rows)
            }
        };
        Ok(self.layout.head.forward(tape, p, y))
    }

    /// Estimate from an already built graph, without recording gradients.
    pub fn predict_graph(&self, graph: &GeometricGraph, layout: &TokenLayout) -> Result<Array1<f64>> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, graph, layout)?;
        Ok(tape.value(out).column(0).to_owned())
    }

    /// Standardized estimate of the whole map of `sample` from its visible
    /// voxels.
    pub fn predict(&self, sample: &RadioMapSample, mask: &MaskPartition) -> Result<Array1<f64>> {
        let scale = grid_diagonal(sample.shape.n_x, sample.shape.n_y);
        let graph = self.graph(sample, mask, scale)?;
        let layout = TokenLayout::from_graph(&graph, sample.shape.len(), 0)?;
        self.predict_graph(&graph, &layout)
    }
}

impl Model {
    /// Whole-map estimate assembled from windows of `window_rows`
    /// consecutive `x` rows, one window per start row. Each window keeps the
    /// positional offsets and position scale of the full grid; a voxel's
    /// estimate is the mean over the windows that cover it. Voxels whose
    /// windows all lack visible voxels get the visible mean. `None`, or a
    /// window at least as wide as the map, runs the whole map at once.
    pub fn predict_tiled(&self, sample: &RadioMapSample, mask: &MaskPartition, window_rows: Option<usize>) -> Result<Array1<f64>> {
        let shape = sample.shape;
        let w = match window_rows {
            Some(w) if w == 0 => return Err(Error::InvalidArgument("window_rows must be >= 1".into())),
            Some(w) if w < shape.n_x => w,
            _ => return self.predict(sample, mask),
        };
        if mask.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.dims().to_vec(),
                actual: mask.shape.dims().to_vec(),
            });
        }
        if mask.visible.is_empty() {
            return Err(Error::EmptyInput("no visible voxels".into()));
        }
        let scale = grid_diagonal(shape.n_x, shape.n_y);
        let stride = shape.x_stride();
        let mut sum = Array1::<f64>::zeros(shape.len());
        let mut count = vec![0u32; shape.len()];
        for x0 in 0..=shape.n_x - w {
            let (lo, hi) = (x0 * stride, (x0 + w) * stride);
            let window = sample.x_window(x0, w)?;
            let flags: Vec<bool> = {
                let mut f = vec![false; hi - lo];
                for &i in mask.visible.iter().filter(|&&i| (lo..hi).contains(&i)) {
                    f[i - lo] = true;
                }
                f
            };
            if !flags.iter().any(|&v| v) {
                continue;
            }
            let wmask = MaskPartition::from_visibility(window.shape, &flags)?;
            let graph = self.graph(&window, &wmask, scale)?;
            let layout = TokenLayout::from_graph(&graph, window.shape.len(), lo)?;
            let pred = self.predict_graph(&graph, &layout)?;
            for (k, v) in pred.iter().enumerate() {
                sum[lo + k] += v;
                count[lo + k] += 1;
            }
        }
        let fill = mask.visible.iter().map(|&i| sample.phi[i]).sum::<f64>() / mask.visible.len() as f64;
        Ok(Array1::from_iter(
            sum.iter().zip(&count).map(|(&s, &c)| if c == 0 { fill } else { s / c as f64 }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::mask_spatial;
    use crate::shape::MapShape;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            gafe: GafeConfig {
                d_h: 8,
                d_m: 8,
                d_out: 8,
                layers: 1,
            },
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            d_dec: 4,
            k_neighbors: 3,
            max_tokens: 64,
        }
    }

    fn toy_sample(shape: MapShape) -> RadioMapSample {
        let phi = (0..shape.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        RadioMapSample::new(shape, phi).unwrap()
    }

    #[test]
    fn positional_encoding_values() {
        let zero = sts_pe(0, 6).unwrap();
        assert_eq!(zero, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let one = sts_pe(1, 4).unwrap();
        assert!((one[0] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!((one[1] - 0.540_302_305_868_139_8).abs() < 1e-15);
        assert!((one[2] - (0.01f64).sin()).abs() < 1e-15);
        assert!(matches!(sts_pe(3, 5), Err(Error::Config(_))));
        for pos in [7usize, 123, 99_999] {
            assert!(sts_pe(pos, 64).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn layout_splits_indices() {
        let l = TokenLayout::new(vec![1, 4], 6, 0).unwrap();
        assert_eq!(l.masked, vec![0, 2, 3, 5]);
        assert!(TokenLayout::new(vec![4, 1], 6, 0).is_err());
        assert!(TokenLayout::new(vec![6], 6, 0).is_err());
        assert!(TokenLayout::new(vec![], 6, 0).is_err());
    }

    #[test]
    fn zeroed_stack_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = AttentionLayer::new(&mut store, "l", 4, 2, &mut rng);
        for id in [layer.attn.output.w, layer.attn.output.b, layer.ffn.out.w, layer.ffn.out.b] {
            store.get_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1));
        let y = stack_forward(&mut tape, &p, &[layer], x);
        assert_eq!(tape.value(x), tape.value(y));
    }

    #[test]
    fn decoder_input_uses_shared_mask_rows() {
        let model = Model::new(tiny_config(), 3).unwrap();
        let layout = TokenLayout::new(vec![0, 3], 5, 0).unwrap();
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let z = tape.constant(Array2::from_elem((2, 8), 0.5));
        let y = assemble_decoder_input(&mut tape, &p, z, &layout, &model.layout.adapter, model.layout.mask_embedding)
            .unwrap();
        let y = tape.value(y);
        assert_eq!(y.nrows(), 5);
        let h = model.params.get(model.layout.mask_embedding);
        for &r in &layout.masked {
            let pe = sts_pe(r, 4).unwrap();
            for c in 0..4 {
                assert!((y[[r, c]] - pe[c] - h[[0, c]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_shape_and_token_cap() {
        let shape = MapShape::new(3, 3, 2, 2);
        let sample = toy_sample(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = mask_spatial(shape, 0.5, &mut rng).unwrap();
        let model = Model::new(tiny_config(), 5).unwrap();
        let out = model.predict(&sample, &mask).unwrap();
        assert_eq!(out.len(), shape.len());
        let mut capped = tiny_config();
        capped.max_tokens = shape.len() - 1;
        let model = Model::new(capped, 5).unwrap();
        assert!(matches!(model.predict(&sample, &mask), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn masked_values_do_not_matter() {
        let shape = MapShape::new(3, 3, 2, 2);
        let mut sample = toy_sample(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mask = mask_spatial(shape, 0.6, &mut rng).unwrap();
        let model = Model::new(tiny_config(), 7).unwrap();
        let a = model.predict(&sample, &mask).unwrap();
        for &i in &mask.masked {
            sample.phi[i] += 100.0;
        }
        let b = model.predict(&sample, &mask).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_window_tiling_matches_whole_map() {
        let shape = MapShape::new(3, 2, 2, 2);
        let sample = toy_sample(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mask = mask_spatial(shape, 0.5, &mut rng).unwrap();
        let model = Model::new(tiny_config(), 10).unwrap();
        let whole = model.predict(&sample, &mask).unwrap();
        assert_eq!(model.predict_tiled(&sample, &mask, Some(3)).unwrap(), whole);
        assert_eq!(model.predict_tiled(&sample, &mask, None).unwrap(), whole);
        let tiled = model.predict_tiled(&sample, &mask, Some(1)).unwrap();
        assert_eq!(tiled.len(), shape.len());
        assert!(tiled.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tensors_roundtrip_and_reject_mismatch() {
        let model = Model::new(tiny_config(), 8).unwrap();
        let tensors: Vec<_> = model
            .params
            .names()
            .iter()
            .cloned()
            .zip(model.params.tensors().iter().cloned())
            .collect();
        let back = Model::from_tensors(tiny_config(), tensors.clone()).unwrap();
        assert_eq!(back.params, model.params);
        let mut bad = tensors.clone();
        bad[0].1 = Array2::zeros((1, 1));
        assert!(Model::from_tensors(tiny_config(), bad).is_err());
        let mut renamed = tensors;
        renamed[1].0 = "other".into();
        assert!(Model::from_tensors(tiny_config(), renamed).is_err());
    }
}
