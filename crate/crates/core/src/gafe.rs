//! Geometry-aware feature extraction.
//!
//! `L` rounds of message passing over the visible-voxel graph. Positions
//! enter only through invariant scalars (squared distance, the norm of the
//! aggregated vector message), so node features are unchanged by any
//! rotation or translation of the plane. Positions themselves are never
//! updated.
//!
//! Per layer, for every edge `i ← j`:
//!
//! ```text
//! m_ij  = g_s([h_i, h_j, ‖p_i − p_j‖², |Δf|, |Δt|])
//! M_ij  = (p_i − p_j) · g_v(m_ij)
//! h_i' = h_i + g_h([h_i, Σ_j m_ij, ‖Σ_j M_ij‖])
//! ```

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GeometricGraph;
use crate::nn::{Bound, Linear, Mlp, ParamStore};
use crate::tape::{Tape, Var};

/// Width of the raw node feature `(psd, f_norm, t_norm)`.
pub const NODE_INPUT_WIDTH: usize = 3;
/// Width of the invariant edge input `(dist², |Δf|, |Δt|)`.
pub const EDGE_INPUT_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GafeConfig {
    /// Node feature width.
    pub d_h: usize,
    /// Scalar message width.
    pub d_m: usize,
    /// Output (model) width.
    pub d_out: usize,
    pub layers: usize,
}

impl Default for GafeConfig {
    fn default() -> Self {
        Self {
            d_h: 32,
            d_m: 32,
            d_out: 64,
            layers: 2,
        }
    }
}

/// The three perceptrons of one message-passing layer.
#[derive(Debug, Clone, Copy)]
pub struct GafeLayerParams {
    pub g_s: Mlp,
    pub g_v: Mlp,
    pub g_h: Mlp,
}

#[derive(Debug, Clone)]
pub struct Gafe {
    pub config: GafeConfig,
    pub input: Linear,
    pub layers: Vec<GafeLayerParams>,
    pub output: Linear,
}

impl Gafe {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: GafeConfig, rng: &mut R) -> Result<Self> {
        if config.layers == 0 || config.d_h == 0 || config.d_m == 0 || config.d_out == 0 {
            return Err(Error::Config(format!("invalid GAFE config {config:?}")));
        }
        let GafeConfig { d_h, d_m, d_out, .. } = config;
        let input = Linear::new(store, "gafe.input", NODE_INPUT_WIDTH, d_h, rng);
        let layers = (0..config.layers)
            .map(|l| GafeLayerParams {
                g_s: Mlp::new(store, &format!("gafe.{l}.g_s"), [2 * d_h + EDGE_INPUT_WIDTH, d_m, d_m], rng),
                g_v: Mlp::new(store, &format!("gafe.{l}.g_v"), [d_m, d_m, 1], rng),
                g_h: Mlp::new(store, &format!("gafe.{l}.g_h"), [d_h + d_m + 1, d_h, d_h], rng),
            })
            .collect();
        let output = Linear::new(store, "gafe.output", d_h, d_out, rng);
        Ok(Self {
            config,
            input,
            layers,
            output,
        })
    }
}

/// Graph data placed on a tape as constants.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub h0: Var,
    pub edge_inputs: Var,
    pub offsets: Var,
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    pub n_nodes: usize,
}

impl GraphInputs {
    pub fn new(tape: &mut Tape, graph: &GeometricGraph) -> Self {
        let n = graph.len();
        let e = graph.edges.len();
        let h0 = Array2::from_shape_fn((n, NODE_INPUT_WIDTH), |(i, c)| graph.nodes[i].h0[c]);
        let ein = graph.edge_inputs();
        let off = graph.edge_offsets();
        Self {
            h0: tape.constant(h0),
            edge_inputs: tape.constant(Array2::from_shape_fn((e, EDGE_INPUT_WIDTH), |(r, c)| ein[r][c])),
            offsets: tape.constant(Array2::from_shape_fn((e, 2), |(r, c)| off[r][c])),
            targets: graph.edges.iter().map(|e| e.target).collect(),
            sources: graph.edges.iter().map(|e| e.source).collect(),
            n_nodes: n,
        }
    }
}

/// `m_ij` for every edge, `E × d_m`.
pub fn scalar_messages(tape: &mut Tape, p: &Bound, layer: &GafeLayerParams, h: Var, g: &GraphInputs) -> Var {
    let hi = tape.gather_rows(h, g.targets.clone());
    let hj = tape.gather_rows(h, g.sources.clone());
    let input = tape.concat_cols(&[hi, hj, g.edge_inputs]);
    layer.g_s.forward(tape, p, input)
}

/// `M_ij = (p_i − p_j) g_v(m_ij)` for every edge, `E × 2`.
pub fn vector_messages(tape: &mut Tape, p: &Bound, layer: &GafeLayerParams, m: Var, offsets: Var) -> Var {
    let weight = layer.g_v.forward(tape, p, m);
    tape.mul_row_scalar(offsets, weight)
}

/// Per-node sums of scalar and vector messages. Nodes without incoming
/// edges get zeros.
pub fn aggregate(tape: &mut Tape, m: Var, vm: Var, targets: &[usize], n_nodes: usize) -> (Var, Var) {
    let ms = tape.scatter_add_rows(m, targets.to_vec(), n_nodes);
    let mv = tape.scatter_add_rows(vm, targets.to_vec(), n_nodes);
    (ms, mv)
}

/// `h + g_h([h, M_scalar, ‖M_vector‖])`.
pub fn update_nodes(tape: &mut Tape, p: &Bound, layer: &GafeLayerParams, h: Var, m_scalar: Var, m_vector: Var) -> Result<Var> {
    let [d_in, _, d_out] = layer.g_h.widths();
    let (n, d_h) = tape.value(h).dim();
    let d_m = tape.value(m_scalar).ncols();
    if d_in != d_h + d_m + 1 || d_out != d_h || tape.value(m_scalar).nrows() != n || tape.value(m_vector).nrows() != n {
        return Err(Error::Config(format!(
            "g_h expects {d_in} -> {d_out}, got h {d_h}, messages {d_m}"
        )));
    }
    let norm = tape.row_norm(m_vector);
    let input = tape.concat_cols(&[h, m_scalar, norm]);
    let delta = layer.g_h.forward(tape, p, input);
    Ok(tape.add(h, delta))
}

/// One full message-passing layer.
pub fn gafe_layer(tape: &mut Tape, p: &Bound, layer: &GafeLayerParams, h: Var, g: &GraphInputs) -> Result<Var> {
    let m = scalar_messages(tape, p, layer, h, g);
    let vm = vector_messages(tape, p, layer, m, g.offsets);
    let (ms, mv) = aggregate(tape, m, vm, &g.targets, g.n_nodes);
    update_nodes(tape, p, layer, h, ms, mv)
}

/// Visible-node features `N_vis × d_out`, rows in node order.
pub fn gafe_forward(tape: &mut Tape, p: &Bound, gafe: &Gafe, graph: &GeometricGraph) -> Result<Var> {
    if graph.is_empty() {
        return Err(Error::EmptyInput("GAFE needs at least one node".into()));
    }
    let g = GraphInputs::new(tape, graph);
    let mut h = gafe.input.forward(tape, p, g.h0);
    for layer in &gafe.layers {
        h = gafe_layer(tape, p, layer, h, &g)?;
    }
    Ok(gafe.output.forward(tape, p, h))
}
