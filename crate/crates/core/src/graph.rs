//! Gridless geometric graph over the visible voxels.
//!
//! Each visible voxel becomes a node carrying a scalar feature triple
//! `(psd, f_norm, t_norm)` and a 2D position. Every node is linked to its `k`
//! spatially nearest nodes; equal distances (including the many voxels that
//! share one location at different slots and bands) are ranked by
//! `(|Δt|, |Δf|, flat index)`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::masking::MaskPartition;
use crate::shape::MapShape;
use crate::simulator::RadioMapSample;

pub const DEFAULT_K: usize = 8;

/// Relative width of a distance tie group, measured against the largest
/// distance from the query node. Keeps neighbor ranking stable when rigid
/// motions perturb distances at rounding level.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelNode {
    /// Flat voxel index in the source tensor.
    pub index: usize,
    /// `(psd, f_norm, t_norm)`.
    pub h0: [f64; 3],
    pub p: [f64; 2],
    pub t: usize,
    pub f: usize,
}

/// Invariant scalars attached to an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttr {
    pub dist_sq: f64,
    pub df_abs: f64,
    pub dt_abs: f64,
}

/// Directed edge: node `target` aggregates a message from node `source`.
/// Both are positions in the node list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub target: usize,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricGraph {
    pub nodes: Vec<VoxelNode>,
    pub edges: Vec<Edge>,
    pub attrs: Vec<EdgeAttr>,
    /// Length that positions are divided by before entering learned layers.
    pub coord_scale: f64,
    /// `n_t - 1` and `n_f - 1` (at least 1), used to normalize index gaps.
    pub t_span: f64,
    pub f_span: f64,
}

/// One node per visible voxel, ordered by flat index.
pub fn build_nodes(sample: &RadioMapSample, mask: &MaskPartition) -> Result<Vec<VoxelNode>> {
    if mask.shape != sample.shape {
        return Err(Error::ShapeMismatch {
            expected: sample.shape.dims().to_vec(),
            actual: mask.shape.dims().to_vec(),
        });
    }
    if mask.visible.is_empty() {
        return Err(Error::EmptyInput("no visible voxels".into()));
    }
    let shape = sample.shape;
    Ok(mask
        .visible
        .iter()
        .map(|&index| {
            let v = shape.voxel(index);
            VoxelNode {
                index,
                h0: [sample.phi[index], shape.f_norm(v.f), shape.t_norm(v.t)],
                p: [v.x as f64, v.y as f64],
                t: v.t,
                f: v.f,
            }
        })
        .collect())
}

pub fn edge_attributes(a: &VoxelNode, b: &VoxelNode) -> EdgeAttr {
    let dx = a.p[0] - b.p[0];
    let dy = a.p[1] - b.p[1];
    EdgeAttr {
        dist_sq: dx * dx + dy * dy,
        df_abs: a.f.abs_diff(b.f) as f64,
        dt_abs: a.t.abs_diff(b.t) as f64,
    }
}

/// `k` nearest neighbors of every node, grouped by target in node order and
/// ranked within each group.
pub fn knn_edges(nodes: &[VoxelNode], k: usize) -> Result<Vec<Edge>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if nodes.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "a graph needs at least 2 nodes, got {}",
            nodes.len()
        )));
    }
    let n = nodes.len();
    let take = k.min(n - 1);
    let mut edges = Vec::with_capacity(n * take);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for (i, node) in nodes.iter().enumerate() {
        dists.clear();
        dists.extend(
            nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, other)| (edge_attributes(node, other).dist_sq, j)),
        );
        let max_d = dists.iter().map(|d| d.0).fold(0.0_f64, f64::max);
        let tol = TIE_TOLERANCE * max_d;

        // Candidate pool: everything within tolerance of the take-th distance.
        let cut = {
            let (_, kth, _) = dists.select_nth_unstable_by(take - 1, |a, b| a.0.total_cmp(&b.0));
            kth.0 + tol
        };
        let mut pool: Vec<(f64, usize)> = dists.iter().copied().filter(|d| d.0 <= cut).collect();
        pool.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Integer tie groups: consecutive distances closer than `tol` share one.
        let mut ranked: Vec<(usize, usize, usize, usize, usize)> = Vec::with_capacity(pool.len());
        let mut group = 0usize;
        for (pos, &(d, j)) in pool.iter().enumerate() {
            if pos > 0 && d - pool[pos - 1].0 > tol {
                group += 1;
            }
            let other = &nodes[j];
            ranked.push((
                group,
                node.t.abs_diff(other.t),
                node.f.abs_diff(other.f),
                other.index,
                j,
            ));
        }
        ranked.sort_unstable_by(|a, b| match a.0.cmp(&b.0) {
            Ordering::Equal => (a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)),
            o => o,
        });
        edges.extend(ranked.iter().take(take).map(|r| Edge {
            target: i,
            source: r.4,
        }));
    }
    Ok(edges)
}

/// Grid diagonal `sqrt(n_x² + n_y²)`.
pub fn grid_diagonal(n_x: usize, n_y: usize) -> f64 {
    ((n_x * n_x + n_y * n_y) as f64).sqrt()
}

impl GeometricGraph {
    /// Builds the graph for the visible part of `sample` with positions
    /// normalized by `coord_scale`.
    pub fn build_scaled(
        sample: &RadioMapSample,
        mask: &MaskPartition,
        k: usize,
        coord_scale: f64,
    ) -> Result<Self> {
        let nodes = build_nodes(sample, mask)?;
        Self::from_nodes(nodes, k, coord_scale, sample.shape)
    }

    /// Builds the graph with the sample's own grid diagonal as scale.
    pub fn build(sample: &RadioMapSample, mask: &MaskPartition, k: usize) -> Result<Self> {
        let scale = grid_diagonal(sample.shape.n_x, sample.shape.n_y);
        Self::build_scaled(sample, mask, k, scale)
    }

    pub fn from_nodes(nodes: Vec<VoxelNode>, k: usize, coord_scale: f64, shape: MapShape) -> Result<Self> {
        if !(coord_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("coord_scale {coord_scale} must be > 0")));
        }
        let edges = if nodes.len() == 1 {
            Vec::new()
        } else {
            knn_edges(&nodes, k)?
        };
        let mut graph = Self {
            nodes,
            edges,
            attrs: Vec::new(),
            coord_scale,
            t_span: shape.n_t.saturating_sub(1).max(1) as f64,
            f_span: shape.n_f.saturating_sub(1).max(1) as f64,
        };
        graph.refresh_attrs();
        Ok(graph)
    }

    /// Recomputes edge attributes from current node positions.
    pub fn refresh_attrs(&mut self) {
        self.attrs = self
            .edges
            .iter()
            .map(|e| edge_attributes(&self.nodes[e.target], &self.nodes[e.source]))
            .collect();
    }

    /// Applies `p ↦ R p + τ` to every node, keeping the edge set.
    pub fn transform_positions(&mut self, angle: f64, translation: [f64; 2]) {
        let (s, c) = angle.sin_cos();
        for node in &mut self.nodes {
            let [x, y] = node.p;
            node.p = [c * x - s * y + translation[0], s * x + c * y + translation[1]];
        }
        self.refresh_attrs();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scale-normalized g_s edge inputs `(dist², |Δf|/f_span, |Δt|/t_span)`.
    pub fn edge_inputs(&self) -> Vec<[f64; 3]> {
        let s2 = self.coord_scale * self.coord_scale;
        self.attrs
            .iter()
            .map(|a| [a.dist_sq / s2, a.df_abs / self.f_span, a.dt_abs / self.t_span])
            .collect()
    }

    /// Scale-normalized `p_target - p_source` per edge.
    pub fn edge_offsets(&self) -> Vec<[f64; 2]> {
        self.edges
            .iter()
            .map(|e| {
                let a = self.nodes[e.target].p;
                let b = self.nodes[e.source].p;
                [(a[0] - b[0]) / self.coord_scale, (a[1] - b[1]) / self.coord_scale]
            })
            .collect()
    }
}
