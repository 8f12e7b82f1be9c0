//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar output with
//! respect to every node that depends on a parameter leaf. The op set is
//! exactly what the model needs; layer norm and multi-head attention are
//! fused so their backward passes do not materialize per-element nodes.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu {
        a: Var,
        deriv: Array2<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    MulRowScalar(Var, Var),
    RowNorm(Var),
    Interleave {
        vis: Var,
        vis_rows: Vec<usize>,
        fill: Var,
        fill_rows: Vec<usize>,
    },
    MaskedMse {
        pred: Var,
        rows: Vec<usize>,
        target: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Operation recorder. Built fresh for each forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inference: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Derivative of [`gelu`], `Φ(x) + x φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that drops attention probabilities after use. Backward is not
    /// available on it.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            inference: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `a + 1 bᵀ` for a `1 × m` row `b`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::AddBias(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ng = self.ng(a);
        if self.inference || !ng {
            let value = self.value(a).mapv(gelu);
            return self.push(value, Op::Gelu { a, deriv: Array2::zeros((0, 0)) }, ng);
        }
        let x = self.value(a);
        let mut value = Array2::<f64>::zeros(x.raw_dim());
        let mut deriv = Array2::<f64>::zeros(x.raw_dim());
        Zip::from(&mut value).and(&mut deriv).and(x).for_each(|v, d, &x| {
            let e = libm::erf(x / std::f64::consts::SQRT_2);
            *v = 0.5 * x * (1.0 + e);
            let cdf = 0.5 * (1.0 + e);
            *d = cdf + x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        });
        self.push(value, Op::Gelu { a, deriv }, ng)
    }

    /// Row-wise standardization followed by a learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut xhat = Array2::<f64>::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (r, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row.iter()) {
                *o = (v - mean) * inv;
            }
        }
        let value = &xhat * self.value(gain) + self.value(bias);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Scaled dot-product attention over `heads` equal column blocks of the
    /// already-projected `q`, `k`, `v`. Heads are concatenated in order.
    /// `q` may have fewer rows than `k` and `v`; the output has one row per
    /// query.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (n, d) = self.value(q).dim();
        assert!(heads > 0 && d % heads == 0, "heads must divide width");
        assert_eq!(self.value(k).dim(), self.value(v).dim(), "keys and values must match");
        assert_eq!(self.value(k).ncols(), d, "queries and keys must have equal width");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::<f64>::zeros((n, d));
        let mut probs = Vec::with_capacity(if self.inference { 0 } else { heads });
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = self.value(q).slice(cols);
            let kh = self.value(k).slice(cols);
            let vh = self.value(v).slice(cols);
            let mut scores = qh.dot(&kh.t());
            softmax_rows(&mut scores, scale);
            out.slice_mut(cols).assign(&scores.dot(&vh));
            if !self.inference {
                probs.push(scores);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        )
    }

    /// `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let mut value = Array2::<f64>::zeros((idx.len(), xv.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&xv.row(i));
        }
        let ng = self.ng(x);
        self.push(value, Op::GatherRows(x, idx), ng)
    }

    /// `out[idx[r]] += x[r]` into `n_out` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Vec<usize>, n_out: usize) -> Var {
        let xv = self.value(x);
        let mut value = Array2::<f64>::zeros((n_out, xv.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            let mut row = value.row_mut(i);
            row += &xv.row(r);
        }
        let ng = self.ng(x);
        self.push(value, Op::ScatterAddRows(x, idx), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols needs equal row counts");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// `out[r, c] = x[r, c] * s[r, 0]`.
    pub fn mul_row_scalar(&mut self, x: Var, s: Var) -> Var {
        let value = self.value(x) * self.value(s);
        let ng = self.ng(x) || self.ng(s);
        self.push(value, Op::MulRowScalar(x, s), ng)
    }

    /// Euclidean norm of every row, as an `n × 1` column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        let ng = self.ng(x);
        self.push(value, Op::RowNorm(x), ng)
    }

    /// Places row `r` of `vis` at output row `vis_rows[r]` and the single
    /// row of `fill` at every row in `fill_rows`.
    pub fn interleave(&mut self, vis: Var, vis_rows: Vec<usize>, fill: Var, fill_rows: Vec<usize>) -> Var {
        let n = vis_rows.len() + fill_rows.len();
        let d = self.value(vis).ncols();
        let mut value = Array2::<f64>::zeros((n, d));
        {
            let vv = self.value(vis);
            for (r, &i) in vis_rows.iter().enumerate() {
                value.row_mut(i).assign(&vv.row(r));
            }
            let fv = self.value(fill).row(0);
            for &i in &fill_rows {
                value.row_mut(i).assign(&fv);
            }
        }
        let ng = self.ng(vis) || self.ng(fill);
        self.push(
            value,
            Op::Interleave {
                vis,
                vis_rows,
                fill,
                fill_rows,
            },
            ng,
        )
    }

    /// Mean of `(pred[rows[r], 0] - target[r])²`, as a `1 × 1` value.
    pub fn masked_mse(&mut self, pred: Var, rows: Vec<usize>, target: Vec<f64>) -> Var {
        assert_eq!(rows.len(), target.len());
        assert!(!rows.is_empty(), "masked_mse over an empty set");
        let pv = self.value(pred);
        let sum: f64 = rows
            .iter()
            .zip(&target)
            .map(|(&r, t)| (pv[[r, 0]] - t).powi(2))
            .sum();
        let value = Array2::from_elem((1, 1), sum / rows.len() as f64);
        let ng = self.ng(pred);
        self.push(value, Op::MaskedMse { pred, rows, target }, ng)
    }

    /// `Σ w_i x_i` over equally shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut value = Array2::<f64>::zeros(self.value(terms[0].0).raw_dim());
        for &(v, w) in terms {
            value.scaled_add(w, self.value(v));
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        self.push(value, Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Gradient of the scalar `root` (a `1 × 1` node) scaled by `seed`.
    pub fn backward(&self, root: Var, seed: f64) -> Gradients {
        assert!(!self.inference, "backward on an inference tape");
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), seed));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&node.op, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, op: &Op, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if ng(a) {
                    accumulate(&mut grads[a.0], g.dot(&self.value(*b).t()));
                }
                if ng(b) {
                    accumulate(&mut grads[b.0], self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                if ng(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if ng(b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::AddBias(a, b) => {
                if ng(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if ng(b) {
                    accumulate(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, c) => {
                if ng(a) {
                    accumulate(&mut grads[a.0], g * *c);
                }
            }
            Op::Gelu { a, deriv } => {
                if ng(a) {
                    accumulate(&mut grads[a.0], deriv * g);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if ng(gain) {
                    accumulate(&mut grads[gain.0], (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if ng(bias) {
                    accumulate(&mut grads[bias.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if ng(x) {
                    let dxhat = g * self.value(*gain);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::<f64>::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        let inv = inv_std[r];
                        Zip::from(dx.row_mut(r)).and(&dh).and(&xh).for_each(|o, &a, &b| {
                            *o = inv / d * (d * a - sum_dh - b * sum_dh_xh);
                        });
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (n, d) = self.value(*q).dim();
                let n_kv = self.value(*k).nrows();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::<f64>::zeros((n, d));
                let mut dk = Array2::<f64>::zeros((n_kv, d));
                let mut dv = Array2::<f64>::zeros((n_kv, d));
                for h in 0..*heads {
                    let cols = s![.., h * dh..(h + 1) * dh];
                    let p = &probs[h];
                    let go = g.slice(cols);
                    dv.slice_mut(cols).assign(&p.t().dot(&go));
                    let mut ds = go.dot(&self.value(*v).slice(cols).t());
                    for (mut ds_row, p_row) in ds.outer_iter_mut().zip(p.outer_iter()) {
                        let dot = ds_row.dot(&p_row);
                        Zip::from(&mut ds_row).and(&p_row).for_each(|a, &pv| {
                            *a = pv * (*a - dot) * scale;
                        });
                    }
                    dq.slice_mut(cols).assign(&ds.dot(&self.value(*k).slice(cols)));
                    dk.slice_mut(cols).assign(&ds.t().dot(&self.value(*q).slice(cols)));
                }
                if ng(q) {
                    accumulate(&mut grads[q.0], dq);
                }
                if ng(k) {
                    accumulate(&mut grads[k.0], dk);
                }
                if ng(v) {
                    accumulate(&mut grads[v.0], dv);
                }
            }
            Op::GatherRows(x, idx) => {
                if ng(x) {
                    let mut dx = Array2::<f64>::zeros(self.value(*x).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut row = dx.row_mut(i);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::ScatterAddRows(x, idx) => {
                if ng(x) {
                    let mut dx = Array2::<f64>::zeros(self.value(*x).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        dx.row_mut(r).assign(&g.row(i));
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if ng(p) {
                        accumulate(&mut grads[p.0], g.slice(s![.., c0..c0 + w]).to_owned());
                    }
                    c0 += w;
                }
            }
            Op::MulRowScalar(x, sc) => {
                if ng(x) {
                    accumulate(&mut grads[x.0], g * self.value(*sc));
                }
                if ng(sc) {
                    let ds = (g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads[sc.0], ds);
                }
            }
            Op::RowNorm(x) => {
                if ng(x) {
                    let xv = self.value(*x);
                    let mut dx = Array2::<f64>::zeros(xv.raw_dim());
                    for (r, row) in xv.outer_iter().enumerate() {
                        let norm = row.dot(&row).sqrt();
                        if norm > 0.0 {
                            let c = g[[r, 0]] / norm;
                            Zip::from(dx.row_mut(r)).and(&row).for_each(|o, &v| *o = c * v);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::Interleave {
                vis,
                vis_rows,
                fill,
                fill_rows,
            } => {
                if ng(vis) {
                    let mut dv = Array2::<f64>::zeros(self.value(*vis).raw_dim());
                    for (r, &i) in vis_rows.iter().enumerate() {
                        dv.row_mut(r).assign(&g.row(i));
                    }
                    accumulate(&mut grads[vis.0], dv);
                }
                if ng(fill) {
                    let mut df = Array2::<f64>::zeros(self.value(*fill).raw_dim());
                    for &i in fill_rows {
                        let mut row = df.row_mut(0);
                        row += &g.row(i);
                    }
                    accumulate(&mut grads[fill.0], df);
                }
            }
            Op::MaskedMse { pred, rows, target } => {
                if ng(pred) {
                    let pv = self.value(*pred);
                    let mut dp = Array2::<f64>::zeros(pv.raw_dim());
                    let c = 2.0 * g[[0, 0]] / rows.len() as f64;
                    for (&r, t) in rows.iter().zip(target) {
                        dp[[r, 0]] += c * (pv[[r, 0]] - t);
                    }
                    accumulate(&mut grads[pred.0], dp);
                }
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    if ng(v) {
                        accumulate(&mut grads[v.0], g * *w);
                    }
                }
            }
        }
    }
}

/// In-place numerically stable softmax of `scale * scores` along each row.
fn softmax_rows(scores: &mut Array2<f64>, scale: f64) {
    for mut row in scores.outer_iter_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) * scale).exp();
            sum += *v;
        }
        row /= sum;
    }
}
