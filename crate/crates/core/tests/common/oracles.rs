//! Straight-line reference implementations used as test oracles.
//!
//! Everything here is written with plain nested loops over `Vec`s and shares
//! no code with the library beyond reading parameter values.

#![allow(dead_code)]

use fmrme_core::autoencoder::{AttentionLayer, Mhsa, Model, TokenLayout};
use fmrme_core::gafe::Gafe;
use fmrme_core::graph::GeometricGraph;
use fmrme_core::nn::{Linear, Mlp, Norm, ParamId, ParamStore};

pub type Mat = Vec<Vec<f64>>;

pub fn tensor(store: &ParamStore, id: ParamId) -> Mat {
    let t = store.get(id);
    (0..t.nrows()).map(|r| (0..t.ncols()).map(|c| t[[r, c]]).collect()).collect()
}

pub fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn linear(x: &[f64], store: &ParamStore, l: &Linear) -> Vec<f64> {
    let w = tensor(store, l.w);
    let b = tensor(store, l.b);
    let mut out = vec![0.0; b[0].len()];
    for j in 0..out.len() {
        let mut s = b[0][j];
        for i in 0..x.len() {
            s += x[i] * w[i][j];
        }
        out[j] = s;
    }
    out
}

pub fn mlp(x: &[f64], store: &ParamStore, m: &Mlp) -> Vec<f64> {
    let h: Vec<f64> = linear(x, store, &m.hidden).into_iter().map(erf_gelu).collect();
    linear(&h, store, &m.out)
}

pub fn layer_norm(x: &[f64], store: &ParamStore, n: &Norm) -> Vec<f64> {
    let g = tensor(store, n.gain);
    let b = tensor(store, n.bias);
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * inv * g[0][i] + b[0][i])
        .collect()
}

/// Per-head, per-pair loop attention with output projection.
pub fn mhsa(xs: &Mat, store: &ParamStore, a: &Mhsa) -> Mat {
    let n = xs.len();
    let q: Mat = xs.iter().map(|x| linear(x, store, &a.query)).collect();
    let k: Mat = xs.iter().map(|x| linear(x, store, &a.key)).collect();
    let v: Mat = xs.iter().map(|x| linear(x, store, &a.value)).collect();
    let d = q[0].len();
    let dh = d / a.heads;
    let mut concat = vec![vec![0.0; d]; n];
    for h in 0..a.heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let mut scores = vec![0.0; n];
            for j in 0..n {
                let mut s = 0.0;
                for c in cols.clone() {
                    s += q[i][c] * k[j][c];
                }
                scores[j] = s / (dh as f64).sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in cols.clone() {
                let mut s = 0.0;
                for j in 0..n {
                    s += exps[j] / z * v[j][c];
                }
                concat[i][c] = s;
            }
        }
    }
    concat.iter().map(|row| linear(row, store, &a.output)).collect()
}

pub fn attention_layer(xs: &Mat, store: &ParamStore, l: &AttentionLayer) -> Mat {
    let normed: Mat = xs.iter().map(|x| layer_norm(x, store, &l.norm_attn)).collect();
    let att = mhsa(&normed, store, &l.attn);
    let mid: Mat = xs
        .iter()
        .zip(&att)
        .map(|(x, a)| x.iter().zip(a).map(|(p, q)| p + q).collect())
        .collect();
    mid.iter()
        .map(|z| {
            let f = mlp(&layer_norm(z, store, &l.norm_ffn), store, &l.ffn);
            z.iter().zip(&f).map(|(p, q)| p + q).collect()
        })
        .collect()
}

pub fn stack(xs: &Mat, store: &ParamStore, layers: &[AttentionLayer]) -> Mat {
    let mut z = xs.clone();
    for l in layers {
        z = attention_layer(&z, store, l);
    }
    z
}

pub fn sinusoid(pos: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(width);
    for dim in 0..width {
        let pair = (dim / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / width as f64);
        out.push(if dim % 2 == 0 { angle.sin() } else { angle.cos() });
    }
    out
}

/// Loop GAFE over an explicit node/edge description.
pub fn gafe(graph: &GeometricGraph, store: &ParamStore, g: &Gafe) -> Mat {
    let n = graph.nodes.len();
    let s = graph.coord_scale;
    let mut h: Mat = graph
        .nodes
        .iter()
        .map(|node| linear(&node.h0, store, &g.input))
        .collect();
    for layer in &g.layers {
        let d_m = layer.g_s.out.fan_out;
        let mut msc = vec![vec![0.0; d_m]; n];
        let mut mvec = vec![[0.0f64; 2]; n];
        for e in &graph.edges {
            let (i, j) = (e.target, e.source);
            let pi = graph.nodes[i].p;
            let pj = graph.nodes[j].p;
            let rel = [(pi[0] - pj[0]) / s, (pi[1] - pj[1]) / s];
            let dist_sq = rel[0] * rel[0] + rel[1] * rel[1];
            let df = (graph.nodes[i].f as f64 - graph.nodes[j].f as f64).abs() / graph.f_span;
            let dt = (graph.nodes[i].t as f64 - graph.nodes[j].t as f64).abs() / graph.t_span;
            let mut input = h[i].clone();
            input.extend_from_slice(&h[j]);
            input.extend_from_slice(&[dist_sq, df, dt]);
            let m = mlp(&input, store, &layer.g_s);
            let w = mlp(&m, store, &layer.g_v)[0];
            for c in 0..d_m {
                msc[i][c] += m[c];
            }
            mvec[i][0] += rel[0] * w;
            mvec[i][1] += rel[1] * w;
        }
        h = (0..n)
            .map(|i| {
                let mut input = h[i].clone();
                input.extend_from_slice(&msc[i]);
                input.push((mvec[i][0] * mvec[i][0] + mvec[i][1] * mvec[i][1]).sqrt());
                let delta = mlp(&input, store, &layer.g_h);
                h[i].iter().zip(&delta).map(|(a, b)| a + b).collect()
            })
            .collect();
    }
    h.iter().map(|row| linear(row, store, &g.output)).collect()
}

/// Full model forward by loops.
pub fn model_forward(model: &Model, graph: &GeometricGraph, layout: &TokenLayout) -> Vec<f64> {
    let store = &model.params;
    let l = &model.layout;
    let d = model.config.d_model();
    let d2 = model.config.d_dec;
    let h = gafe(graph, store, &l.gafe);
    let z0: Mat = h
        .iter()
        .zip(&layout.visible)
        .map(|(row, &idx)| {
            let pe = sinusoid(idx + layout.pos_offset, d);
            row.iter().zip(&pe).map(|(a, b)| a + b).collect()
        })
        .collect();
    let z = stack(&z0, store, &l.encoder);
    let mask_row = tensor(store, l.mask_embedding)[0].clone();
    let n = layout.visible.len() + layout.masked.len();
    let mut y0 = vec![Vec::new(); n];
    for (row, &idx) in z.iter().zip(&layout.visible) {
        y0[idx] = linear(row, store, &l.adapter);
    }
    for &idx in &layout.masked {
        y0[idx] = mask_row.clone();
    }
    for (idx, row) in y0.iter_mut().enumerate() {
        let pe = sinusoid(idx + layout.pos_offset, d2);
        for c in 0..d2 {
            row[c] += pe[c];
        }
    }
    let y = stack(&y0, store, &l.decoder);
    y.iter().map(|row| linear(row, store, &l.head)[0]).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Mat, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    x
}

/// Ordinary kriging by solving the bordered `(n+1)` system directly.
/// Returns the prediction and the weights.
pub fn kriging(pos: &[[f64; 2]], vals: &[f64], var: f64, ell: f64, nugget: f64, q: [f64; 2]) -> (f64, Vec<f64>) {
    let n = pos.len();
    let k = |a: [f64; 2], b: [f64; 2]| {
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        var * (-d2 / (2.0 * ell * ell)).exp()
    };
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut rhs = vec![0.0; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = k(pos[i], pos[j]) + if i == j { nugget } else { 0.0 };
        }
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        rhs[i] = k(pos[i], q);
    }
    rhs[n] = 1.0;
    let sol = solve_dense(a, rhs);
    let w = sol[..n].to_vec();
    let pred = w.iter().zip(vals).map(|(a, b)| a * b).sum();
    (pred, w)
}

pub fn masked_mse(hat: &[f64], truth: &[f64], masked: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in masked {
        let e = hat[i] - truth[i];
        s += e * e;
    }
    s / masked.len() as f64
}

pub fn rmse(hat: &[f64], truth: &[f64], masked: &[usize]) -> f64 {
    masked_mse(hat, truth, masked).sqrt()
}
