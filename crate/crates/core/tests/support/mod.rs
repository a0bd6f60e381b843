//! Independent element-by-element reference implementations of the cells and
//! decoders, written with plain loops over `f64` and no tape.
#![allow(dead_code)]

use seq2graph::autodiff::Tensor;
use seq2graph::cells::{AttentionParams, ContextGruParams, GruParams};
use seq2graph::model::{ModelConfig, ModelParams};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row `i` of `w` dotted with `x`.
fn row_dot(w: &Tensor<f64>, i: usize, x: &[f64]) -> f64 {
    let cols = w.shape()[1];
    assert_eq!(cols, x.len(), "oracle shape mismatch");
    let mut s = 0.0;
    for j in 0..cols {
        s += w.data()[i * cols + j] * x[j];
    }
    s
}

fn gate(
    w: &Tensor<f64>,
    u: &Tensor<f64>,
    b: &Tensor<f64>,
    c: Option<(&Tensor<f64>, &[f64])>,
    x: Option<&[f64]>,
    h: &[f64],
    i: usize,
) -> f64 {
    let mut s = b.data()[i] + row_dot(u, i, h);
    if let Some(x) = x {
        s += row_dot(w, i, x);
    }
    if let Some((cm, ctx)) = c {
        s += row_dot(cm, i, ctx);
    }
    s
}

fn cell(p: &GruParams<Tensor<f64>>, ctx: Option<(&ContextGruParams<Tensor<f64>>, &[f64])>, x: Option<&[f64]>, h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let cterm = |which: usize| ctx.map(|(cp, c)| ([&cp.c_r, &cp.c_z, &cp.c_h][which], c));
    let r: Vec<f64> = (0..n)
        .map(|i| sigmoid(gate(&p.w_r, &p.u_r, &p.b_r, cterm(0), x, h, i)))
        .collect();
    let z: Vec<f64> = (0..n)
        .map(|i| sigmoid(gate(&p.w_z, &p.u_z, &p.b_z, cterm(1), x, h, i)))
        .collect();
    let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
    (0..n)
        .map(|i| {
            let cand = gate(&p.w_h, &p.u_h, &p.b_h, cterm(2), x, &rh, i).tanh();
            (1.0 - z[i]) * h[i] + z[i] * cand
        })
        .collect()
}

pub fn gru(p: &GruParams<Tensor<f64>>, x: &[f64], h: &[f64]) -> Vec<f64> {
    cell(p, None, Some(x), h)
}

pub fn context_gru(p: &ContextGruParams<Tensor<f64>>, x: Option<&[f64]>, h: &[f64], c: &[f64]) -> Vec<f64> {
    cell(&p.base, Some((p, c)), x, h)
}

/// Coefficients and context of `query` over `keys`, with the full score
/// matrix rebuilt from its blocks.
pub fn attention(p: &AttentionParams<Tensor<f64>>, query: &[f64], keys: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let w = p.w_score();
    let hidden = w.shape()[0];
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| {
            let joined: Vec<f64> = query.iter().chain(k.iter()).copied().collect();
            (0..hidden).map(|i| row_dot(&w, i, &joined).tanh() * p.u.data()[i]).sum()
        })
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = e.iter().sum();
    let coeffs: Vec<f64> = e.iter().map(|v| v / total).collect();
    let mut context = vec![0.0; keys[0].len()];
    for (a, k) in coeffs.iter().zip(keys) {
        for (c, kv) in context.iter_mut().zip(k) {
            *c += a * kv;
        }
    }
    (coeffs, context)
}

fn affine_tanh(terms: &[(&Tensor<f64>, &[f64])], b: &Tensor<f64>) -> Vec<f64> {
    (0..b.len())
        .map(|i| {
            let mut s = b.data()[i];
            for (w, x) in terms {
                s += row_dot(w, i, x);
            }
            s.tanh()
        })
        .collect()
}

/// Forward and backward GRU states concatenated per time step.
pub fn encode(fwd: &GruParams<Tensor<f64>>, bwd: &GruParams<Tensor<f64>>, series: &[f64]) -> Vec<Vec<f64>> {
    let n = fwd.u_r.shape()[0];
    let mut forward = Vec::new();
    let mut h = vec![0.0; n];
    for &x in series {
        h = gru(fwd, &[x], &h);
        forward.push(h.clone());
    }
    let mut backward = vec![Vec::new(); series.len()];
    let mut h = vec![0.0; bwd.u_r.shape()[0]];
    for t in (0..series.len()).rev() {
        h = gru(bwd, &[series[t]], &h);
        backward[t] = h.clone();
    }
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| f.into_iter().chain(b).collect())
        .collect()
}

/// `(v_1..v_m, α_1..α_m)` for one series.
pub fn dual_purpose(cfg: &ModelConfig, p: &ModelParams<Tensor<f64>>, d: usize, enc: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let br = &p.branches[d];
    let att = &p.temporal_attention[if cfg.share_temporal_attention { 0 } else { d }];
    let mut s = vec![0.0; cfg.dp_hidden];
    let mut v = vec![0.0; br.w_o.shape()[0]];
    let (mut vs, mut alphas) = (Vec::new(), Vec::new());
    for _ in 0..cfg.m {
        let (a, c) = attention(att, &s, enc);
        s = context_gru(&br.dual, Some(&v), &s, &c);
        v = affine_tanh(&[(&br.w_o, &v), (&br.u_o, &s), (&br.c_o, &c)], &br.b_o);
        vs.push(v.clone());
        alphas.push(a);
    }
    (vs, alphas)
}

pub fn transform(p: &ModelParams<Tensor<f64>>, vs: &[Vec<f64>]) -> Vec<f64> {
    let flat: Vec<f64> = vs.iter().flatten().copied().collect();
    affine_tanh(&[(&p.w_f, &flat)], &p.b_f)
}

/// `(ŷ, β)` from the per-series features.
pub fn inter(cfg: &ModelConfig, p: &ModelParams<Tensor<f64>>, feats: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut q = vec![0.0; cfg.dec_hidden];
    let (mut ys, mut betas) = (Vec::new(), Vec::new());
    for _ in 0..cfg.d {
        let (b, c) = attention(&p.inter_attention, &q, feats);
        q = context_gru(&p.decoder, None, &q, &c);
        let r = &p.readout;
        ys.push(affine_tanh(&[(&r.c_o, &c), (&r.u_o, &q)], &r.b_o)[0]);
        betas.push(b);
    }
    (ys, betas)
}

pub struct OracleTrace {
    pub y: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    pub alphas: Vec<Vec<Vec<f64>>>,
}

/// Whole forward pass on a window stored row-major `[m][D]`.
pub fn forward(cfg: &ModelConfig, p: &ModelParams<Tensor<f64>>, window: &[Vec<f64>]) -> OracleTrace {
    let mut feats = Vec::new();
    let mut alphas = Vec::new();
    for d in 0..cfg.d {
        let series: Vec<f64> = window.iter().map(|r| r[d]).collect();
        let enc = encode(&p.branches[d].enc_fwd, &p.branches[d].enc_bwd, &series);
        let (vs, a) = dual_purpose(cfg, p, d, &enc);
        feats.push(transform(p, &vs));
        alphas.push(a);
    }
    let (y, betas) = inter(cfg, p, &feats);
    OracleTrace { y, betas, alphas }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares residual sum of squares by solving the normal equations
/// with Gauss-Jordan elimination (partial pivoting).
pub fn normal_equations_rss(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let k = x[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &target) in x.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * target;
        }
    }
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let div = a[col][col];
        for v in a[col].iter_mut() {
            *v /= div;
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col];
                for c in 0..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let beta: Vec<f64> = a.iter().map(|r| r[k]).collect();
    x.iter()
        .zip(y)
        .map(|(row, &t)| {
            let fit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (t - fit).powi(2)
        })
        .sum()
}

/// Brute-force Granger F statistic from two separately built regressions.
pub fn brute_force_granger_f(target: &[f64], candidate: &[f64], p: usize) -> f64 {
    let n = target.len();
    let mut xr = Vec::new();
    let mut xu = Vec::new();
    let mut y = Vec::new();
    for t in p..n {
        let mut r = vec![1.0];
        for lag in 1..=p {
            r.push(target[t - lag]);
        }
        let mut u = r.clone();
        for lag in 1..=p {
            u.push(candidate[t - lag]);
        }
        xr.push(r);
        xu.push(u);
        y.push(target[t]);
    }
    let rss_r = normal_equations_rss(&xr, &y);
    let rss_u = normal_equations_rss(&xu, &y);
    let df = (n - p - 2 * p - 1) as f64;
    ((rss_r - rss_u) / p as f64) / (rss_u / df)
}

/// Two series where `x` drives `y` at lag 1 with the given strength.
pub fn coupled_pair(seed: u64, coupling: f64, n: usize) -> seq2graph::data::TimeSeriesFrame {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut noise = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut x = vec![noise()];
    let mut y = vec![noise()];
    for t in 1..n {
        x.push(0.4 * x[t - 1] + noise());
        y.push(0.3 * y[t - 1] + coupling * x[t - 1] + noise());
    }
    seq2graph::data::TimeSeriesFrame::from_columns(vec!["x".into(), "y".into()], vec![x, y]).unwrap()
}
