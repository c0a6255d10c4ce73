//! Naive loop implementations used as references.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use stablept::model::LayerParams;
use stablept::Tensor;

fn at(t: &Tensor, idx: &[usize]) -> f64 {
    let s = t.shape();
    let mut flat = 0;
    for (k, &i) in idx.iter().enumerate() {
        flat = flat * s[k] + i;
    }
    t.data()[flat]
}

/// `softmax(q k^T / sqrt(d)) v` with one loop per query position.
pub fn attention(q_in: &Tensor, kv: &Tensor, valid: &[bool], p: &LayerParams) -> Vec<f64> {
    let (b, m, d) = (q_in.shape()[0], q_in.shape()[1], q_in.shape()[2]);
    let n = kv.shape()[1];
    let proj = |x: &Tensor, bi: usize, pos: usize, w: &Tensor| -> Vec<f64> {
        (0..d).map(|c| (0..d).map(|r| at(x, &[bi, pos, r]) * at(w, &[r, c])).sum()).collect()
    };
    let mut out = Vec::with_capacity(b * m * d);
    for bi in 0..b {
        let keys: Vec<Vec<f64>> = (0..n).map(|j| proj(kv, bi, j, &p.wk)).collect();
        let vals: Vec<Vec<f64>> = (0..n).map(|j| proj(kv, bi, j, &p.wv)).collect();
        for i in 0..m {
            let q = proj(q_in, bi, i, &p.wq);
            let scores: Vec<Option<f64>> = (0..n)
                .map(|j| {
                    valid[bi * n + j].then(|| q.iter().zip(&keys[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                })
                .collect();
            let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..n {
                    if let Some(s) = scores[j] {
                        acc += (s - max).exp() / z * vals[j][c];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn layer_norm(x: &[f64], g: &Tensor, b: &Tensor, eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    x.iter()
        .enumerate()
        .map(|(k, v)| (v - mean) / (var + eps).sqrt() * g.data()[k] + b.data()[k])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Post-LN layer: attention, projection, residual on the queries, norm,
/// GELU feed-forward, residual, norm.
pub fn layer(q_in: &Tensor, kv: &Tensor, valid: &[bool], p: &LayerParams, eps: f64) -> Vec<f64> {
    let (b, m, d) = (q_in.shape()[0], q_in.shape()[1], q_in.shape()[2]);
    let ffn = p.b1.numel();
    let att = attention(q_in, kv, valid, p);
    let mut out = Vec::with_capacity(b * m * d);
    for bi in 0..b {
        for i in 0..m {
            let a = &att[(bi * m + i) * d..(bi * m + i + 1) * d];
            let res: Vec<f64> = (0..d)
                .map(|c| at(q_in, &[bi, i, c]) + p.bo.data()[c] + (0..d).map(|r| a[r] * at(&p.wo, &[r, c])).sum::<f64>())
                .collect();
            let h = layer_norm(&res, &p.ln1_gain, &p.ln1_bias, eps);
            let f: Vec<f64> = (0..ffn)
                .map(|c| gelu(p.b1.data()[c] + (0..d).map(|r| h[r] * at(&p.w1, &[r, c])).sum::<f64>()))
                .collect();
            let res2: Vec<f64> = (0..d)
                .map(|c| h[c] + p.b2.data()[c] + (0..ffn).map(|r| f[r] * at(&p.w2, &[r, c])).sum::<f64>())
                .collect();
            out.extend(layer_norm(&res2, &p.ln2_gain, &p.ln2_bias, eps));
        }
    }
    out
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
    dot / (nu * nv)
}

/// Double loop over anchors and positives.
pub fn supcon(z: &Tensor, labels: &[usize], tau: f64) -> f64 {
    let b = labels.len();
    let mut total = 0.0;
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (cosine(z.row(i), z.row(a)) / tau).exp()).sum();
        let mut li = 0.0;
        for &p in &pos {
            li -= ((cosine(z.row(i), z.row(p)) / tau).exp() / denom).ln();
        }
        total += li / pos.len() as f64;
    }
    total / b as f64
}

pub fn mlm(logits: &Tensor, labels: &[usize], words: &[usize]) -> f64 {
    let b = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[words[y]];
    }
    total / b as f64
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn silhouette(emb: &Tensor, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut s = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let d: Vec<f64> = (0..n).filter(|&j| j != i && labels[j] == c).map(|j| dist(emb.row(i), emb.row(j))).collect();
            (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = classes.iter().filter(|&&c| c != labels[i]).filter_map(|&c| mean_to(c)).fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            s += (b - a) / a.max(b);
        }
    }
    s / n as f64
}

pub fn mmd(x: &Tensor, y: &Tensor, sigma: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| (-dist(a, b).powi(2) / (2.0 * sigma * sigma)).exp();
    let (m, n) = (x.shape()[0], y.shape()[0]);
    let mut kxx = 0.0;
    let mut kyy = 0.0;
    let mut kxy = 0.0;
    for i in 0..m {
        for j in 0..m {
            kxx += k(x.row(i), x.row(j));
        }
        for j in 0..n {
            kxy += k(x.row(i), y.row(j));
        }
    }
    for i in 0..n {
        for j in 0..n {
            kyy += k(y.row(i), y.row(j));
        }
    }
    (kxx / (m * m) as f64 + kyy / (n * n) as f64 - 2.0 * kxy / (m * n) as f64).max(0.0)
}

struct Fit {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    inv: DMatrix<f64>,
    logdet: f64,
}

fn fit(rows: &[&[f64]]) -> Fit {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean = rows.iter().fold(DVector::zeros(d), |acc, r| acc + DVector::from_row_slice(r)) / n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_row_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n;
    let lambda = 1e-3 * cov.trace() / d as f64;
    cov += DMatrix::identity(d, d) * lambda;
    let chol = cov.clone().cholesky().expect("positive definite").l();
    let inv = cov.clone().try_inverse().expect("invertible");
    let logdet = cov.determinant().ln();
    Fit { mean, chol, inv, logdet }
}

fn log_density(f: &Fit, x: &DVector<f64>) -> f64 {
    let c = x - &f.mean;
    -0.5 * ((c.transpose() * &f.inv * &c)[(0, 0)] + f.logdet + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Symmetrized KL between the two class Gaussians, by antithetic sampling.
pub fn kl_monte_carlo<R: Rng>(emb: &Tensor, labels: &[usize], samples: usize, rng: &mut R) -> f64 {
    let rows = |c: usize| -> Vec<&[f64]> { (0..labels.len()).filter(|&i| labels[i] == c).map(|i| emb.row(i)).collect() };
    let (p, q) = (fit(&rows(0)), fit(&rows(1)));
    let d = p.mean.len();
    let mut one_way = |a: &Fit, b: &Fit| {
        let mut s = 0.0;
        for _ in 0..samples {
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let dz = &a.chol * z;
            for x in [&a.mean + &dz, &a.mean - &dz] {
                s += log_density(a, &x) - log_density(b, &x);
            }
        }
        s / (2 * samples) as f64
    };
    let pq = one_way(&p, &q);
    let qp = one_way(&q, &p);
    0.5 * (pq + qp)
}
