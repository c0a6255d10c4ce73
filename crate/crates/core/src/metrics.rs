//! Accuracy statistics and cluster-separability metrics over pooled prompt
//! embeddings.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean and `n - 1` sample standard deviation.
pub fn accuracy_stats(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Contract(format!("standard deviation needs >= 2 runs, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, var.sqrt()))
}

fn check_rows(emb: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    if emb.ndim() != 2 || emb.shape()[0] != labels.len() {
        return Err(Error::Shape(format!(
            "embeddings {:?} with {} labels",
            emb.shape(),
            labels.len()
        )));
    }
    if !emb.all_finite() {
        return Err(Error::Numeric("embeddings contain non-finite values".into()));
    }
    Ok((emb.shape()[0], emb.shape()[1]))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sorted_classes(labels: &[usize]) -> Vec<usize> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Mean silhouette coefficient under Euclidean distance. Points in a
/// singleton class score 0, as do points with `a = b = 0`.
pub fn silhouette(emb: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, _) = check_rows(emb, labels)?;
    let classes = sorted_classes(labels);
    if classes.len() < 2 {
        return Err(Error::Contract("silhouette needs at least two classes".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        for j in 0..n {
            if j == i {
                continue;
            }
            let c = classes.binary_search(&labels[j]).expect("label present");
            sums[c] += euclidean(emb.row(i), emb.row(j));
            counts[c] += 1;
        }
        let own = classes.binary_search(&labels[i]).expect("label present");
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

fn fit_gaussian(rows: &[&[f64]], d: usize) -> Gaussian {
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_row_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_row_slice(r) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n;
    let lambda = 1e-3 * cov.trace() / d as f64;
    for k in 0..d {
        cov[(k, k)] += lambda;
    }
    Gaussian { mean, cov }
}

/// `KL(p || q)` between multivariate Gaussians.
fn kl_closed_form(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    let d = p.mean.len() as f64;
    let chol_p = p
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("class covariance is singular after shrinkage".into()))?;
    let chol_q = q
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("class covariance is singular after shrinkage".into()))?;
    let q_inv = chol_q.inverse();
    let diff = &q.mean - &p.mean;
    let trace = (&q_inv * &p.cov).trace();
    let maha = (diff.transpose() * &q_inv * &diff)[(0, 0)];
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let logdet_p = logdet(&chol_p.l());
    let logdet_q = logdet(&chol_q.l());
    Ok(0.5 * (trace + maha - d + logdet_q - logdet_p))
}

/// Symmetrized KL divergence between per-class Gaussian fits with
/// maximum-likelihood covariances shrunk by `1e-3 · trace / d`.
pub fn kl_gaussian(emb: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, d) = check_rows(emb, labels)?;
    let classes = sorted_classes(labels);
    if classes.len() != 2 {
        return Err(Error::Contract(format!(
            "kl_gaussian needs exactly two classes, got {}",
            classes.len()
        )));
    }
    let fit = |c: usize| {
        let rows: Vec<&[f64]> = (0..n).filter(|&i| labels[i] == c).map(|i| emb.row(i)).collect();
        fit_gaussian(&rows, d)
    };
    let (p, q) = (fit(classes[0]), fit(classes[1]));
    let kl = 0.5 * (kl_closed_form(&p, &q)? + kl_closed_form(&q, &p)?);
    if !kl.is_finite() {
        return Err(Error::Numeric("kl_gaussian is not finite".into()));
    }
    Ok(kl.max(0.0))
}

/// Median pairwise Euclidean distance over the union of both sets, or 1
/// when that median is zero.
pub fn median_bandwidth(x: &Tensor, y: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..x.shape()[0]).map(|i| x.row(i)).chain((0..y.shape()[0]).map(|i| y.row(i))).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push(euclidean(rows[i], rows[j]));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 { median } else { 1.0 }
}

/// Biased MMD² with kernel `exp(-‖u - v‖² / (2σ²))`.
pub fn mmd_rbf_with_bandwidth(x: &Tensor, y: &Tensor, sigma: f64) -> Result<f64> {
    if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[1] {
        return Err(Error::Shape(format!("mmd_rbf: sets {:?} and {:?}", x.shape(), y.shape())));
    }
    let (m, n) = (x.shape()[0], y.shape()[0]);
    if m == 0 || n == 0 {
        return Err(Error::Contract("mmd_rbf needs two nonempty sets".into()));
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |a: &[f64], b: &[f64]| {
        let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-gamma * sq).exp()
    };
    let mean_kernel = |a: &Tensor, b: &Tensor| {
        let mut s = 0.0;
        for i in 0..a.shape()[0] {
            for j in 0..b.shape()[0] {
                s += k(a.row(i), b.row(j));
            }
        }
        s / (a.shape()[0] * b.shape()[0]) as f64
    };
    let mmd = mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y);
    Ok(mmd.max(0.0))
}

/// Biased MMD² with the median-heuristic bandwidth.
pub fn mmd_rbf(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.ndim() != 2 || y.ndim() != 2 {
        return Err(Error::Shape("mmd_rbf expects two matrices".into()));
    }
    mmd_rbf_with_bandwidth(x, y, median_bandwidth(x, y))
}

/// Rows of `emb` whose label equals `class`.
pub fn class_rows(emb: &Tensor, labels: &[usize], class: usize) -> Result<Tensor> {
    let d = emb.shape()[1];
    let data: Vec<f64> = (0..labels.len())
        .filter(|&i| labels[i] == class)
        .flat_map(|i| emb.row(i).iter().copied())
        .collect();
    if data.is_empty() {
        return Err(Error::Contract(format!("class {class} has no rows")));
    }
    Tensor::new(vec![data.len() / d, d], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BeforeTuning,
    AfterTuning,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::BeforeTuning => "before_tuning",
            Phase::AfterTuning => "after_tuning",
        }
    }
}

/// Pooled prompt embeddings of one split with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDump {
    pub run_id: String,
    pub phase: Phase,
    pub labels: Vec<usize>,
    pub embeddings: Tensor,
}

impl EmbeddingDump {
    pub fn new(run_id: impl Into<String>, phase: Phase, embeddings: Tensor, labels: Vec<usize>) -> Result<Self> {
        check_rows(&embeddings, &labels)?;
        Ok(EmbeddingDump {
            run_id: run_id.into(),
            phase,
            labels,
            embeddings,
        })
    }

    /// CSV with header `run_id,phase,label,dim_0..dim_{d-1}`. Values use
    /// shortest round-trip formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.embeddings.shape()[1];
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["run_id".to_string(), "phase".into(), "label".into()];
        header.extend((0..d).map(|k| format!("dim_{k}")));
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut rec = vec![self.run_id.clone(), self.phase.name().into(), label.to_string()];
            rec.extend(self.embeddings.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let d = r.headers()?.len().saturating_sub(3);
        let (mut run_id, mut phase) = (String::new(), Phase::BeforeTuning);
        let (mut labels, mut data) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            run_id = rec[0].to_string();
            phase = match &rec[1] {
                "before_tuning" => Phase::BeforeTuning,
                "after_tuning" => Phase::AfterTuning,
                other => return Err(Error::Serde(format!("unknown phase {other:?}"))),
            };
            labels.push(rec[2].parse().map_err(|e| Error::Serde(format!("label: {e}")))?);
            for k in 0..d {
                data.push(rec[3 + k].parse::<f64>().map_err(|e| Error::Serde(format!("dim_{k}: {e}")))?);
            }
        }
        let embeddings = Tensor::new(vec![labels.len(), d], data)?;
        EmbeddingDump::new(run_id, phase, embeddings, labels)
    }

    pub fn summary(&self, seed: u64) -> Result<MetricsSummary> {
        let classes = sorted_classes(&self.labels);
        if classes.len() != 2 {
            return Err(Error::Contract("metrics summary needs exactly two classes".into()));
        }
        Ok(MetricsSummary {
            sc: silhouette(&self.embeddings, &self.labels)?,
            kl: kl_gaussian(&self.embeddings, &self.labels)?,
            mmd: mmd_rbf(
                &class_rows(&self.embeddings, &self.labels, classes[0])?,
                &class_rows(&self.embeddings, &self.labels, classes[1])?,
            )?,
            phase: self.phase,
            seed,
        })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::from(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub sc: f64,
    pub kl: f64,
    pub mmd: f64,
    pub phase: Phase,
    pub seed: u64,
}

impl MetricsSummary {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_examples() {
        let (m, s) = accuracy_stats(&[0.8, 0.8, 0.8]).unwrap();
        assert!((m - 0.8).abs() < 1e-12 && s.abs() < 1e-12);
        let (m, s) = accuracy_stats(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(accuracy_stats(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn kl_one_dimensional_closed_form() {
        // two symmetric point sets with variance 1 and means 0 and 1
        let emb = Tensor::new(vec![4, 1], vec![-1.0, 1.0, 0.0, 2.0]).unwrap();
        let kl = kl_gaussian(&emb, &[0, 0, 1, 1]).unwrap();
        assert!((kl - 0.5 / 1.001).abs() < 1e-12, "{kl}");
    }

    #[test]
    fn silhouette_degenerate_is_zero() {
        let emb = Tensor::ones(&[4, 3]);
        assert_eq!(silhouette(&emb, &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(matches!(silhouette(&emb, &[0, 0, 0, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn mmd_identical_sets_is_zero() {
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, -1.0, 0.5, 2.0, 2.0]).unwrap();
        assert!(mmd_rbf(&x, &x).unwrap().abs() < 1e-12);
    }
}
