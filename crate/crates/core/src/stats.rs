//! Sample statistics for Monte Carlo output.
//!
//! All estimators consume samples in a fixed order with compensated
//! summation, so a result depends only on the sample sequence and not on
//! how it was produced.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{param_err, Result};
use crate::limits::{matrix_json, CovMatrix};
use crate::spectral::EigenData;

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    carry: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut s = NeumaierSum::new();
    for x in xs {
        s.add(x);
    }
    s.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Mean and its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

pub fn mean_estimate(xs: &[f64]) -> MeanEstimate {
    let r = xs.len() as f64;
    let mu = mean(xs);
    let var = compensated_sum(xs.iter().map(|x| (x - mu) * (x - mu))) / (r - 1.0);
    MeanEstimate {
        mean: mu,
        std_error: (var / r).sqrt(),
    }
}

/// Two-sample z-score for equal means of independent samples.
pub fn two_sample_z(a: &[f64], b: &[f64]) -> f64 {
    let ea = mean_estimate(a);
    let eb = mean_estimate(b);
    let se = ea.std_error.hypot(eb.std_error);
    if se == 0.0 {
        if ea.mean == eb.mean {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ea.mean - eb.mean) / se
    }
}

/// Standardized skewness and excess kurtosis of a sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Shape {
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn shape(xs: &[f64]) -> Shape {
    let mu = mean(xs);
    let r = xs.len() as f64;
    let m2 = compensated_sum(xs.iter().map(|x| (x - mu).powi(2))) / r;
    let m3 = compensated_sum(xs.iter().map(|x| (x - mu).powi(3))) / r;
    let m4 = compensated_sum(xs.iter().map(|x| (x - mu).powi(4))) / r;
    Shape {
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    }
}

/// Acceptance bounds for skewness and excess kurtosis of R normal samples,
/// `c sqrt(6/R)` and `c sqrt(24/R)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormalityThresholds {
    pub sigmas: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl NormalityThresholds {
    pub fn new(replicates: usize, sigmas: f64) -> Self {
        let r = replicates as f64;
        NormalityThresholds {
            sigmas,
            skewness: sigmas * (6.0 / r).sqrt(),
            excess_kurtosis: sigmas * (24.0 / r).sqrt(),
        }
    }

    pub fn accepts(&self, s: &Shape) -> bool {
        s.skewness.abs() <= self.skewness && s.excess_kurtosis.abs() <= self.excess_kurtosis
    }
}

/// Orthonormal basis of the real plane `span{Re v_k, Im v_k}`, or of the
/// line through `v_{m/2}`.
pub fn plane_basis(e: &EigenData, k: usize) -> Vec<Vec<f64>> {
    let m = e.m();
    let v = e.vector(k);
    if 2 * k == m {
        let s = (m as f64).sqrt();
        return vec![v.iter().map(|z| z.re * s).collect()];
    }
    let s = (2.0 * m as f64).sqrt();
    vec![v.iter().map(|z| z.re * s).collect(), v.iter().map(|z| z.im * s).collect()]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coordinates of each sample in the given basis.
pub fn project_samples(samples: &[Vec<f64>], basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    basis
        .iter()
        .map(|b| samples.iter().map(|x| dot(x, b)).collect())
        .collect()
}

/// Sample mean, unbiased covariance and per-entry standard errors.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    pub count: usize,
    pub mean: Vec<f64>,
    pub covariance: CovMatrix,
    /// Standard error of each covariance entry, from fourth moments.
    pub std_error: DMatrix<f64>,
}

impl CovEstimate {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let r = samples.len();
        if r < 2 {
            return param_err("a covariance estimate needs at least two samples");
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return param_err("samples have different dimensions");
        }
        let mu: Vec<f64> = (0..d)
            .map(|i| compensated_sum(samples.iter().map(|s| s[i])) / r as f64)
            .collect();
        let rf = r as f64;
        let mut cov = DMatrix::zeros(d, d);
        let mut se = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let mut s1 = NeumaierSum::new();
                let mut s2 = NeumaierSum::new();
                for x in samples {
                    let p = (x[i] - mu[i]) * (x[j] - mu[j]);
                    s1.add(p);
                    s2.add(p * p);
                }
                let c = s1.value() / (rf - 1.0);
                let biased = s1.value() / rf;
                let var_p = (s2.value() / rf - biased * biased).max(0.0);
                let e = (var_p / rf).sqrt();
                cov[(i, j)] = c;
                cov[(j, i)] = c;
                se[(i, j)] = e;
                se[(j, i)] = e;
            }
        }
        Ok(CovEstimate {
            count: r,
            mean: mu,
            covariance: CovMatrix::from_matrix(cov)?,
            std_error: se,
        })
    }

    /// Entrywise `(C_hat - target) / se`; entries with zero error count as
    /// 0 when they agree to rounding and infinite otherwise.
    pub fn z_scores(&self, target: &CovMatrix) -> DMatrix<f64> {
        let d = self.mean.len();
        let scale = target.max_abs().max(self.covariance.max_abs());
        DMatrix::from_fn(d, d, |i, j| {
            let diff = self.covariance.get(i, j) - target.get(i, j);
            let se = self.std_error[(i, j)];
            if se > 0.0 {
                diff / se
            } else if diff.abs() <= 1e-12 * scale {
                0.0
            } else {
                f64::INFINITY
            }
        })
    }

    pub fn max_abs_z(&self, target: &CovMatrix) -> f64 {
        self.z_scores(target).iter().fold(0.0, |acc, z| acc.max(z.abs()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "count": self.count,
            "mean": self.mean,
            "covariance": matrix_json(self.covariance.matrix()),
            "std_error": matrix_json(&self.std_error),
        })
    }
}

/// Pearson correlation of two equally long samples.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let sab = compensated_sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)));
    let saa = compensated_sum(a.iter().map(|x| (x - ma).powi(2)));
    let sbb = compensated_sum(b.iter().map(|y| (y - mb).powi(2)));
    sab / (saa * sbb).sqrt()
}
