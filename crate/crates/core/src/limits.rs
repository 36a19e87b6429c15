//! Limit covariance matrices, their ranks, and the fixed-point equation
//! satisfied by the martingale limits.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{domain_err, param_err, Result};
use crate::gamma::gamma;
use crate::spectral::{classify, eigen_data, EigenData, ProjectionClass};

/// Default relative eigenvalue threshold for [`numerical_rank`].
pub const RANK_TOL: f64 = 1e-9;

/// Real symmetric m x m matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(DMatrix<f64>);

impl CovMatrix {
    pub fn zeros(m: usize) -> Self {
        CovMatrix(DMatrix::zeros(m, m))
    }

    /// Wraps a square matrix; symmetry is checked where it matters.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return param_err(format!("matrix is {}x{}, expected square", entries.nrows(), entries.ncols()));
        }
        Ok(CovMatrix(entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return param_err("rows must all have length equal to the row count");
        }
        Ok(CovMatrix(DMatrix::from_fn(m, m, |i, j| rows[i][j])))
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.0 - self.0.transpose()).amax()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry() <= tol
    }

    /// Eigenvalues in increasing order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.require_symmetric()?;
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        Ok(ev)
    }

    /// Eigenpairs, eigenvalues decreasing; vectors are columns.
    pub fn eigen_decomposition(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.require_symmetric()?;
        let se = SymmetricEigen::new(self.0.clone());
        let mut order: Vec<usize> = (0..self.m()).collect();
        order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
        let values = order.iter().map(|&i| se.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.m(), self.m(), |r, c| se.eigenvectors[(r, order[c])]);
        Ok((values, vectors))
    }

    fn require_symmetric(&self) -> Result<()> {
        let tol = 1e-12 * self.max_abs().max(f64::MIN_POSITIVE);
        if !self.is_symmetric(tol) {
            return param_err(format!("matrix is not symmetric (asymmetry {:.3e})", self.asymmetry()));
        }
        Ok(())
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(x);
        (v.transpose() * &self.0 * &v)[(0, 0)]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.m()).map(|i| (0..self.m()).map(|j| self.0[(i, j)]).collect()).collect()
    }

    pub fn add(&self, other: &CovMatrix) -> CovMatrix {
        CovMatrix(&self.0 + &other.0)
    }

    pub fn scale(&self, c: f64) -> CovMatrix {
        CovMatrix(&self.0 * c)
    }

    /// Largest `|(cA)^2 - cA|` entry: zero when `cA` is a projection.
    pub fn idempotence_residual(&self, c: f64) -> f64 {
        let p = &self.0 * c;
        (&p * &p - &p).amax()
    }
}

impl Serialize for CovMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_json(&self.0).serialize(s)
    }
}

/// `{rows, cols, data}` with data in row-major order.
pub fn matrix_json(a: &DMatrix<f64>) -> serde_json::Value {
    let data: Vec<f64> = (0..a.nrows())
        .flat_map(|i| (0..a.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)])
        .collect();
    serde_json::json!({"rows": a.nrows(), "cols": a.ncols(), "data": data})
}

/// `c (v_k v_k^* + conj(v_k) conj(v_k)^*)`, the real pair term for `k != m/2`,
/// or `c v_{m/2} v_{m/2}^*` when 2k = m.
fn pair_term(e: &EigenData, k: usize, c: f64) -> DMatrix<f64> {
    let m = e.m();
    let v = e.vector(k);
    let paired = 2 * k != m;
    DMatrix::from_fn(m, m, |i, j| {
        let z = v[i] * v[j].conj();
        if paired {
            2.0 * c * z.re
        } else {
            c * z.re
        }
    })
}

fn block_weight(e: &EigenData, k: usize) -> f64 {
    match e.class(k) {
        ProjectionClass::Critical => 1.0,
        _ => 1.0 / (2.0 * e.lambda(k) - 1.0).abs(),
    }
}

/// Limit covariance of the block `X_{n,k}`, `1 <= k <= m/2`.
pub fn sigma_k(m: usize, k: usize) -> Result<CovMatrix> {
    let e = eigen_data(m)?;
    if k == 0 || k > m / 2 {
        return param_err(format!("block index {k} out of range 1..={}", m / 2));
    }
    Ok(CovMatrix(pair_term(&e, k, block_weight(&e, k))))
}

/// Covariance of the whole normalized composition: rank m-1 unless 6 | m,
/// in which case only the critical pair survives.
pub fn sigma_total(m: usize) -> Result<CovMatrix> {
    if m < 7 {
        return domain_err(format!("the limit covariance is stated for m >= 7, got {m}"));
    }
    let e = eigen_data(m)?;
    if m.is_multiple_of(6) {
        return Ok(CovMatrix(pair_term(&e, m / 6, 1.0)));
    }
    let mut acc = DMatrix::zeros(m, m);
    for k in 1..=m / 2 {
        acc += pair_term(&e, k, block_weight(&e, k));
    }
    Ok(CovMatrix(acc))
}

/// Number of eigenvalues above `tol` times the largest one.
pub fn numerical_rank(a: &CovMatrix, tol: f64) -> Result<usize> {
    let ev = a.eigenvalues()?;
    let top = ev.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    if top == 0.0 {
        return Ok(0);
    }
    Ok(ev.iter().filter(|&&x| x > tol * top).count())
}

/// Largest entry of `sum_k m v_k v_k^* - I`.
pub fn completeness_residual(m: usize) -> Result<f64> {
    let e = eigen_data(m)?;
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let s: Complex64 = (0..m).map(|k| e.vector(k)[i] * e.vector(k)[j].conj() * m as f64).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - target).norm());
        }
    }
    Ok(worst)
}

fn large_root(m: usize, k: usize) -> Result<Complex64> {
    let e = eigen_data(m)?;
    if k >= m {
        return param_err(format!("eigen-index {k} out of range 0..{m}"));
    }
    if classify(m, k) != ProjectionClass::Large {
        return domain_err(format!("k = {k} is not a large projection for m = {m}"));
    }
    Ok(e.omega(k))
}

fn check_unit(u: f64) -> Result<()> {
    if !(u > 0.0 && u < 1.0) {
        return domain_err(format!("u = {u} is outside (0, 1)"));
    }
    Ok(())
}

/// `u^w` with the real logarithm of u.
fn real_power(u: f64, w: Complex64) -> Complex64 {
    (w * u.ln()).exp()
}

fn g_raw(u: f64, w: Complex64, gamma_w: Complex64) -> Complex64 {
    (real_power(u, w) + w * real_power(1.0 - u, w) - 1.0) / gamma_w
}

/// Toll term of the fixed-point equation:
/// `(u^w + w (1-u)^w - 1) / Gamma(1 + w)` with `w = w^k`.
pub fn g_k(u: f64, m: usize, k: usize) -> Result<Complex64> {
    check_unit(u)?;
    let w = large_root(m, k)?;
    Ok(g_raw(u, w, gamma(w + 1.0)))
}

/// `u^w xi0 + w (1-u)^w xi1 + g_k(u)`.
pub fn fixpoint_rhs(xi0: Complex64, xi1: Complex64, u: f64, m: usize, k: usize) -> Result<Complex64> {
    check_unit(u)?;
    let w = large_root(m, k)?;
    Ok(real_power(u, w) * xi0 + w * real_power(1.0 - u, w) * xi1 + g_raw(u, w, gamma(w + 1.0)))
}

/// Evaluator for repeated fixed-point samples at fixed (m, k).
#[derive(Debug, Clone, Copy)]
pub struct FixpointMap {
    w: Complex64,
    gamma_w: Complex64,
}

impl FixpointMap {
    pub fn new(m: usize, k: usize) -> Result<Self> {
        let w = large_root(m, k)?;
        Ok(FixpointMap { w, gamma_w: gamma(w + 1.0) })
    }

    pub fn g(&self, u: f64) -> Result<Complex64> {
        check_unit(u)?;
        Ok(g_raw(u, self.w, self.gamma_w))
    }

    pub fn rhs(&self, xi0: Complex64, xi1: Complex64, u: f64) -> Result<Complex64> {
        check_unit(u)?;
        let w = self.w;
        Ok(real_power(u, w) * xi0 + w * real_power(1.0 - u, w) * xi1 + g_raw(u, w, self.gamma_w))
    }
}

/// `int_0^1 g_k(u) du` by double-exponential quadrature, with the error estimate.
pub fn g_integral(m: usize, k: usize) -> Result<(Complex64, f64)> {
    let w = large_root(m, k)?;
    let gw = gamma(w + 1.0);
    let f = |u: f64, part: fn(Complex64) -> f64| {
        if u > 0.0 && u < 1.0 {
            part(g_raw(u, w, gw))
        } else {
            0.0
        }
    };
    let re = quadrature::integrate(|u| f(u, |z| z.re), 0.0, 1.0, 1e-13);
    let im = quadrature::integrate(|u| f(u, |z| z.im), 0.0, 1.0, 1e-13);
    Ok((
        Complex64::new(re.integral, im.integral),
        re.error_estimate.hypot(im.error_estimate),
    ))
}
