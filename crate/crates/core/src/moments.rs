//! Exact first and second moments of the spectral coordinates.
//!
//! With `w = exp(2 pi i/m)` and starting from one ball of type 0,
//!
//! * `E[u_k(R_n)] = prod_{s=1}^n (1 + w^k/s)`
//! * `E[u_k u_l] = prod_{s=1}^n (1 + a/s)
//!    + w^{k+l} sum_{s=1}^n (1/s) prod_{t<s} (1 + w^{k+l}/t) prod_{t>s} (1 + a/t)`
//!   where `a = w^k + w^l`.
//!
//! The martingales are `M_{n,k} = Gamma(n+1)/Gamma(n+1+w^k) (u_k - E u_k)`,
//! i.e. the centred coordinate divided by `Gamma(1+w^k) * prod(1 + w^k/s)`,
//! and `M_{n,m/2} = n u_{m/2}(R_n)` for even m.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{domain_err, param_err, Result};
use crate::gamma::gamma;
use crate::logpolar::LogPolarComplex;
use crate::spectral::{classify, eigen_data, EigenData, ProjectionClass};

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// `prod_{s=1}^n (1 + z/s)`, which equals `Gamma(n+1+z) / (Gamma(n+1) Gamma(1+z))`.
pub fn gamma_ratio(n: u64, z: Complex64) -> LogPolarComplex {
    let mut walk = GammaRatioWalk::new(z);
    walk.advance_to(n);
    walk.value()
}

/// Incremental evaluation of [`gamma_ratio`] along increasing n.
#[derive(Debug, Clone)]
pub struct GammaRatioWalk {
    z: Complex64,
    n: u64,
    value: LogPolarComplex,
}

impl GammaRatioWalk {
    pub fn new(z: Complex64) -> Self {
        GammaRatioWalk {
            z,
            n: 0,
            value: LogPolarComplex::ONE,
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn value(&self) -> LogPolarComplex {
        self.value
    }

    pub fn step(&mut self) {
        self.n += 1;
        if self.z == Complex64::new(1.0, 0.0) {
            // telescopes to n + 1
            self.value = LogPolarComplex::new(((self.n + 1) as f64).ln(), 0.0);
        } else if !self.value.is_zero() {
            self.value = self
                .value
                .mul(&LogPolarComplex::one_plus_over(self.z, self.n as f64));
        }
    }

    pub fn advance_to(&mut self, n: u64) {
        while self.n < n {
            self.step();
        }
    }
}

fn check_indices(m: usize, ks: &[usize]) -> Result<()> {
    if m < 2 {
        return param_err(format!("number of types must be at least 2, got {m}"));
    }
    for &k in ks {
        if k >= m {
            return param_err(format!("eigen-index {k} out of range 0..{m}"));
        }
    }
    Ok(())
}

/// `E[u_k(R_n)]` when the urn starts with one ball of `initial_type`.
pub fn mean_u(n: u64, m: usize, k: usize, initial_type: usize) -> Result<Complex64> {
    check_indices(m, &[k, initial_type])?;
    let e = eigen_data(m)?;
    Ok(e.root(k * initial_type) * gamma_ratio(n, e.omega(k)).to_complex())
}

/// `E[R_n]`, reconstructed from the exact coordinate means.
pub fn mean_vector(n: u64, m: usize, initial_type: usize) -> Result<Vec<f64>> {
    check_indices(m, &[initial_type])?;
    let e = eigen_data(m)?;
    let means: Vec<Complex64> = (0..=m / 2)
        .map(|k| e.root(k * initial_type) * gamma_ratio(n, e.omega(k)).to_complex())
        .collect();
    Ok(assemble_mean(&e, &means))
}

fn assemble_mean(e: &EigenData, half_means: &[Complex64]) -> Vec<f64> {
    let m = e.m();
    let mut out = vec![0.0; m];
    for (k, &mu) in half_means.iter().enumerate() {
        let factor = if k == 0 || 2 * k == m { 1.0 } else { 2.0 };
        for (o, &v) in out.iter_mut().zip(e.vector(k)) {
            *o += factor * (mu * v).re;
        }
    }
    out
}

/// `E[R_n]` for every n in an increasing grid, computed in one pass.
pub fn mean_vector_series(m: usize, initial_type: usize, grid: &[u64]) -> Result<Vec<Vec<f64>>> {
    check_indices(m, &[initial_type])?;
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return param_err("grid must be non-decreasing");
    }
    let e = eigen_data(m)?;
    let mut walks: Vec<GammaRatioWalk> = (0..=m / 2).map(|k| GammaRatioWalk::new(e.omega(k))).collect();
    let mut out = Vec::with_capacity(grid.len());
    for &n in grid {
        let means: Vec<Complex64> = walks
            .iter_mut()
            .enumerate()
            .map(|(k, w)| {
                w.advance_to(n);
                e.root(k * initial_type) * w.value().to_complex()
            })
            .collect();
        out.push(assemble_mean(&e, &means));
    }
    Ok(out)
}

/// `E[u_k(R_n) u_l(R_n)]` by the product/sum formula: one backward pass for
/// the suffix products of `1 + a/t`, one forward pass for the prefix
/// products of `1 + w^{k+l}/t`, both in log-polar form.
pub fn mixed_moment(n: u64, m: usize, k: usize, l: usize) -> Result<Complex64> {
    check_indices(m, &[k, l])?;
    let e = eigen_data(m)?;
    let a = e.omega(k) + e.omega(l);
    let b = e.omega(k + l);
    let len = n as usize;
    // suffix[s] = prod_{t=s}^{n} (1 + a/t), suffix[n+1] = 1
    let mut suffix = vec![LogPolarComplex::ONE; len + 2];
    for s in (1..=len).rev() {
        suffix[s] = suffix[s + 1].mul(&LogPolarComplex::one_plus_over(a, s as f64));
    }
    let mut prefix = LogPolarComplex::ONE;
    let mut sum = c0();
    for s in 1..=len {
        let term = prefix.mul(&suffix[s + 1]);
        sum += term.to_complex() / s as f64;
        prefix = prefix.mul(&LogPolarComplex::one_plus_over(b, s as f64));
    }
    Ok(suffix[1].to_complex() + b * sum)
}

/// Streaming evaluation of the mean and mixed moments for a pair (k, l)
/// via the first-order recursion
/// `P_s = (1 + a/s) P_{s-1} + (w^{k+l}/s) E[u_{k+l}(R_{s-1})]`.
/// O(1) memory; used where n reaches 10^7.
#[derive(Debug, Clone)]
pub struct PairMomentWalk {
    m: usize,
    k: usize,
    l: usize,
    a: Complex64,
    b: Complex64,
    n: u64,
    mixed: Complex64,
    mean_k: GammaRatioWalk,
    mean_l: GammaRatioWalk,
    mean_kl: GammaRatioWalk,
    scale_k: MartingaleScale,
    scale_l: MartingaleScale,
}

impl PairMomentWalk {
    pub fn new(m: usize, k: usize, l: usize) -> Result<Self> {
        check_indices(m, &[k, l])?;
        let e = eigen_data(m)?;
        Ok(PairMomentWalk {
            m,
            k,
            l,
            a: e.omega(k) + e.omega(l),
            b: e.omega(k + l),
            n: 0,
            mixed: Complex64::new(1.0, 0.0),
            mean_k: GammaRatioWalk::new(e.omega(k)),
            mean_l: GammaRatioWalk::new(e.omega(l)),
            mean_kl: GammaRatioWalk::new(e.omega(k + l)),
            scale_k: MartingaleScale::new(m, k)?,
            scale_l: MartingaleScale::new(m, l)?,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn step(&mut self) {
        let s = (self.n + 1) as f64;
        let prev_kl = self.mean_kl.value().to_complex();
        self.mixed = self.mixed * (1.0 + self.a / s) + self.b / s * prev_kl;
        self.n += 1;
        self.mean_k.step();
        self.mean_l.step();
        self.mean_kl.step();
    }

    pub fn advance_to(&mut self, n: u64) {
        while self.n < n {
            self.step();
        }
    }

    /// `E[u_k u_l]` at the current n.
    pub fn mixed(&self) -> Complex64 {
        self.mixed
    }

    pub fn mean_k(&self) -> Complex64 {
        self.mean_k.value().to_complex()
    }

    pub fn mean_l(&self) -> Complex64 {
        self.mean_l.value().to_complex()
    }

    /// `E[(u_k - E u_k)(u_l - E u_l)]`.
    pub fn centered(&self) -> Complex64 {
        self.mixed - self.mean_k() * self.mean_l()
    }

    /// `E[M_{n,k} M_{n,l}]`.
    pub fn martingale_product(&self) -> Complex64 {
        let ck = self.scale_k.at(self.n, &self.mean_k.value());
        let cl = self.scale_l.at(self.n, &self.mean_l.value());
        ck * cl * self.centered()
    }

    pub fn indices(&self) -> (usize, usize, usize) {
        (self.m, self.k, self.l)
    }
}

/// The factor `c` with `M_{n,k} = c (u_k(R_n) - E u_k(R_n))`.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleScale {
    kind: ScaleKind,
}

#[derive(Debug, Clone, Copy)]
enum ScaleKind {
    Zero,
    Alternating,
    Gamma(Complex64),
}

impl MartingaleScale {
    pub fn new(m: usize, k: usize) -> Result<Self> {
        check_indices(m, &[k])?;
        let kind = if k == 0 {
            ScaleKind::Zero
        } else if 2 * k == m {
            ScaleKind::Alternating
        } else {
            let e = eigen_data(m)?;
            ScaleKind::Gamma(gamma(e.omega(k) + 1.0))
        };
        Ok(MartingaleScale { kind })
    }

    /// Scale at step n given `gamma_ratio(n, w^k)`.
    pub fn at(&self, n: u64, ratio: &LogPolarComplex) -> Complex64 {
        match self.kind {
            ScaleKind::Zero => c0(),
            ScaleKind::Alternating => Complex64::new(n as f64, 0.0),
            ScaleKind::Gamma(g) => match ratio.inv() {
                Some(r) => r.to_complex() / g,
                None => c0(),
            },
        }
    }
}

/// `Gamma(1 + w^k)`, the constant linking `gamma_ratio` with `Gamma(n+1+w^k)/Gamma(n+1)`.
pub fn gamma_one_plus_root(m: usize, k: usize) -> Result<Complex64> {
    check_indices(m, &[k])?;
    if 2 * k == m {
        return domain_err("Gamma(1 + w^{m/2}) = Gamma(0) is a pole");
    }
    let e = eigen_data(m)?;
    Ok(gamma(e.omega(k) + 1.0))
}

/// `E|M_{n,k}|^2`. For k = m/2 this uses `M = n u_{m/2}`; for k = 0 it is 0.
pub fn second_moment_m(n: u64, m: usize, k: usize) -> Result<f64> {
    Ok(martingale_second_moments(m, k, &[n])?[0])
}

/// `E|M_{n,k}|^2` along an increasing grid, one streaming pass.
pub fn martingale_second_moments(m: usize, k: usize, grid: &[u64]) -> Result<Vec<f64>> {
    check_indices(m, &[k])?;
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return param_err("grid must be non-decreasing");
    }
    let mut walk = PairMomentWalk::new(m, k, (m - k) % m)?;
    Ok(grid
        .iter()
        .map(|&n| {
            walk.advance_to(n);
            walk.martingale_product().re.max(0.0)
        })
        .collect())
}

/// How `E|Xi_k|^2` is obtained from a finite horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitModel {
    /// `E|Xi|^2 := E|M_{N,k}|^2`.
    Truncated,
    /// Two-point extrapolation from N/2 and N assuming a tail `C N^{1 - 2 lambda}`.
    Richardson,
}

/// Residual second moment `E|M_{n,k} - Xi_k|^2` and its normalized form.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualL2 {
    pub m: usize,
    pub k: usize,
    pub n: u64,
    pub n_limit: u64,
    pub model: LimitModel,
    /// Estimate of `E|Xi_k|^2`.
    pub limit_second_moment: f64,
    pub raw: f64,
    /// `raw * (2 lambda - 1) * n^(2 lambda - 1)`, which tends to 1.
    pub normalized: f64,
}

fn large_lambda(m: usize, k: usize) -> Result<f64> {
    check_indices(m, &[k])?;
    if classify(m, k) != ProjectionClass::Large {
        return domain_err(format!(
            "eigen-index {k} for m = {m} is not a large projection (needs cos(2 pi k/m) > 1/2)"
        ));
    }
    Ok(eigen_data(m)?.lambda(k))
}

/// Estimate of `E|Xi_k|^2` from `E|M_N|^2` (and `E|M_{N/2}|^2` for Richardson).
pub fn limit_second_moment(m: usize, k: usize, n_limit: u64, model: LimitModel) -> Result<f64> {
    let lambda = large_lambda(m, k)?;
    let grid = [n_limit / 2, n_limit];
    let f = martingale_second_moments(m, k, &grid)?;
    Ok(extrapolate(f[0], f[1], lambda, model))
}

fn extrapolate(f_half: f64, f_full: f64, lambda: f64, model: LimitModel) -> f64 {
    match model {
        LimitModel::Truncated => f_full,
        LimitModel::Richardson => {
            let q = 2f64.powf(2.0 * lambda - 1.0);
            (q * f_full - f_half) / (q - 1.0)
        }
    }
}

/// `E|M_{n,k} - Xi_k|^2` using `E|Xi|^2 - E|M_n|^2` (martingale orthogonality).
pub fn residual_l2(n: u64, m: usize, k: usize, n_limit: u64, model: LimitModel) -> Result<ResidualL2> {
    Ok(residual_l2_grid(&[n], m, k, n_limit, model)?.remove(0))
}

/// [`residual_l2`] over several n with one pass to `n_limit`.
pub fn residual_l2_grid(
    ns: &[u64],
    m: usize,
    k: usize,
    n_limit: u64,
    model: LimitModel,
) -> Result<Vec<ResidualL2>> {
    let lambda = large_lambda(m, k)?;
    if ns.iter().any(|&n| n > n_limit) {
        return param_err("n must not exceed the limit horizon");
    }
    let mut grid: Vec<u64> = ns.to_vec();
    grid.push(n_limit / 2);
    grid.push(n_limit);
    let mut sorted = grid.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let values = martingale_second_moments(m, k, &sorted)?;
    let lookup = |n: u64| values[sorted.binary_search(&n).expect("grid point")];
    let limit = extrapolate(lookup(n_limit / 2), lookup(n_limit), lambda, model);
    let alpha = 2.0 * lambda - 1.0;
    Ok(ns
        .iter()
        .map(|&n| {
            let raw = limit - lookup(n);
            ResidualL2 {
                m,
                k,
                n,
                n_limit,
                model,
                limit_second_moment: limit,
                raw,
                normalized: raw * alpha * (n as f64).powf(alpha),
            }
        })
        .collect())
}

/// Measured cross residual `|E[(M_{n,k} - Xi_k)(M_{n,l} - Xi_l)]|` and the
/// scale `n^-1 + n^(lambda_{k+l} - lambda_k - lambda_l)` it is compared with.
#[derive(Debug, Clone, Serialize)]
pub struct MixedResidual {
    pub n: u64,
    pub measured: f64,
    pub bound_scale: f64,
}

impl MixedResidual {
    pub fn ratio(&self) -> f64 {
        if self.bound_scale > 0.0 {
            self.measured / self.bound_scale
        } else {
            f64::INFINITY
        }
    }
}

pub fn mixed_residual_bound_check(
    n: u64,
    m: usize,
    k: usize,
    l: usize,
    n_limit: u64,
) -> Result<MixedResidual> {
    Ok(mixed_residual_grid(&[n], m, k, l, n_limit)?.remove(0))
}

/// Cross residuals over a grid, with `E[Xi_k Xi_l]` truncated at `n_limit`.
pub fn mixed_residual_grid(
    ns: &[u64],
    m: usize,
    k: usize,
    l: usize,
    n_limit: u64,
) -> Result<Vec<MixedResidual>> {
    if k == l {
        return param_err("distinct indices required; use residual_l2 for k = l");
    }
    let lk = large_lambda(m, k)?;
    let ll = large_lambda(m, l)?;
    if ns.iter().any(|&n| n > n_limit) {
        return param_err("n must not exceed the limit horizon");
    }
    let lkl = eigen_data(m)?.lambda(k + l);
    let mut sorted: Vec<u64> = ns.to_vec();
    sorted.push(n_limit);
    sorted.sort_unstable();
    sorted.dedup();
    let mut walk = PairMomentWalk::new(m, k, l)?;
    let values: Vec<Complex64> = sorted
        .iter()
        .map(|&n| {
            walk.advance_to(n);
            walk.martingale_product()
        })
        .collect();
    let lookup = |n: u64| values[sorted.binary_search(&n).expect("grid point")];
    let limit = lookup(n_limit);
    Ok(ns
        .iter()
        .map(|&n| {
            let nf = n as f64;
            MixedResidual {
                n,
                measured: (limit - lookup(n)).norm(),
                bound_scale: 1.0 / nf + nf.powf(lkl - lk - ll),
            }
        })
        .collect())
}

/// `(n+1)/m 1 + sum_{k=1}^r Re(n^{i mu_k} xi_k) n^{lambda_k}` with
/// `xi_k = 2 v_k / Gamma(1 + w^k)` and `r = floor((m-1)/6)`.
pub fn mean_expansion(n: u64, m: usize) -> Result<Vec<f64>> {
    check_indices(m, &[])?;
    if n == 0 {
        return param_err("mean expansion needs n >= 1");
    }
    let e = eigen_data(m)?;
    let r = (m - 1) / 6;
    let nf = n as f64;
    let mut out = vec![(nf + 1.0) / m as f64; m];
    for k in 1..=r {
        let w = e.omega(k);
        // n^{i mu} n^{lambda} = n^{w}
        let power = (w * nf.ln()).exp();
        let amp = power * 2.0 / gamma(w + 1.0);
        for (o, &v) in out.iter_mut().zip(e.vector(k)) {
            *o += (amp * v).re;
        }
    }
    Ok(out)
}

/// Precomputed means and lazily filled mixed moments at a fixed n.
#[derive(Debug, Clone)]
pub struct MomentTable {
    m: usize,
    n: u64,
    mean_u: Vec<Complex64>,
    mixed: Vec<Option<Complex64>>,
}

impl MomentTable {
    pub fn new(m: usize, n: u64) -> Result<Self> {
        check_indices(m, &[])?;
        let mean_u = (0..m).map(|k| mean_u(n, m, k, 0)).collect::<Result<_>>()?;
        Ok(MomentTable {
            m,
            n,
            mean_u,
            mixed: vec![None; m * m],
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean_u(&self) -> &[Complex64] {
        &self.mean_u
    }

    pub fn mixed(&mut self, k: usize, l: usize) -> Result<Complex64> {
        check_indices(self.m, &[k, l])?;
        let (a, b) = (k.min(l), k.max(l));
        if let Some(v) = self.mixed[a * self.m + b] {
            return Ok(v);
        }
        let v = mixed_moment(self.n, self.m, a, b)?;
        self.mixed[a * self.m + b] = Some(v);
        Ok(v)
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        let e = eigen_data(self.m).expect("validated m");
        assemble_mean(&e, &self.mean_u[..=self.m / 2])
    }
}
