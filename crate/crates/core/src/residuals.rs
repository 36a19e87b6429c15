//! Per-trajectory martingale coordinates, limit estimates and the
//! normalized residual statistics.
//!
//! For a large projection (`cos(2 pi k/m) > 1/2`) the coordinate splits as
//! `u_k - E u_k = Gamma(1+w^k) P_n (M_{n,k} - Xi_k) + Gamma(1+w^k) P_n Xi_k`
//! with `P_n = prod_{s<=n} (1 + w^k/s)`. The first part is the residual
//! `Pi_{n,k}` (times `v_k`); the second is the almost sure oscillation.
//! Small and critical projections have no such split and the residual is
//! the centred coordinate itself.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, param_err, Result};
use crate::limits::CovMatrix;
use crate::logpolar::LogPolarComplex;
use crate::moments::{gamma_one_plus_root, GammaRatioWalk, MartingaleScale, PairMomentWalk};
use crate::spectral::{eigen_data, EigenData, ProjectionClass};
use crate::urn::UrnParams;

/// How the almost sure part of a large projection is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Subtract `Gamma(1+w^k) P_n Xi_k`: the residual is exactly `Pi_{n,k}`.
    #[default]
    GammaRatio,
    /// Subtract `n^{w^k} Xi_k`, the power-phase normalization.
    PowerPhase,
}

impl std::str::FromStr for NormalizationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gamma_ratio" => Ok(NormalizationMode::GammaRatio),
            "power_phase" => Ok(NormalizationMode::PowerPhase),
            other => Err(format!("unknown mode '{other}' (expected gamma_ratio or power_phase)")),
        }
    }
}

impl std::fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormalizationMode::GammaRatio => "gamma_ratio",
            NormalizationMode::PowerPhase => "power_phase",
        })
    }
}

/// Deterministic quantities at a fixed step n: Gamma ratios, coordinate
/// means, martingale scales and the powers `n^{w^k}`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    eigen: Arc<EigenData>,
    initial_type: usize,
    n: u64,
    ratio: Vec<LogPolarComplex>,
    mean_u: Vec<Complex64>,
    scale: Vec<Complex64>,
    gamma_root: Vec<Option<Complex64>>,
    power: Vec<Complex64>,
}

impl Checkpoint {
    pub fn new(params: &UrnParams, n: u64) -> Result<Self> {
        Ok(Self::series(params, &[n])?.remove(0))
    }

    /// Checkpoints for a non-decreasing grid in one pass over n.
    pub fn series(params: &UrnParams, grid: &[u64]) -> Result<Vec<Self>> {
        if grid.windows(2).any(|w| w[0] > w[1]) {
            return param_err("checkpoint grid must be non-decreasing");
        }
        let m = params.m();
        let eigen = Arc::new(eigen_data(m)?);
        let scales: Vec<MartingaleScale> = (0..m).map(|k| MartingaleScale::new(m, k)).collect::<Result<_>>()?;
        let gamma_root: Vec<Option<Complex64>> = (0..m)
            .map(|k| if k == 0 { None } else { gamma_one_plus_root(m, k).ok() })
            .collect();
        let mut walks: Vec<GammaRatioWalk> = (0..m).map(|k| GammaRatioWalk::new(eigen.omega(k))).collect();
        let mut out = Vec::with_capacity(grid.len());
        for &n in grid {
            let ratio: Vec<LogPolarComplex> = walks
                .iter_mut()
                .map(|w| {
                    w.advance_to(n);
                    w.value()
                })
                .collect();
            let ln_n = (n.max(1) as f64).ln();
            out.push(Checkpoint {
                initial_type: params.initial_type(),
                n,
                mean_u: (0..m)
                    .map(|k| eigen.root(k * params.initial_type()) * ratio[k].to_complex())
                    .collect(),
                scale: (0..m).map(|k| scales[k].at(n, &ratio[k])).collect(),
                power: (0..m).map(|k| (eigen.omega(k) * ln_n).exp()).collect(),
                ratio,
                gamma_root: gamma_root.clone(),
                eigen: Arc::clone(&eigen),
            });
        }
        Ok(out)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> usize {
        self.eigen.m()
    }

    pub fn eigen(&self) -> &EigenData {
        &self.eigen
    }

    pub fn mean_u(&self) -> &[Complex64] {
        &self.mean_u
    }

    pub fn ratio(&self, k: usize) -> LogPolarComplex {
        self.ratio[k]
    }

    /// `n^{w^k}`.
    pub fn power(&self, k: usize) -> Complex64 {
        self.power[k]
    }

    /// `E[R_n]` reconstructed from the coordinate means.
    pub fn mean_vector(&self) -> Vec<f64> {
        self.eigen.reconstruct(&self.mean_u).iter().map(|z| z.re).collect()
    }

    /// Martingale track for a composition observed at this step.
    pub fn track(&self, counts: &[u64]) -> Result<MartingaleTrack> {
        let m = self.m();
        if counts.len() != m {
            return param_err(format!("composition has {} entries, expected {m}", counts.len()));
        }
        let total: u64 = counts.iter().sum();
        if total != self.n + 1 {
            return param_err(format!("composition sums to {total}, expected n + 1 = {}", self.n + 1));
        }
        let u = self.eigen.count_coordinates(counts);
        let mut track = MartingaleTrack {
            eigen: Arc::clone(&self.eigen),
            initial_type: self.initial_type,
            n: self.n,
            martingale: vec![Complex64::new(0.0, 0.0); m],
            u,
            u_carry: vec![Complex64::new(0.0, 0.0); m],
            ratio: self.ratio.clone(),
            scale_kind: (0..m).map(|k| MartingaleScale::new(m, k)).collect::<Result<_>>()?,
            gamma_root: self.gamma_root.clone(),
        };
        track.martingale = (0..m)
            .map(|k| self.scale[k] * (track.coordinate(k) - self.mean_u[k]))
            .collect();
        Ok(track)
    }
}

/// Running `u_k(R_n)`, `gamma_ratio(n, w^k)` and `M_{n,k}` along one trajectory.
#[derive(Debug, Clone)]
pub struct MartingaleTrack {
    eigen: Arc<EigenData>,
    initial_type: usize,
    n: u64,
    u: Vec<Complex64>,
    // running compensation for the increments added to u
    u_carry: Vec<Complex64>,
    ratio: Vec<LogPolarComplex>,
    martingale: Vec<Complex64>,
    scale_kind: Vec<MartingaleScale>,
    gamma_root: Vec<Option<Complex64>>,
}

/// State at n = 0: `u_k = w^{kj}`, `M = 0`, ratios 1.
pub fn track_init(params: &UrnParams) -> MartingaleTrack {
    let m = params.m();
    let eigen = Arc::new(eigen_data(m).expect("validated parameters"));
    let j = params.initial_type();
    MartingaleTrack {
        u: (0..m).map(|k| eigen.root(k * j)).collect(),
        u_carry: vec![Complex64::new(0.0, 0.0); m],
        ratio: vec![LogPolarComplex::ONE; m],
        martingale: vec![Complex64::new(0.0, 0.0); m],
        scale_kind: (0..m).map(|k| MartingaleScale::new(m, k).expect("valid index")).collect(),
        gamma_root: (0..m)
            .map(|k| if k == 0 { None } else { gamma_one_plus_root(m, k).ok() })
            .collect(),
        initial_type: j,
        n: 0,
        eigen,
    }
}

impl MartingaleTrack {
    pub fn m(&self) -> usize {
        self.eigen.m()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// `u_k(R_n)` for all k.
    pub fn u(&self) -> Vec<Complex64> {
        self.u.iter().zip(&self.u_carry).map(|(a, b)| a + b).collect()
    }

    fn coordinate(&self, k: usize) -> Complex64 {
        self.u[k] + self.u_carry[k]
    }

    pub fn ratio(&self, k: usize) -> LogPolarComplex {
        self.ratio[k]
    }

    /// `M_{n,k}` for all k.
    pub fn martingale(&self) -> &[Complex64] {
        &self.martingale
    }

    pub fn eigen(&self) -> &EigenData {
        &self.eigen
    }

    /// `E[u_k(R_n)]`.
    pub fn mean_u(&self, k: usize) -> Complex64 {
        self.eigen.root(k * self.initial_type) * self.ratio[k].to_complex()
    }

    /// Advances by one draw of type `drawn_type`; O(m).
    pub fn step(&mut self, drawn_type: usize) {
        self.n += 1;
        let s = self.n as f64;
        for k in 0..self.m() {
            let inc = self.eigen.draw_increment(k, drawn_type);
            let (re, cre) = two_sum(self.u[k].re, inc.re);
            let (im, cim) = two_sum(self.u[k].im, inc.im);
            self.u_carry[k] += Complex64::new(cre, cim);
            self.u[k] = Complex64::new(re, im);
            if !self.ratio[k].is_zero() {
                self.ratio[k] = self.ratio[k].mul(&LogPolarComplex::one_plus_over(self.eigen.omega(k), s));
            }
            let c = self.scale_kind[k].at(self.n, &self.ratio[k]);
            self.martingale[k] = c * (self.coordinate(k) - self.mean_u(k));
        }
    }

    /// Centred coordinate `u_k(R_n - E R_n)`.
    pub fn centered(&self, k: usize) -> Complex64 {
        self.coordinate(k) - self.mean_u(k)
    }

    /// `Gamma(1 + w^k) * gamma_ratio(n, w^k) * z`: a limit value mapped to coordinate scale.
    fn limit_part(&self, k: usize, z: Complex64) -> Result<Complex64> {
        match self.gamma_root[k] {
            Some(g) => Ok(g * self.ratio[k].to_complex() * z),
            None => domain_err(format!("eigen-index {k} has no Gamma-ratio normalization")),
        }
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Functional form of [`MartingaleTrack::step`].
pub fn track_step(mut track: MartingaleTrack, drawn_type: usize) -> MartingaleTrack {
    track.step(drawn_type);
    track
}

/// `M_{N,k}` taken as an estimate of the limit `Xi_k`.
///
/// The estimate is biased in L2 by `E|M_{N,k} - Xi_k|^2 ~ N^{1-2 lambda}/(2 lambda - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiEstimate {
    pub k: usize,
    pub n_limit: u64,
    pub value: Complex64,
}

pub fn xi_estimate(track: &MartingaleTrack, k: usize) -> Result<XiEstimate> {
    let m = track.m();
    if k >= m {
        return param_err(format!("eigen-index {k} out of range 0..{m}"));
    }
    if track.eigen.class(k) != ProjectionClass::Large {
        return domain_err(format!(
            "the martingale limit is only defined for large projections; k = {k} is {:?} for m = {m}",
            track.eigen.class(k)
        ));
    }
    Ok(XiEstimate {
        k,
        n_limit: track.n,
        value: track.martingale[k],
    })
}

fn find_xi(xis: &[XiEstimate], k: usize) -> Result<Complex64> {
    match xis.iter().find(|x| x.k == k) {
        Some(x) => Ok(x.value),
        None => param_err(format!("no limit estimate supplied for large projection k = {k}")),
    }
}

/// Coordinate of `Pi_{n,k}` along `v_k` (the residual is this times `v_k`).
pub fn pi_coordinate(track: &MartingaleTrack, xis: &[XiEstimate], k: usize) -> Result<Complex64> {
    let m = track.m();
    if k == 0 || k >= m {
        return param_err(format!("residual index {k} out of range 1..{m}"));
    }
    let centered = track.centered(k);
    if track.eigen.class(k) == ProjectionClass::Large {
        Ok(centered - track.limit_part(k, find_xi(xis, k)?)?)
    } else {
        Ok(centered)
    }
}

/// `Pi_{n,k}` as a complex vector.
pub fn pi_residual(track: &MartingaleTrack, xis: &[XiEstimate], k: usize) -> Result<Vec<Complex64>> {
    let c = pi_coordinate(track, xis, k)?;
    Ok(track.eigen.vector(k).iter().map(|&v| c * v).collect())
}

/// Normalized residual `X_{n,k}` for `1 <= k <= m/2`.
///
/// Scale is `n^{-1/2}`, or `(n log n)^{-1/2}` on the critical index k = m/6.
/// Large projections need a limit estimate for k.
pub fn x_statistic(
    track: &MartingaleTrack,
    xis: &[XiEstimate],
    k: usize,
    mode: NormalizationMode,
) -> Result<Vec<f64>> {
    let m = track.m();
    if k == 0 || k > m / 2 {
        return param_err(format!("block index {k} out of range 1..={}", m / 2));
    }
    if track.n < 2 {
        return param_err("the normalized residual needs n >= 2");
    }
    let nf = track.n as f64;
    let class = track.eigen.class(k);
    let coord = match (class, mode) {
        (ProjectionClass::Large, NormalizationMode::GammaRatio) => pi_coordinate(track, xis, k)?,
        (ProjectionClass::Large, NormalizationMode::PowerPhase) => {
            let xi = find_xi(xis, k)?;
            let power = (track.eigen.omega(k) * nf.ln()).exp();
            track.centered(k) - power * xi
        }
        _ => track.centered(k),
    };
    let scale = if class == ProjectionClass::Critical {
        (nf * nf.ln()).sqrt()
    } else {
        nf.sqrt()
    };
    Ok(track.eigen.real_pair_vector(coord / scale, k))
}

/// All blocks `X_{n,k}`, `k = 1..=m/2`, of one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct FluctuationSample {
    pub m: usize,
    pub n: u64,
    pub mode: NormalizationMode,
    /// `x[k - 1]` is `X_{n,k}`.
    pub x: Vec<Vec<f64>>,
}

impl FluctuationSample {
    pub fn block(&self, k: usize) -> &[f64] {
        &self.x[k - 1]
    }
}

pub fn fluctuation_sample(
    track: &MartingaleTrack,
    xis: &[XiEstimate],
    mode: NormalizationMode,
) -> Result<FluctuationSample> {
    let m = track.m();
    let x = (1..=m / 2)
        .map(|k| x_statistic(track, xis, k, mode))
        .collect::<Result<_>>()?;
    Ok(FluctuationSample {
        m,
        n: track.n,
        mode,
        x,
    })
}

/// Exact covariance of `X_{n,k}` (Gamma-ratio mode) at finite n.
///
/// With `X = 2 Re(w v_k) / s_n`, `Cov X = (2 E|w|^2 Re(v v^*) + 2 Re(E[w^2] v v^T)) / s_n^2`.
/// For small and critical k, `w = u_k - E u_k`; for large k the limit is
/// realised as `M_{N,k}`, so `w = Gamma(1+w^k) P_n (M_{n,k} - M_{N,k})` and
/// martingale orthogonality gives its moments from those of `M_n` and `M_N`.
pub fn exact_x_covariance(
    params: &UrnParams,
    k: usize,
    n: u64,
    n_limit: Option<u64>,
) -> Result<CovMatrix> {
    let m = params.m();
    if k == 0 || k > m / 2 {
        return param_err(format!("block index {k} out of range 1..={}", m / 2));
    }
    if n < 2 {
        return param_err("the normalized residual needs n >= 2");
    }
    let e = eigen_data(m)?;
    let class = e.class(k);
    let mut abs_walk = PairMomentWalk::new(m, k, m - k)?;
    let mut sq_walk = PairMomentWalk::new(m, k, k)?;
    let (abs2, sq) = if class == ProjectionClass::Large {
        let big = match n_limit {
            Some(big) if big >= n => big,
            Some(big) => return param_err(format!("limit horizon {big} is below n = {n}")),
            None => return domain_err("a large projection needs a finite limit horizon"),
        };
        abs_walk.advance_to(n);
        sq_walk.advance_to(n);
        let (a_n, s_n) = (abs_walk.martingale_product().re, sq_walk.martingale_product());
        let lead = gamma_one_plus_root(m, k)? * sq_walk.mean_k();
        abs_walk.advance_to(big);
        sq_walk.advance_to(big);
        let (a_big, s_big) = (abs_walk.martingale_product().re, sq_walk.martingale_product());
        (lead.norm_sqr() * (a_big - a_n), lead * lead * (s_big - s_n))
    } else {
        abs_walk.advance_to(n);
        sq_walk.advance_to(n);
        (abs_walk.centered().re, sq_walk.centered())
    };
    // starting from type j multiplies u_k by w^{kj}
    let sq = sq * e.root(2 * k * params.initial_type());
    let nf = n as f64;
    let norm = if class == ProjectionClass::Critical { nf * nf.ln() } else { nf };
    let v = e.vector(k);
    let entries = nalgebra::DMatrix::from_fn(m, m, |i, j| {
        let herm = (v[i] * v[j].conj()).re;
        let sym = (sq * v[i] * v[j]).re;
        if 2 * k == m {
            sym / norm
        } else {
            2.0 * (abs2 * herm + sym) / norm
        }
    });
    CovMatrix::from_matrix(entries)
}

/// Exact cross-covariance `E[X_{n,k} X_{n,l}^T]` of two non-large blocks.
///
/// With `X_k = Re(c_k w_k v_k) / s_k` (`c = 2`, or 1 for m/2) the entries are
/// `c_k c_l Re(E[w_k w_l] v_k v_l^T + E[w_k conj w_l] v_k v_l^*) / (2 s_k s_l)`.
pub fn exact_x_cross_covariance(params: &UrnParams, k: usize, l: usize, n: u64) -> Result<nalgebra::DMatrix<f64>> {
    let m = params.m();
    for b in [k, l] {
        if b == 0 || b > m / 2 {
            return param_err(format!("block index {b} out of range 1..={}", m / 2));
        }
    }
    if n < 2 {
        return param_err("the normalized residual needs n >= 2");
    }
    let e = eigen_data(m)?;
    if e.class(k) == ProjectionClass::Large || e.class(l) == ProjectionClass::Large {
        return domain_err("exact cross-covariances are only available for non-large blocks");
    }
    let j = params.initial_type();
    let mut direct = PairMomentWalk::new(m, k, l)?;
    let mut conj = PairMomentWalk::new(m, k, m - l)?;
    direct.advance_to(n);
    conj.advance_to(n);
    let ww = direct.centered() * e.root((k + l) * j);
    let wc = conj.centered() * e.root((k + m - l) * j);
    let nf = n as f64;
    let s = |b: usize| {
        if e.class(b) == ProjectionClass::Critical {
            (nf * nf.ln()).sqrt()
        } else {
            nf.sqrt()
        }
    };
    let c = |b: usize| if 2 * b == m { 1.0 } else { 2.0 };
    let factor = c(k) * c(l) / (2.0 * s(k) * s(l));
    let (vk, vl) = (e.vector(k), e.vector(l));
    Ok(nalgebra::DMatrix::from_fn(m, m, |a, b| {
        factor * (ww * vk[a] * vl[b] + wc * vk[a] * vl[b].conj()).re
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{gamma_ratio, mean_u};
    use crate::rng::UrnRng;
    use crate::urn::{simulate, step_with_draw, new_urn};

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn init_state() {
        let p = UrnParams::new(7, 1).unwrap();
        let t = track_init(&p);
        let e = eigen_data(7).unwrap();
        for k in 0..7 {
            assert_eq!(t.u()[k], e.omega(k));
            assert_eq!(t.martingale()[k], Complex64::new(0.0, 0.0));
            assert_eq!(t.ratio(k), LogPolarComplex::ONE);
        }
    }

    #[test]
    fn first_step_is_deterministic() {
        for m in 2..9 {
            let t = track_step(track_init(&UrnParams::new(m, 0).unwrap()), 0);
            for k in 0..m {
                assert!(t.martingale()[k].norm() < 1e-14);
            }
        }
    }

    #[test]
    fn alternating_index_at_two_steps() {
        let p = UrnParams::new(2, 0).unwrap();
        for (a, b) in [(0, 0), (0, 1)] {
            let t = track_step(track_step(track_init(&p), a), b);
            let m1 = t.martingale()[1];
            assert!((m1.norm() - 2.0).abs() < 1e-14 && m1.im.abs() < 1e-14);
        }
    }

    #[test]
    fn ratio_matches_closed_form_bitwise() {
        let p = UrnParams::new(9, 0).unwrap();
        let mut t = track_init(&p);
        let mut rng = UrnRng::new(4);
        let mut state = new_urn(&p);
        for _ in 0..500 {
            let (next, drawn) = step_with_draw(&state, &mut rng);
            state = next;
            t.step(drawn);
        }
        let e = eigen_data(9).unwrap();
        for k in 0..9 {
            assert_eq!(t.ratio(k), gamma_ratio(500, e.omega(k)));
        }
        let cp = Checkpoint::new(&p, 500).unwrap();
        let t2 = cp.track(state.counts()).unwrap();
        for k in 0..9 {
            assert!(close(t.martingale()[k], t2.martingale()[k], 1e-9));
            assert!(close(cp.mean_u()[k], mean_u(500, 9, k, 0).unwrap(), 1e-9));
        }
    }

    #[test]
    fn incremental_coordinates_do_not_drift() {
        let p = UrnParams::new(11, 3).unwrap();
        let mut traj = simulate(&p, 100_000, 17);
        let mut t = track_init(&p);
        for _ in 0..100_000 {
            t.step(traj.step());
        }
        let direct = t.eigen().count_coordinates(traj.counts());
        let u = t.u();
        for k in 0..11 {
            assert!(close(u[k], direct[k], 1e-9), "k = {k}: {}", (u[k] - direct[k]).norm());
        }
    }

    #[test]
    fn xi_only_for_large_projections() {
        let t = track_init(&UrnParams::new(7, 0).unwrap());
        assert!(xi_estimate(&t, 1).is_ok());
        assert!(xi_estimate(&t, 6).is_ok());
        assert!(xi_estimate(&t, 2).is_err());
        assert!(xi_estimate(&t, 0).is_err());
        let t = track_init(&UrnParams::new(12, 0).unwrap());
        assert!(xi_estimate(&t, 2).is_err());
    }

    #[test]
    fn representation_identity() {
        for m in [7usize, 12, 13] {
            let p = UrnParams::new(m, 0).unwrap();
            let mut traj = simulate(&p, 3_000, m as u64);
            traj.advance_to(3_000);
            let cp = Checkpoint::new(&p, 3_000).unwrap();
            let t = cp.track(traj.counts()).unwrap();
            let e = t.eigen();
            let xis: Vec<XiEstimate> = (1..m)
                .filter(|&k| e.class(k) == ProjectionClass::Large)
                .map(|k| XiEstimate {
                    k,
                    n_limit: 0,
                    value: Complex64::new(0.3 * k as f64, -0.1),
                })
                .collect();
            let mut lhs = vec![Complex64::new(0.0, 0.0); m];
            for k in 1..m {
                for (a, b) in lhs.iter_mut().zip(pi_residual(&t, &xis, k).unwrap()) {
                    *a += b;
                }
            }
            let mean = cp.mean_vector();
            let mut rhs: Vec<Complex64> = traj
                .counts()
                .iter()
                .zip(&mean)
                .map(|(&c, &mu)| Complex64::new(c as f64 - mu, 0.0))
                .collect();
            for xi in &xis {
                let part = t.limit_part(xi.k, xi.value).unwrap();
                for (r, &v) in rhs.iter_mut().zip(e.vector(xi.k)) {
                    *r -= part * v;
                }
            }
            let scale: f64 = rhs.iter().map(|z| z.norm()).fold(1.0, f64::max);
            for (a, b) in lhs.iter().zip(&rhs) {
                assert!((a - b).norm() <= 1e-8 * scale, "m = {m}");
            }
        }
    }

    #[test]
    fn conjugate_residuals() {
        let p = UrnParams::new(9, 0).unwrap();
        let mut traj = simulate(&p, 1000, 5);
        traj.advance_to(1000);
        let t = Checkpoint::new(&p, 1000).unwrap().track(traj.counts()).unwrap();
        let xis = vec![
            XiEstimate { k: 1, n_limit: 0, value: Complex64::new(0.2, 0.4) },
            XiEstimate { k: 8, n_limit: 0, value: Complex64::new(0.2, -0.4) },
        ];
        for k in 1..9 {
            let a = pi_residual(&t, &xis, k).unwrap();
            let b = pi_residual(&t, &xis, 9 - k).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(close(*x, y.conj(), 1e-9));
            }
        }
        assert!(pi_residual(&t, &[], 1).is_err());
        assert!(pi_residual(&t, &xis, 0).is_err());
    }

    #[test]
    fn x_lies_in_its_plane() {
        for m in [7usize, 8, 12] {
            let p = UrnParams::new(m, 0).unwrap();
            let mut traj = simulate(&p, 2000, 1);
            traj.advance_to(2000);
            let t = Checkpoint::new(&p, 2000).unwrap().track(traj.counts()).unwrap();
            let xis: Vec<XiEstimate> = (1..m)
                .filter(|&k| t.eigen().class(k) == ProjectionClass::Large)
                .map(|k| xi_estimate(&t, k).unwrap())
                .collect();
            for mode in [NormalizationMode::GammaRatio, NormalizationMode::PowerPhase] {
                let s = fluctuation_sample(&t, &xis, mode).unwrap();
                for k in 1..=m / 2 {
                    let x = s.block(k);
                    let proj = t.eigen().project_pair(x, k).unwrap();
                    let off: f64 = x.iter().zip(&proj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(off < 1e-10, "m = {m}, k = {k}");
                }
            }
        }
    }

    #[test]
    fn x_statistic_guards() {
        let p = UrnParams::new(7, 0).unwrap();
        let t = track_step(track_init(&p), 0);
        assert!(x_statistic(&t, &[], 2, NormalizationMode::GammaRatio).is_err());
        let t = track_step(t, 1);
        assert!(x_statistic(&t, &[], 2, NormalizationMode::GammaRatio).is_ok());
        assert!(x_statistic(&t, &[], 1, NormalizationMode::GammaRatio).is_err());
        assert!(x_statistic(&t, &[], 4, NormalizationMode::GammaRatio).is_err());
        assert_eq!("power_phase".parse::<NormalizationMode>().unwrap(), NormalizationMode::PowerPhase);
    }

    #[test]
    fn exact_covariance_matches_enumeration() {
        use crate::oracle::exact_distribution;
        for (m, j) in [(7usize, 0usize), (8, 3), (12, 1), (9, 0)] {
            let n = 7;
            let p = UrnParams::new(m, j).unwrap();
            let dist = exact_distribution(m, j, n).unwrap();
            let cp = Checkpoint::new(&p, n).unwrap();
            let big = 9;
            for k in 1..=m / 2 {
                let large = eigen_data(m).unwrap().class(k) == ProjectionClass::Large;
                let exact = exact_x_covariance(&p, k, n, Some(big)).unwrap();
                let mut cov = vec![vec![0.0; m]; m];
                if large {
                    // joint law of (R_n, R_N): run the chain forward from each R_n
                    let cn = Checkpoint::new(&p, big).unwrap();
                    for (counts, prob) in dist.probabilities() {
                        let t = cp.track(&counts).unwrap();
                        let mut layer = std::collections::BTreeMap::from([(counts.clone(), 1.0)]);
                        for step in n + 1..=big {
                            let mut next = std::collections::BTreeMap::new();
                            for (c, w) in &layer {
                                for i in 0..m {
                                    if c[i] > 0 {
                                        let mut child = c.clone();
                                        child[(i + 1) % m] += 1;
                                        *next.entry(child).or_insert(0.0) += w * c[i] as f64 / step as f64;
                                    }
                                }
                            }
                            layer = next;
                        }
                        for (c, w) in layer {
                            let xi = xi_estimate(&cn.track(&c).unwrap(), k).unwrap();
                            let x = x_statistic(&t, &[xi], k, NormalizationMode::GammaRatio).unwrap();
                            for i in 0..m {
                                for l in 0..m {
                                    cov[i][l] += prob * w * x[i] * x[l];
                                }
                            }
                        }
                    }
                    for i in 0..m {
                        for l in 0..m {
                            assert!((exact.get(i, l) - cov[i][l]).abs() < 1e-10, "m={m} k={k}");
                        }
                    }
                    continue;
                }
                for (counts, prob) in dist.probabilities() {
                    let t = cp.track(&counts).unwrap();
                    let x = x_statistic(&t, &[], k, NormalizationMode::GammaRatio).unwrap();
                    for i in 0..m {
                        for l in 0..m {
                            cov[i][l] += prob * x[i] * x[l];
                        }
                    }
                }
                for i in 0..m {
                    for l in 0..m {
                        assert!((exact.get(i, l) - cov[i][l]).abs() < 1e-10, "m={m} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn checkpoint_rejects_bad_composition() {
        let cp = Checkpoint::new(&UrnParams::new(5, 0).unwrap(), 3).unwrap();
        assert!(cp.track(&[1, 1, 1, 0, 0]).is_err());
        assert!(cp.track(&[1, 1, 1, 1]).is_err());
        assert!(cp.track(&[1, 1, 1, 1, 0]).is_ok());
    }

    #[test]
    fn cross_covariance_on_the_diagonal() {
        for (m, k) in [(7usize, 2usize), (9, 4), (12, 2), (8, 4)] {
            let p = UrnParams::new(m, 1).unwrap();
            let a = exact_x_covariance(&p, k, 500, None).unwrap();
            let b = exact_x_cross_covariance(&p, k, k, 500).unwrap();
            assert!((a.matrix() - b).amax() < 1e-12 * a.max_abs(), "m={m} k={k}");
        }
        let p = UrnParams::new(7, 0).unwrap();
        assert!(exact_x_cross_covariance(&p, 1, 2, 100).is_err());
    }

    #[test]
    fn cross_covariance_matches_enumeration() {
        let (m, j, n) = (9usize, 2usize, 7u64);
        let p = UrnParams::new(m, j).unwrap();
        let e = eigen_data(m).unwrap();
        let law = crate::oracle::exact_distribution(m, j, n).unwrap();
        let x = |counts: &[u64], k: usize| {
            let u = e.count_coordinates(counts)[k] - mean_u(n, m, k, j).unwrap();
            e.real_pair_vector(u / (n as f64).sqrt(), k)
        };
        for (k, l) in [(2usize, 3usize), (3, 4), (2, 4)] {
            let exact = exact_x_cross_covariance(&p, k, l, n).unwrap();
            for a in 0..m {
                for b in 0..m {
                    let brute: f64 = law.expect(|c| x(c, k)[a] * x(c, l)[b]);
                    assert!((brute - exact[(a, b)]).abs() < 1e-12, "k={k} l={l} ({a},{b})");
                }
            }
        }
    }
}
