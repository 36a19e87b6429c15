//! Discrete Fourier eigenstructure of the cyclic replacement matrix.
//!
//! The matrices `R` and `Id + R^t/(n+1)` share the eigenvectors
//! `v_k = (1/m)(1, w^-k, w^-2k, ...)` with `w = exp(2 pi i / m)`. The
//! coordinate of a vector `x` along `v_k` is `u_k(x) = sum_t w^{kt} x_t`.

use num_complex::Complex64;

use crate::error::{param_err, Result};

/// How the eigencomponent `k` behaves as n grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionClass {
    /// k = 0: the deterministic drift component.
    Drift,
    /// cos(2 pi k/m) > 1/2: periodic almost-sure oscillation of order n^lambda.
    Large,
    /// cos(2 pi k/m) = 1/2 (only when 6 | m): sqrt(n log n) scale.
    Critical,
    /// cos(2 pi k/m) < 1/2: sqrt(n) central limit scale.
    Small,
}

/// Classification by exact integer arithmetic; floating cosines are not
/// reliable at the lambda = 1/2 boundary.
pub fn classify(m: usize, k: usize) -> ProjectionClass {
    let k = k % m;
    let kk = k.min(m - k);
    if kk == 0 {
        ProjectionClass::Drift
    } else if 6 * kk < m {
        ProjectionClass::Large
    } else if 6 * kk == m {
        ProjectionClass::Critical
    } else {
        ProjectionClass::Small
    }
}

/// `exp(2 pi i j / m)`, snapped to exact values on multiples of 30 degrees.
fn unit_root(j: usize, m: usize) -> Complex64 {
    let j = j % m;
    if (12 * j).is_multiple_of(m) {
        const H: f64 = 0.866_025_403_784_438_6;
        const TABLE: [(f64, f64); 12] = [
            (1.0, 0.0),
            (H, 0.5),
            (0.5, H),
            (0.0, 1.0),
            (-0.5, H),
            (-H, 0.5),
            (-1.0, 0.0),
            (-H, -0.5),
            (-0.5, -H),
            (0.0, -1.0),
            (0.5, -H),
            (H, -0.5),
        ];
        let (c, s) = TABLE[12 * j / m];
        return Complex64::new(c, s);
    }
    let angle = std::f64::consts::TAU * j as f64 / m as f64;
    Complex64::new(angle.cos(), angle.sin())
}

/// Roots of unity, eigenvalue parts and eigenvectors for a fixed m.
#[derive(Debug, Clone)]
pub struct EigenData {
    m: usize,
    roots: Vec<Complex64>,
    vectors: Vec<Vec<Complex64>>,
}

/// Builds the eigenstructure for `m` types.
pub fn eigen_data(m: usize) -> Result<EigenData> {
    if m < 2 {
        return param_err(format!("number of types must be at least 2, got {m}"));
    }
    let mut roots = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..=m / 2 {
        roots[j] = unit_root(j, m);
        if j != 0 {
            roots[m - j] = roots[j].conj();
        }
    }
    let inv_m = 1.0 / m as f64;
    let vectors = (0..m)
        .map(|k| (0..m).map(|t| roots[(k * t) % m].conj() * inv_m).collect())
        .collect();
    Ok(EigenData { m, roots, vectors })
}

impl EigenData {
    pub fn m(&self) -> usize {
        self.m
    }

    /// `w^e` for any exponent (reduced mod m).
    #[inline]
    pub fn root(&self, e: usize) -> Complex64 {
        self.roots[e % self.m]
    }

    pub fn omega(&self, k: usize) -> Complex64 {
        self.root(k)
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.root(k).re
    }

    pub fn mu(&self, k: usize) -> f64 {
        self.root(k).im
    }

    pub fn vector(&self, k: usize) -> &[Complex64] {
        &self.vectors[k % self.m]
    }

    pub fn class(&self, k: usize) -> ProjectionClass {
        classify(self.m, k)
    }

    /// `u_k(x) = sum_t w^{kt} x_t` for a real vector.
    pub fn dft_coordinate(&self, x: &[f64], k: usize) -> Result<Complex64> {
        self.check(x.len(), k)?;
        Ok(x.iter()
            .enumerate()
            .map(|(t, &xt)| self.root(k * t) * xt)
            .sum())
    }

    /// Complex-vector version of [`EigenData::dft_coordinate`].
    pub fn dft_coordinate_complex(&self, x: &[Complex64], k: usize) -> Result<Complex64> {
        self.check(x.len(), k)?;
        Ok(x.iter()
            .enumerate()
            .map(|(t, &xt)| self.root(k * t) * xt)
            .sum())
    }

    /// All m coordinates by the direct O(m^2) transform.
    pub fn coordinates(&self, x: &[f64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.m, "vector length must equal m");
        (0..self.m)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &xt)| self.root(k * t) * xt)
                    .sum()
            })
            .collect()
    }

    /// Coordinates of an integer count vector.
    pub fn count_coordinates(&self, counts: &[u64]) -> Vec<Complex64> {
        let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        self.coordinates(&x)
    }

    /// `sum_k u_k v_k`.
    pub fn reconstruct(&self, coords: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.m];
        for (k, &c) in coords.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(&self.vectors[k]) {
                *o += c * v;
            }
        }
        out
    }

    /// Increment of `u_k` when a ball of type `drawn` is drawn (a ball of
    /// type `drawn + 1` is added): `w^{k (drawn + 1)}`.
    #[inline]
    pub fn draw_increment(&self, k: usize, drawn: usize) -> Complex64 {
        self.root(k * ((drawn + 1) % self.m))
    }

    /// Real pair projection `(pi_k + pi_{m-k}) x`, or `pi_{m/2} x` for k = m/2.
    pub fn project_pair(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.m / 2 {
            return param_err(format!("pair index {k} out of range 1..={}", self.m / 2));
        }
        let u = self.dft_coordinate(x, k)?;
        Ok(self.real_pair_vector(u, k))
    }

    /// `2 Re(c v_k)`, or `c v_{m/2}` (real) when 2k = m.
    pub fn real_pair_vector(&self, c: Complex64, k: usize) -> Vec<f64> {
        let factor = if 2 * k == self.m { 1.0 } else { 2.0 };
        self.vectors[k].iter().map(|&v| factor * (c * v).re).collect()
    }

    fn check(&self, len: usize, k: usize) -> Result<()> {
        if len != self.m {
            return param_err(format!("vector length {len} differs from m = {}", self.m));
        }
        if k >= self.m {
            return param_err(format!("coordinate index {k} out of range 0..{}", self.m));
        }
        Ok(())
    }
}

/// `R^t x`: the cyclic shift `(R^t x)_i = x_{i-1 mod m}`.
pub fn shift_action<T: Clone>(x: &[T]) -> Vec<T> {
    let m = x.len();
    (0..m).map(|i| x[(i + m - 1) % m].clone()).collect()
}

/// Hermitian inner product `<a, b> = sum a_t conj(b_t)`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}
