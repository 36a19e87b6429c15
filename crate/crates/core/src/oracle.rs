//! Brute-force ground truth at small n.
//!
//! The exact law of the composition is built by forward dynamic programming
//! over the composition lattice, either in double precision or exactly as
//! integer numerators over the common denominator `n!`. The binary search
//! tree embedding gives a second, structurally different simulator.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{param_err, Result, UrnError};
use crate::moments::{gamma_ratio, mean_u, mixed_moment, MartingaleScale};
use crate::rng::UrnRng;
use crate::spectral::{eigen_data, shift_action};
use crate::urn::{Composition, UrnParams};

/// Largest lattice size `C(n+m, m-1)` the oracle will enumerate.
pub const LATTICE_GUARD: f64 = 1e7;

/// Which arithmetic the oracle uses for probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    Double,
    Rational,
}

/// Probability weight stored in an exact law.
pub trait Mass: Clone + std::fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn add_assign(&mut self, other: &Self);
    /// Weight after a draw with probability `count / step` (denominator `step!` implied for rationals).
    fn draw(&self, count: u64, step: u64) -> Self;
    /// Weight of an independent pair `(a, b)` mixed with probability 1/n and
    /// binomial weight `C(n-1, i)` in the rational denominator bookkeeping.
    fn pair(a: &Self, b: &Self, n: u64, binom: &BigUint) -> Self;
    fn probability(&self, denominator: &BigUint) -> f64;
}

impl Mass for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn draw(&self, count: u64, step: u64) -> Self {
        self * count as f64 / step as f64
    }
    fn pair(a: &Self, b: &Self, n: u64, _binom: &BigUint) -> Self {
        a * b / n as f64
    }
    fn probability(&self, _denominator: &BigUint) -> f64 {
        *self
    }
}

impl Mass for BigUint {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        BigUint::from(1u32)
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn draw(&self, count: u64, _step: u64) -> Self {
        self * count
    }
    fn pair(a: &Self, b: &Self, _n: u64, binom: &BigUint) -> Self {
        a * b * binom
    }
    fn probability(&self, denominator: &BigUint) -> f64 {
        ratio_to_f64(self, denominator)
    }
}

fn ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    let bits = den.bits().max(num.bits());
    if bits < 1000 {
        num.to_f64().unwrap_or(f64::NAN) / den.to_f64().unwrap_or(f64::NAN)
    } else {
        let shift = bits - 900;
        (num >> shift).to_f64().unwrap_or(0.0) / (den >> shift).to_f64().unwrap_or(f64::NAN)
    }
}

pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::from(1u32), |acc, s| acc * s)
}

fn binomial_big(n: u64, k: u64) -> BigUint {
    if k > n {
        return Zero::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// `C(n+m, m-1)` in floating point, saturating.
fn lattice_size(m: usize, n: u64) -> f64 {
    let top = n as f64 + m as f64;
    let k = (m - 1) as f64;
    let mut acc = 1.0;
    for i in 0..(m - 1) {
        acc *= (top - i as f64) / (k - i as f64);
    }
    acc
}

pub(crate) fn guard(m: usize, n: u64) -> Result<()> {
    let size = lattice_size(m, n);
    if size > LATTICE_GUARD {
        return Err(UrnError::Resource(format!(
            "composition lattice C(n+m, m-1) = {size:.3e} exceeds {LATTICE_GUARD:.0e} (m = {m}, n = {n})"
        )));
    }
    Ok(())
}

/// Exact law of `R_n` over compositions, keyed by the count vector.
///
/// In rational mode the stored values are numerators over `n!`.
#[derive(Debug, Clone)]
pub struct ExactDist<P: Mass = f64> {
    m: usize,
    initial_type: usize,
    n: u64,
    pmf: BTreeMap<Vec<u64>, P>,
}

pub type RationalDist = ExactDist<BigUint>;

/// Exact law in double precision.
pub fn exact_distribution(m: usize, initial_type: usize, n: u64) -> Result<ExactDist<f64>> {
    ExactDist::build(m, initial_type, n)
}

/// Exact law with integer numerators over `n!`.
pub fn exact_distribution_rational(m: usize, initial_type: usize, n: u64) -> Result<RationalDist> {
    ExactDist::build(m, initial_type, n)
}

impl<P: Mass> ExactDist<P> {
    pub fn build(m: usize, initial_type: usize, n: u64) -> Result<Self> {
        let params = UrnParams::new(m, initial_type)?;
        guard(m, n)?;
        let mut start = vec![0u64; m];
        start[params.initial_type()] = 1;
        let mut layer: BTreeMap<Vec<u64>, P> = BTreeMap::new();
        layer.insert(start, P::one());
        for step in 1..=n {
            let mut next: BTreeMap<Vec<u64>, P> = BTreeMap::new();
            for (counts, weight) in &layer {
                for (i, &c) in counts.iter().enumerate() {
                    if c == 0 {
                        continue;
                    }
                    let mut child = counts.clone();
                    child[(i + 1) % m] += 1;
                    let w = weight.draw(c, step);
                    next.entry(child).or_insert_with(P::zero).add_assign(&w);
                }
            }
            layer = next;
        }
        Ok(ExactDist {
            m,
            initial_type,
            n,
            pmf: layer,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn initial_type(&self) -> usize {
        self.initial_type
    }

    pub fn support_size(&self) -> usize {
        self.pmf.len()
    }

    pub fn weights(&self) -> &BTreeMap<Vec<u64>, P> {
        &self.pmf
    }

    /// Denominator of the stored weights (`n!` for rationals, ignored for doubles).
    pub fn denominator(&self) -> BigUint {
        factorial(self.n)
    }

    /// Probabilities as doubles.
    pub fn probabilities(&self) -> BTreeMap<Vec<u64>, f64> {
        let den = self.denominator();
        self.pmf.iter().map(|(k, w)| (k.clone(), w.probability(&den))).collect()
    }

    pub fn probability(&self, counts: &[u64]) -> f64 {
        let den = self.denominator();
        self.pmf.get(counts).map(|w| w.probability(&den)).unwrap_or(0.0)
    }

    /// Pushforward under `j` cyclic shifts `x -> R^t x`.
    pub fn shifted(&self, j: usize) -> ExactDist<P> {
        let pmf = self
            .pmf
            .iter()
            .map(|(k, w)| {
                let mut key = k.clone();
                for _ in 0..j % self.m {
                    key = shift_action(&key);
                }
                (key, w.clone())
            })
            .collect();
        ExactDist {
            m: self.m,
            initial_type: (self.initial_type + j) % self.m,
            n: self.n,
            pmf,
        }
    }

    /// Expectation of `f` over the law.
    pub fn expect<T, F>(&self, f: F) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
        F: Fn(&[u64]) -> T,
    {
        let den = self.denominator();
        self.pmf
            .iter()
            .fold(T::default(), |acc, (k, w)| acc + f(k) * w.probability(&den))
    }
}

impl ExactDist<f64> {
    /// JSON golden file: `{m, n, initial_type, pmf: {"c0,c1,...": p}}`.
    pub fn to_json(&self) -> Value {
        let pmf: serde_json::Map<String, Value> = self
            .pmf
            .iter()
            .map(|(k, p)| (key_string(k), json!(p)))
            .collect();
        json!({"m": self.m, "n": self.n, "initial_type": self.initial_type, "arithmetic": "double", "pmf": pmf})
    }
}

impl ExactDist<BigUint> {
    /// JSON golden file with reduced fractions as strings.
    pub fn to_json(&self) -> Value {
        let den = self.denominator();
        let pmf: serde_json::Map<String, Value> = self
            .pmf
            .iter()
            .map(|(k, num)| {
                let g = num.gcd(&den);
                (key_string(k), json!(format!("{}/{}", num / &g, &den / &g)))
            })
            .collect();
        json!({"m": self.m, "n": self.n, "initial_type": self.initial_type, "arithmetic": "rational", "pmf": pmf})
    }

    /// Converts to a double-precision law.
    pub fn to_double(&self) -> ExactDist<f64> {
        ExactDist {
            m: self.m,
            initial_type: self.initial_type,
            n: self.n,
            pmf: self.probabilities(),
        }
    }
}

fn key_string(k: &[u64]) -> String {
    k.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// Exact mean, covariance and spectral moments of a law.
#[derive(Debug, Clone)]
pub struct DistMoments {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// `E[u_k]`.
    pub u_mean: Vec<Complex64>,
    /// `E[u_k u_l]`, indexed `[k][l]`.
    pub u_mixed: Vec<Vec<Complex64>>,
}

pub fn dist_moments<P: Mass>(dist: &ExactDist<P>) -> DistMoments {
    let m = dist.m;
    let e = eigen_data(m).expect("validated m");
    let den = dist.denominator();
    let mut mean = vec![0.0; m];
    let mut second = vec![vec![0.0; m]; m];
    let mut u_mean = vec![Complex64::new(0.0, 0.0); m];
    let mut u_mixed = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for (counts, w) in &dist.pmf {
        let p = w.probability(&den);
        let u = e.count_coordinates(counts);
        for i in 0..m {
            mean[i] += p * counts[i] as f64;
            u_mean[i] += u[i] * p;
            for j in 0..m {
                second[i][j] += p * (counts[i] * counts[j]) as f64;
                u_mixed[i][j] += u[i] * u[j] * p;
            }
        }
    }
    let covariance = (0..m)
        .map(|i| (0..m).map(|j| second[i][j] - mean[i] * mean[j]).collect())
        .collect();
    DistMoments {
        mean,
        covariance,
        u_mean,
        u_mixed,
    }
}

/// Outcome of comparing two exact laws.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LawComparison {
    pub equal: bool,
    /// Largest absolute probability difference (double mode) or 0/1 flag magnitude.
    pub max_deviation: f64,
    /// Total variation distance.
    pub total_variation: f64,
}

fn compare<P: Mass + PartialEq>(a: &ExactDist<P>, b: &ExactDist<P>) -> LawComparison {
    let den_a = a.denominator();
    let den_b = b.denominator();
    let mut keys: Vec<&Vec<u64>> = a.pmf.keys().chain(b.pmf.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut equal = a.n == b.n;
    let mut max_dev: f64 = 0.0;
    let mut tv = 0.0;
    for key in keys {
        let wa = a.pmf.get(key);
        let wb = b.pmf.get(key);
        if wa != wb {
            equal = false;
        }
        let pa = wa.map(|w| w.probability(&den_a)).unwrap_or(0.0);
        let pb = wb.map(|w| w.probability(&den_b)).unwrap_or(0.0);
        max_dev = max_dev.max((pa - pb).abs());
        tv += (pa - pb).abs();
    }
    LawComparison {
        equal,
        max_deviation: max_dev,
        total_variation: 0.5 * tv,
    }
}

/// Compares the law of `R_n` started at type j with the law started at type
/// 0 pushed forward by j shifts.
pub fn shift_check(m: usize, j: usize, n: u64, arithmetic: Arithmetic) -> Result<LawComparison> {
    let jj = j % m.max(1);
    match arithmetic {
        Arithmetic::Double => {
            let direct = exact_distribution(m, jj, n)?;
            let pushed = exact_distribution(m, 0, n)?.shifted(jj);
            let mut cmp = compare(&direct, &pushed);
            cmp.equal = cmp.max_deviation < 1e-12;
            Ok(cmp)
        }
        Arithmetic::Rational => {
            let direct = exact_distribution_rational(m, jj, n)?;
            let pushed = exact_distribution_rational(m, 0, n)?.shifted(jj);
            Ok(compare(&direct, &pushed))
        }
    }
}

/// Law of `R_I + R^t R'_J` with `I` uniform on `0..n`, `J = n - 1 - I`, and
/// independent copies `R`, `R'` started at type 0.
pub fn subtree_mixture<P: Mass>(m: usize, n: u64) -> Result<ExactDist<P>> {
    if n == 0 {
        return param_err("the subtree recurrence needs n >= 1");
    }
    guard(m, n)?;
    let laws: Vec<ExactDist<P>> = (0..n)
        .map(|i| ExactDist::<P>::build(m, 0, i))
        .collect::<Result<_>>()?;
    let mut pmf: BTreeMap<Vec<u64>, P> = BTreeMap::new();
    for i in 0..n {
        let left = &laws[i as usize];
        let right = laws[(n - 1 - i) as usize].shifted(1);
        let binom = binomial_big(n - 1, i);
        for (ka, wa) in &left.pmf {
            for (kb, wb) in &right.pmf {
                let key: Vec<u64> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                let w = P::pair(wa, wb, n, &binom);
                pmf.entry(key).or_insert_with(P::zero).add_assign(&w);
            }
        }
    }
    Ok(ExactDist {
        m,
        initial_type: 0,
        n,
        pmf,
    })
}

/// Compares `exact_distribution(m, 0, n)` with the subtree mixture.
pub fn recurrence_check(m: usize, n: u64, arithmetic: Arithmetic) -> Result<LawComparison> {
    match arithmetic {
        Arithmetic::Double => {
            let lhs = exact_distribution(m, 0, n)?;
            let rhs = subtree_mixture::<f64>(m, n)?;
            let mut cmp = compare(&lhs, &rhs);
            cmp.equal = cmp.total_variation < 1e-12;
            Ok(cmp)
        }
        Arithmetic::Rational => {
            let lhs = exact_distribution_rational(m, 0, n)?;
            let rhs = subtree_mixture::<BigUint>(m, n)?;
            Ok(compare(&lhs, &rhs))
        }
    }
}

/// Largest deviation between closed-form and enumerated spectral moments:
/// `E[u_k]` and `E[u_k u_l]` for all k, l.
pub fn moment_equivalence(m: usize, n: u64) -> Result<f64> {
    let dist = exact_distribution(m, 0, n)?;
    let moments = dist_moments(&dist);
    let mut worst: f64 = 0.0;
    for k in 0..m {
        worst = worst.max((mean_u(n, m, k, 0)? - moments.u_mean[k]).norm());
        for l in 0..m {
            worst = worst.max((mixed_moment(n, m, k, l)? - moments.u_mixed[k][l]).norm());
        }
    }
    let mean_closed = crate::moments::mean_vector(n, m, 0)?;
    for (a, b) in mean_closed.iter().zip(&moments.mean) {
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Largest `|E[M_{n+1,k} | R_n = c] - M_{n,k}(c)|` over the support of `R_n`
/// and all k.
pub fn martingale_check(m: usize, n: u64) -> Result<f64> {
    let dist = exact_distribution(m, 0, n)?;
    let e = eigen_data(m)?;
    let mut worst: f64 = 0.0;
    for k in 0..m {
        let scale = MartingaleScale::new(m, k)?;
        let ratio_now = gamma_ratio(n, e.omega(k));
        let ratio_next = gamma_ratio(n + 1, e.omega(k));
        let c_now = scale.at(n, &ratio_now);
        let c_next = scale.at(n + 1, &ratio_next);
        let mean_now = ratio_now.to_complex();
        let mean_next = ratio_next.to_complex();
        for counts in dist.weights().keys() {
            let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let u = e.dft_coordinate(&x, k)?;
            let m_now = c_now * (u - mean_now);
            let total = (n + 1) as f64;
            let mut expected = Complex64::new(0.0, 0.0);
            for (i, &ci) in counts.iter().enumerate() {
                if ci == 0 {
                    continue;
                }
                let u_next = u + e.draw_increment(k, i);
                expected += c_next * (u_next - mean_next) * (ci as f64 / total);
            }
            worst = worst.max((expected - m_now).norm());
        }
    }
    Ok(worst)
}

/// A node of the labelled random binary search tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BstNode {
    pub label: usize,
    /// Arena indices of the (left, right) children; `None` for external nodes.
    pub children: Option<(usize, usize)>,
}

impl BstNode {
    pub fn is_external(&self) -> bool {
        self.children.is_none()
    }
}

/// Random binary search tree whose external nodes carry urn types.
///
/// Splitting an external node of label j gives a left child labelled j and
/// a right child labelled j + 1 mod m.
#[derive(Debug, Clone)]
pub struct BstTree {
    m: usize,
    nodes: Vec<BstNode>,
    external: Vec<usize>,
}

impl BstTree {
    pub fn new(m: usize, root_label: usize) -> Result<Self> {
        UrnParams::new(m, root_label)?;
        Ok(BstTree {
            m,
            nodes: vec![BstNode {
                label: root_label,
                children: None,
            }],
            external: vec![0],
        })
    }

    /// Replaces a uniformly chosen external node by an internal node.
    pub fn grow(&mut self, rng: &mut UrnRng) {
        let slot = rng.below(self.external.len() as u64) as usize;
        let id = self.external[slot];
        let label = self.nodes[id].label;
        let left = self.nodes.len();
        self.nodes.push(BstNode { label, children: None });
        self.nodes.push(BstNode {
            label: (label + 1) % self.m,
            children: None,
        });
        self.nodes[id].children = Some((left, left + 1));
        self.external[slot] = left;
        self.external.push(left + 1);
    }

    pub fn nodes(&self) -> &[BstNode] {
        &self.nodes
    }

    pub fn internal_count(&self) -> usize {
        self.external.len() - 1
    }

    /// Counts of external-node labels.
    pub fn composition(&self) -> Composition {
        let mut counts = vec![0u64; self.m];
        for &id in &self.external {
            counts[self.nodes[id].label] += 1;
        }
        Composition::from_counts(counts).expect("non-empty tree")
    }

    /// Number of internal nodes in the subtree rooted at `id`.
    pub fn internal_size(&self, id: usize) -> usize {
        let mut stack = vec![id];
        let mut count = 0;
        while let Some(v) = stack.pop() {
            if let Some((l, r)) = self.nodes[v].children {
                count += 1;
                stack.push(l);
                stack.push(r);
            }
        }
        count
    }

    /// Internal size of the root's left subtree (None while the root is external).
    pub fn left_subtree_size(&self) -> Option<usize> {
        self.nodes[0].children.map(|(l, _)| self.internal_size(l))
    }
}

/// Grows a labelled BST with n internal nodes and returns its external-label counts.
pub fn bst_simulate(m: usize, n: u64, seed: u64) -> Result<Composition> {
    let mut tree = BstTree::new(m, 0)?;
    let mut rng = UrnRng::new(seed);
    for _ in 0..n {
        tree.grow(&mut rng);
    }
    Ok(tree.composition())
}
