//! The cyclic urn Markov chain.
//!
//! An urn holds balls of types `0..m`. Each step draws a ball uniformly at
//! random, returns it, and adds one ball of the next type modulo `m`.

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::rng::{bounded_u64, UrnRng};

/// Number of types and the type of the single initial ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrnParams {
    m: usize,
    initial_type: usize,
}

impl UrnParams {
    pub fn new(m: usize, initial_type: usize) -> Result<Self> {
        if m < 2 {
            return param_err(format!("number of types must be at least 2, got {m}"));
        }
        if initial_type >= m {
            return param_err(format!("initial type {initial_type} out of range 0..{m}"));
        }
        Ok(UrnParams { m, initial_type })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn initial_type(&self) -> usize {
        self.initial_type
    }
}

/// Ball counts per type after `n` draws. Always sums to `n + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Composition {
    counts: Vec<u64>,
    n: u64,
}

impl Composition {
    /// Builds a composition from raw counts; `n` is inferred from the total.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return param_err("a composition needs at least 2 types");
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return param_err("a composition holds at least one ball");
        }
        Ok(Composition { counts, n: total - 1 })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.n + 1
    }

    /// Counts as reals, for the linear-algebra side of the crate.
    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// The state after drawing a ball of type `drawn`.
    pub fn after_draw(&self, drawn: usize) -> Composition {
        let mut next = self.clone();
        next.apply_draw(drawn);
        next
    }

    fn apply_draw(&mut self, drawn: usize) {
        let m = self.counts.len();
        self.counts[(drawn + 1) % m] += 1;
        self.n += 1;
    }

    /// Type selected by a uniform ball index `ball` in `0..=n`.
    fn type_of_ball(&self, mut ball: u64) -> usize {
        for (i, &c) in self.counts.iter().enumerate() {
            if ball < c {
                return i;
            }
            ball -= c;
        }
        unreachable!("ball index exceeds total count")
    }
}

/// Initial state: one ball of the initial type.
pub fn new_urn(params: &UrnParams) -> Composition {
    let mut counts = vec![0; params.m];
    counts[params.initial_type] = 1;
    Composition { counts, n: 0 }
}

/// One draw; returns the new state.
pub fn step<R: RngCore + ?Sized>(state: &Composition, rng: &mut R) -> Composition {
    step_with_draw(state, rng).0
}

/// One draw; returns the new state together with the type that was drawn.
pub fn step_with_draw<R: RngCore + ?Sized>(state: &Composition, rng: &mut R) -> (Composition, usize) {
    let ball = bounded_u64(rng, state.total());
    let drawn = state.type_of_ball(ball);
    (state.after_draw(drawn), drawn)
}

/// The 0/1 replacement matrix: entry (i, j) is 1 iff j = i + 1 mod m.
pub fn replacement_matrix(m: usize) -> Result<Vec<Vec<u8>>> {
    if m < 2 {
        return param_err(format!("number of types must be at least 2, got {m}"));
    }
    Ok((0..m)
        .map(|i| (0..m).map(|j| u8::from(j == (i + 1) % m)).collect())
        .collect())
}

/// Expected next state given the current one: `(Id + R^t / (n + 1)) counts`.
pub fn conditional_mean(state: &Composition) -> Vec<f64> {
    let m = state.m();
    let denom = state.total() as f64;
    (0..m)
        .map(|i| {
            let prev = (i + m - 1) % m;
            state.counts[i] as f64 + state.counts[prev] as f64 / denom
        })
        .collect()
}

/// Ball types in insertion order. One byte per ball while the types fit.
#[derive(Debug, Clone)]
enum Balls {
    Narrow(Vec<u8>),
    Wide(Vec<u32>),
}

/// Streaming simulation of one urn path.
///
/// The urn is kept as the list of ball types in the order the balls were
/// added; a step picks a uniform index into that list. Memory is one byte
/// per step for m <= 256 and four bytes otherwise. Iterating yields the
/// states for n = 0, 1, ..., n_max in order. The hot path
/// [`Trajectory::advance_to`] moves the urn forward without materialising
/// intermediate states.
#[derive(Debug, Clone)]
pub struct Trajectory {
    params: UrnParams,
    seed: u64,
    n_max: u64,
    rng: UrnRng,
    counts: Vec<u64>,
    balls: Balls,
    n: u64,
    started: bool,
    last_draw: Option<usize>,
}

trait BallType: Copy {
    fn index(self) -> usize;
    fn from_index(i: usize) -> Self;
}

impl BallType for u8 {
    #[inline]
    fn index(self) -> usize {
        self as usize
    }
    #[inline]
    fn from_index(i: usize) -> Self {
        i as u8
    }
}

impl BallType for u32 {
    #[inline]
    fn index(self) -> usize {
        self as usize
    }
    #[inline]
    fn from_index(i: usize) -> Self {
        i as u32
    }
}

/// Steps from `n` to `end > n`; returns `(end, last drawn type)`.
#[inline]
fn run_balls<T: BallType>(balls: &mut Vec<T>, rng: &mut UrnRng, counts: &mut [u64], n: u64, end: u64) -> (u64, usize) {
    let m = counts.len();
    balls.reserve((end - n) as usize);
    let mut drawn = 0;
    for s in n..end {
        drawn = balls[rng.below(s + 1) as usize].index();
        let added = if drawn + 1 == m { 0 } else { drawn + 1 };
        balls.push(T::from_index(added));
        counts[added] += 1;
    }
    (end, drawn)
}

/// Starts a seeded trajectory. The path is a deterministic function of
/// `(params, seed)`; `n_max` only bounds iteration.
pub fn simulate(params: &UrnParams, n_max: u64, seed: u64) -> Trajectory {
    Trajectory::with_rng(params, n_max, seed, UrnRng::new(seed))
}

impl Trajectory {
    pub(crate) fn with_rng(params: &UrnParams, n_max: u64, seed: u64, rng: UrnRng) -> Self {
        let start = new_urn(params);
        // capacity is a hint only; paths may run past n_max
        let cap = (n_max.saturating_add(1)).min(1 << 26) as usize;
        let balls = if params.m <= 256 {
            let mut v = Vec::with_capacity(cap);
            v.push(params.initial_type as u8);
            Balls::Narrow(v)
        } else {
            let mut v = Vec::with_capacity(cap);
            v.push(params.initial_type as u32);
            Balls::Wide(v)
        };
        Trajectory {
            params: *params,
            seed,
            n_max,
            rng,
            counts: start.counts,
            balls,
            n: 0,
            started: false,
            last_draw: None,
        }
    }

    pub fn params(&self) -> &UrnParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    /// Current step index.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Type drawn in the most recent step.
    pub fn last_draw(&self) -> Option<usize> {
        self.last_draw
    }

    pub fn state(&self) -> Composition {
        Composition {
            counts: self.counts.clone(),
            n: self.n,
        }
    }

    #[inline]
    fn draw_once(&mut self) -> usize {
        let (n, drawn) = match &mut self.balls {
            Balls::Narrow(v) => run_balls(v, &mut self.rng, &mut self.counts, self.n, self.n + 1),
            Balls::Wide(v) => run_balls(v, &mut self.rng, &mut self.counts, self.n, self.n + 1),
        };
        self.n = n;
        drawn
    }

    /// Single step, returning the drawn type.
    pub fn step(&mut self) -> usize {
        let d = self.draw_once();
        self.last_draw = Some(d);
        self.started = true;
        d
    }

    /// Runs forward until step `n` (no-op if already there or beyond).
    pub fn advance_to(&mut self, n: u64) {
        if self.n < n {
            let (end, drawn) = match &mut self.balls {
                Balls::Narrow(v) => run_balls(v, &mut self.rng, &mut self.counts, self.n, n),
                Balls::Wide(v) => run_balls(v, &mut self.rng, &mut self.counts, self.n, n),
            };
            self.n = end;
            self.last_draw = Some(drawn);
        }
        self.started = true;
    }

    /// Runs to `n_max` and returns the final state.
    pub fn run_to_end(mut self) -> Composition {
        let end = self.n_max;
        self.advance_to(end);
        self.state()
    }

    /// Materialises every remaining state up to `n_max`.
    pub fn collect_states(self) -> Vec<Composition> {
        self.collect()
    }
}

impl Iterator for Trajectory {
    type Item = Composition;

    fn next(&mut self) -> Option<Composition> {
        if !self.started {
            self.started = true;
            return Some(self.state());
        }
        if self.n >= self.n_max {
            return None;
        }
        let d = self.draw_once();
        self.last_draw = Some(d);
        Some(self.state())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_states() {
        let c = new_urn(&UrnParams::new(7, 0).unwrap());
        assert_eq!(c.counts(), &[1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(c.n(), 0);
        let c = new_urn(&UrnParams::new(3, 2).unwrap());
        assert_eq!(c.counts(), &[0, 0, 1]);
        assert!(UrnParams::new(1, 0).is_err());
        assert!(UrnParams::new(3, 3).is_err());
    }

    #[test]
    fn first_step_is_deterministic() {
        let mut rng = UrnRng::new(5);
        let s = new_urn(&UrnParams::new(2, 0).unwrap());
        let next = step(&s, &mut rng);
        assert_eq!(next.counts(), &[1, 1]);
        assert_eq!(next.n(), 1);
        for seed in 0..20 {
            let last = simulate(&UrnParams::new(7, 0).unwrap(), 1, seed).run_to_end();
            assert_eq!(last.counts(), &[1, 1, 0, 0, 0, 0, 0]);
        }
    }

    #[test]
    fn two_outcome_step_frequencies() {
        // m = 3, counts (1,1,0): each draw has probability 1/2.
        let s = Composition::from_counts(vec![1, 1, 0]).unwrap();
        let mut rng = UrnRng::new(11);
        let reps = 100_000;
        let mut hits = 0u64;
        for _ in 0..reps {
            let next = step(&s, &mut rng);
            if next.counts() == [1, 2, 0] {
                hits += 1;
            } else {
                assert_eq!(next.counts(), &[1, 1, 1]);
            }
        }
        let sd = (reps as f64 * 0.25).sqrt();
        assert!((hits as f64 - reps as f64 / 2.0).abs() < 4.0 * sd);
    }

    #[test]
    fn seven_type_second_step() {
        let s = Composition::from_counts(vec![1, 1, 0, 0, 0, 0, 0]).unwrap();
        let mut rng = UrnRng::new(3);
        for _ in 0..200 {
            let next = step(&s, &mut rng);
            assert!(
                next.counts() == [1, 2, 0, 0, 0, 0, 0] || next.counts() == [1, 1, 1, 0, 0, 0, 0],
                "{:?}",
                next.counts()
            );
        }
    }

    #[test]
    fn one_step_law_matches_counts() {
        let s = Composition::from_counts(vec![3, 0, 5, 2]).unwrap();
        let mut rng = UrnRng::new(17);
        let reps = 100_000u64;
        let mut hist = [0u64; 4];
        for _ in 0..reps {
            let (_, d) = step_with_draw(&s, &mut rng);
            hist[d] += 1;
        }
        for (i, &h) in hist.iter().enumerate() {
            let p = s.counts()[i] as f64 / 10.0;
            let tol = 4.0 * (p * (1.0 - p) / reps as f64).sqrt();
            assert!((h as f64 / reps as f64 - p).abs() <= tol + 1e-15, "type {i}");
        }
    }

    #[test]
    fn replacement_matrix_pattern() {
        assert_eq!(replacement_matrix(2).unwrap(), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(
            replacement_matrix(3).unwrap(),
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]]
        );
        for m in 2..12 {
            for row in replacement_matrix(m).unwrap() {
                assert_eq!(row.iter().map(|&x| x as u32).sum::<u32>(), 1);
            }
        }
        assert!(replacement_matrix(1).is_err());
    }

    #[test]
    fn conditional_mean_examples() {
        let s = Composition::from_counts(vec![1, 0]).unwrap();
        assert_eq!(conditional_mean(&s), vec![1.0, 1.0]);
        let s = Composition::from_counts(vec![1, 1, 0]).unwrap();
        assert_eq!(conditional_mean(&s), vec![1.0, 1.5, 0.5]);
        let s = Composition::from_counts(vec![4, 1, 0, 2, 7]).unwrap();
        let total: f64 = conditional_mean(&s).iter().sum();
        assert!((total - (s.n() + 2) as f64).abs() < 1e-12);
    }

    #[test]
    fn conditional_mean_is_average_over_draws() {
        let s = Composition::from_counts(vec![2, 3, 0, 1, 4]).unwrap();
        let total = s.total() as f64;
        let mut avg = [0.0; 5];
        for i in 0..5 {
            let next = s.after_draw(i);
            for (a, &c) in avg.iter_mut().zip(next.counts()) {
                *a += s.counts()[i] as f64 / total * c as f64;
            }
        }
        for (a, b) in avg.iter().zip(conditional_mean(&s)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_iterates_consistent_states() {
        let params = UrnParams::new(5, 1).unwrap();
        let states = simulate(&params, 200, 42).collect_states();
        assert_eq!(states.len(), 201);
        assert_eq!(states[0].counts(), &[0, 1, 0, 0, 0]);
        for w in states.windows(2) {
            let diff: Vec<i64> = w[1]
                .counts()
                .iter()
                .zip(w[0].counts())
                .map(|(&a, &b)| a as i64 - b as i64)
                .collect();
            assert_eq!(diff.iter().filter(|&&d| d == 1).count(), 1);
            assert!(diff.iter().all(|&d| d == 0 || d == 1));
            // the new ball follows a drawn type that was present
            let added = diff.iter().position(|&d| d == 1).unwrap();
            assert!(w[0].counts()[(added + 4) % 5] >= 1);
            assert_eq!(w[1].total(), w[1].n() + 1);
        }
    }

    #[test]
    fn streaming_matches_iteration() {
        let params = UrnParams::new(7, 0).unwrap();
        let last_iter = simulate(&params, 5000, 9).last().unwrap();
        let last_fast = simulate(&params, 5000, 9).run_to_end();
        assert_eq!(last_iter, last_fast);
        let a = simulate(&params, 5000, 9).run_to_end();
        assert_eq!(a, last_fast);
        assert_eq!(simulate(&params, 0, 4).collect_states().len(), 1);
    }

    #[test]
    fn three_type_law_at_two_steps() {
        let params = UrnParams::new(3, 0).unwrap();
        let reps = 100_000u64;
        let mut hits = 0u64;
        for seed in 0..reps {
            let c = simulate(&params, 2, crate::rng::stream_seed(1, seed)).run_to_end();
            if c.counts() == [1, 2, 0] {
                hits += 1;
            } else {
                assert_eq!(c.counts(), &[1, 1, 1]);
            }
        }
        let sd = (0.25 / reps as f64).sqrt();
        assert!((hits as f64 / reps as f64 - 0.5).abs() < 3.0 * sd);
    }
}
