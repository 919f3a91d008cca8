use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::tensor::Tensor;

/// Grid on which every sampled path value lies.
const QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;
/// Path values are kept below this magnitude so that sums and differences
/// of grid values stay exactly representable.
const LIMIT: f64 = 4096.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrownianError {
    #[error("interval length must be positive, got {0}")]
    NonPositive(f64),
    #[error("query at t = {t} precedes the path start {start}")]
    BeforeStart { t: f64, start: f64 },
    #[error("path value left the exactly representable range (|W| < {LIMIT})")]
    OutOfRange,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Seeded Wiener process, sampled lazily and refined with Brownian bridges.
///
/// The path is stored as the values `W(t_k)` at every time queried so far.
/// A query at a new time between two known times draws from the bridge
/// conditioned on both neighbours; a query past the last known time extends
/// the path with an independent Gaussian increment. Observed noise is never
/// resampled, so any refinement of an interval reproduces its increment.
///
/// All values are rounded onto a 2^-40 grid. Increments are differences of
/// grid values, hence `dW(a, m) + dW(m, b) == dW(a, b)` holds exactly in
/// floating point, not just up to rounding.
#[derive(Clone, Debug)]
pub struct BrownianPath {
    seed: u64,
    start: f64,
    shape: Vec<usize>,
    rng: ChaCha8Rng,
    points: BTreeMap<Time, Tensor>,
}

fn quantize(x: f64) -> f64 {
    (x / QUANTUM).round() * QUANTUM
}

impl BrownianPath {
    /// Path of tensor-valued increments of the given `shape`, with `W(start) = 0`.
    pub fn new(seed: u64, start: f64, shape: &[usize]) -> Self {
        let mut points = BTreeMap::new();
        points.insert(Time(start), Tensor::zeros(shape));
        BrownianPath {
            seed,
            start,
            shape: shape.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            points,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of distinct times at which the path is known.
    pub fn known_points(&self) -> usize {
        self.points.len()
    }

    /// `W(t + dt) - W(t)`.
    pub fn increment(&mut self, t: f64, dt: f64) -> Result<Tensor, BrownianError> {
        if !(dt > 0.0) {
            return Err(BrownianError::NonPositive(dt));
        }
        self.increment_between(t, t + dt)
    }

    /// `W(b) - W(a)` for `a < b`.
    pub fn increment_between(&mut self, a: f64, b: f64) -> Result<Tensor, BrownianError> {
        if !(b > a) {
            return Err(BrownianError::NonPositive(b - a));
        }
        let wa = self.value_at(a)?;
        let wb = self.value_at(b)?;
        Ok(wb.zip_map(&wa, |x, y| x - y))
    }

    /// `W(s)`, sampling it if `s` has not been observed yet.
    pub fn value_at(&mut self, s: f64) -> Result<Tensor, BrownianError> {
        if s < self.start || !s.is_finite() {
            return Err(BrownianError::BeforeStart { t: s, start: self.start });
        }
        if let Some(w) = self.points.get(&Time(s)) {
            return Ok(w.clone());
        }
        let (tl, wl) = {
            let (k, v) = self
                .points
                .range(..Time(s))
                .next_back()
                .expect("path start precedes every valid query");
            (k.0, v.clone())
        };
        let right = self
            .points
            .range(Time(s)..)
            .next()
            .map(|(k, v)| (k.0, v.clone()));
        let (mean, std) = match &right {
            Some((tr, wr)) => {
                let frac = (s - tl) / (tr - tl);
                let mean = wl.zip_map(wr, |l, r| l + frac * (r - l));
                (mean, ((s - tl) * (tr - s) / (tr - tl)).sqrt())
            }
            None => (wl, (s - tl).sqrt()),
        };
        let mut data = Vec::with_capacity(mean.len());
        for &m in mean.data() {
            let xi: f64 = StandardNormal.sample(&mut self.rng);
            let w = quantize(m + std * xi);
            if w.abs() >= LIMIT {
                return Err(BrownianError::OutOfRange);
            }
            data.push(w);
        }
        let w = Tensor::new(self.shape.clone(), data).expect("shape preserved");
        self.points.insert(Time(s), w.clone());
        Ok(w)
    }
}
