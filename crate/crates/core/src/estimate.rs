//! Monte Carlo result records, replicate RNG streams and deterministic
//! parallel aggregation.
//!
//! Every replicate `i` of an experiment draws from its own ChaCha stream
//! derived from `(master seed, purpose, i)`. Replicates are folded in fixed
//! chunks whose partial results are merged in chunk order, so an aggregate is
//! bit-identical for any number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type SimRng = ChaCha8Rng;

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

const CHUNK: u64 = 256;

/// Point value with standard error and a 95% normal confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub reps: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64, reps: u64) -> Self {
        Estimate {
            value,
            std_error,
            reps,
            ci_low: value - Z95 * std_error,
            ci_high: value + Z95 * std_error,
        }
    }

    /// An exactly known value (zero standard error).
    pub fn exact(value: f64) -> Self {
        Estimate::new(value, 0.0, 0)
    }

    pub fn from_moments(m: &Moments) -> Self {
        Estimate::new(m.mean(), m.std_error(), m.count())
    }

    /// Multiply value, error and interval by a positive constant.
    pub fn scaled(&self, factor: f64) -> Self {
        Estimate::new(self.value * factor, self.std_error * factor.abs(), self.reps)
    }

    /// Difference with another estimate built from an independent stream.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        (self.std_error.powi(2) + other.std_error.powi(2)).sqrt()
    }

    /// `|self - other| <= k * combined SE`, independent streams assumed.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.combined_se(other)
    }

    /// `|self - target| <= k * SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Streaming mean/variance accumulator (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let nf = n as f64;
        self.mean += delta * other.n as f64 / nf;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / nf;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Accumulator that can be folded replicate by replicate and merged.
pub trait Accumulate: Send {
    fn merge(&mut self, other: Self);
}

impl Accumulate for Moments {
    fn merge(&mut self, other: Self) {
        Moments::merge(self, &other)
    }
}

impl Accumulate for Vec<Moments> {
    fn merge(&mut self, other: Self) {
        if self.is_empty() {
            *self = other;
            return;
        }
        assert_eq!(self.len(), other.len(), "accumulator shapes differ");
        for (a, b) in self.iter_mut().zip(other.iter()) {
            a.merge(b);
        }
    }
}

impl<T: Send> Accumulate for Vec<Vec<T>> {
    fn merge(&mut self, other: Self) {
        self.extend(other);
    }
}

/// Derives per-replicate RNG streams from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSource {
    pub master: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSource {
    pub fn new(master: u64) -> Self {
        SeedSource { master }
    }

    /// Independent sub-source, e.g. for the two sides of a paired estimator.
    pub fn child(&self, purpose: u64) -> SeedSource {
        SeedSource {
            master: splitmix64(self.master ^ splitmix64(purpose.wrapping_add(0x5EED))),
        }
    }

    /// RNG for replicate `index`; a pure function of `(master, index)`.
    pub fn stream(&self, index: u64) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.master));
        rng.set_stream(index);
        rng
    }
}

/// Fold `reps` replicates into an accumulator. `init` builds an empty
/// accumulator, `step` adds replicate `i` using its own RNG stream.
///
/// Chunk boundaries are fixed, so the result does not depend on scheduling.
pub fn fold_replicates<A, I, F>(reps: u64, seeds: &SeedSource, init: I, step: F) -> A
where
    A: Accumulate,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64, &mut SimRng) + Sync,
{
    let chunks = reps.div_ceil(CHUNK);
    let partials: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * CHUNK).min(reps);
            for i in c * CHUNK..end {
                let mut rng = seeds.stream(i);
                step(&mut acc, i, &mut rng);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in partials {
        total.merge(p);
    }
    total
}

/// Fallible variant of [`fold_replicates`]; the first error in replicate
/// order is returned.
pub fn try_fold_replicates<A, I, F>(
    reps: u64,
    seeds: &SeedSource,
    init: I,
    step: F,
) -> crate::Result<A>
where
    A: Accumulate,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64, &mut SimRng) -> crate::Result<()> + Sync,
{
    let chunks = reps.div_ceil(CHUNK);
    let partials: Vec<crate::Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * CHUNK).min(reps);
            for i in c * CHUNK..end {
                let mut rng = seeds.stream(i);
                step(&mut acc, i, &mut rng)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for p in partials {
        total.merge(p?);
    }
    Ok(total)
}

/// Per-replicate results in replicate order.
pub fn map_replicates<T, F>(reps: u64, seeds: &SeedSource, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut SimRng) -> crate::Result<T> + Sync,
{
    let nested: Vec<Vec<T>> = try_fold_replicates(reps, seeds, Vec::new, |acc: &mut Vec<Vec<T>>, i, rng| {
        let v = f(i, rng)?;
        match acc.last_mut() {
            Some(last) => last.push(v),
            None => acc.push(vec![v]),
        }
        Ok(())
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Run `f` on a dedicated pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// Spread of a table of positive values: `max / min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        values.into_iter().fold(
            Band {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |b, v| Band {
                min: b.min.min(v),
                max: b.max.max(v),
            },
        )
    }

    /// `max / min`; infinite when the minimum is not positive.
    pub fn ratio(&self) -> f64 {
        if self.min > 0.0 {
            self.max / self.min
        } else {
            f64::INFINITY
        }
    }
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut all = Moments::new();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Moments::new();
        let mut b = Moments::new();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), all.count());
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-9);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = SeedSource::new(42);
        let x: u64 = s.stream(3).random();
        let y: u64 = s.stream(3).random();
        let z: u64 = s.stream(4).random();
        let w: u64 = s.child(1).stream(3).random();
        assert_eq!(x, y);
        assert_ne!(x, z);
        assert_ne!(x, w);
    }

    #[test]
    fn fold_is_independent_of_worker_count() {
        let s = SeedSource::new(7);
        let run = || {
            fold_replicates(5000, &s, Moments::new, |m, _, rng| {
                m.push(rng.random::<f64>());
            })
        };
        let one = with_workers(1, run);
        let four = with_workers(4, run);
        assert_eq!(one.mean().to_bits(), four.mean().to_bits());
        assert_eq!(one.variance().to_bits(), four.variance().to_bits());
    }

    #[test]
    fn compensated_sum_handles_cancellation() {
        let s: KahanSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }
}
