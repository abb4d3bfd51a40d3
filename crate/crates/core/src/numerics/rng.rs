//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the root seed, with the
//! 64-bit ChaCha stream id selecting an independent keystream. Stream ids are
//! derived hierarchically (`SeedStream::child`) with a SplitMix64 finalizer so
//! that, e.g., client 17 in round 3 always draws from the same stream
//! regardless of how clients are scheduled.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Subsystem labels split off the root seed.
pub mod subsystem {
    pub const DATA: u64 = 1;
    pub const CLIENTS: u64 = 2;
    pub const DIFFUSION: u64 = 3;
    pub const ATTACK: u64 = 4;
    pub const INIT: u64 = 5;
    pub const GENERATION: u64 = 6;
    pub const EVAL: u64 = 7;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of labels into a single stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A position in the seed tree: root seed plus a derived stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
    path: u64,
}

impl SeedStream {
    pub fn root(seed: u64) -> Self {
        SeedStream { seed, path: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(self, label: u64) -> Self {
        SeedStream {
            seed: self.seed,
            path: stream_id(&[self.path, label]),
        }
    }

    pub fn rng(self) -> Rng {
        Rng::new(self.seed, self.path)
    }
}

/// Seeded generator with explicit stream selection.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Laplace(0, scale) by inverse CDF. `scale` must be positive.
    pub fn laplace(&mut self, scale: f64) -> f64 {
        // u in (-1/2, 1/2]; the open end avoids ln(0)
        let u = 0.5 - self.uniform();
        -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Chooses `k` distinct elements of `pool` uniformly (partial Fisher-Yates).
    pub fn choose_distinct<T: Copy>(&mut self, pool: &[T], k: usize) -> Vec<T> {
        assert!(k <= pool.len());
        let mut scratch = pool.to_vec();
        for i in 0..k {
            let j = i + self.below(scratch.len() - i);
            scratch.swap(i, j);
        }
        scratch.truncate(k);
        scratch
    }
}

/// Matrix of i.i.d. standard normals.
pub fn sample_gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gaussian())
}

/// Matrix of i.i.d. Laplace(0, scale) draws.
pub fn sample_laplace(rng: &mut Rng, scale: f64, rows: usize, cols: usize) -> Result<Matrix> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!(
            "Laplace scale must be positive, got {scale}"
        )));
    }
    Ok(Matrix::from_fn(rows, cols, |_, _| rng.laplace(scale)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = sample_gaussian(&mut Rng::new(7, 0), 4, 5);
        let b = sample_gaussian(&mut Rng::new(7, 0), 4, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_moments() {
        let m = sample_gaussian(&mut Rng::new(7, 0), 1, 100_000);
        let (mean, var) = moments(m.as_slice());
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn streams_are_uncorrelated() {
        let root = SeedStream::root(7);
        let a = sample_gaussian(&mut root.child(1).rng(), 1, 100_000);
        let b = sample_gaussian(&mut root.child(2).rng(), 1, 100_000);
        let (ma, va) = moments(a.as_slice());
        let (mb, vb) = moments(b.as_slice());
        let cov = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / 100_000.0;
        let r = cov / (va * vb).sqrt();
        assert!(r.abs() < 0.02, "correlation {r}");
        assert_ne!(a, b);
    }

    #[test]
    fn laplace_variance_and_mean() {
        let m = sample_laplace(&mut Rng::new(3, 9), 2.0, 1, 100_000).unwrap();
        let (_, var) = moments(m.as_slice());
        assert!((var - 8.0).abs() / 8.0 < 0.05, "var {var}");
        let m = sample_laplace(&mut Rng::new(4, 9), 1.0, 1, 100_000).unwrap();
        let (mean, _) = moments(m.as_slice());
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn laplace_is_reproducible() {
        let a = sample_laplace(&mut Rng::new(3, 1), 1.5, 3, 3).unwrap();
        let b = sample_laplace(&mut Rng::new(3, 1), 1.5, 3, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn laplace_rejects_nonpositive_scale() {
        assert!(sample_laplace(&mut Rng::new(0, 0), 0.0, 1, 1).is_err());
        assert!(sample_laplace(&mut Rng::new(0, 0), -1.0, 1, 1).is_err());
    }

    #[test]
    fn choose_distinct_is_uniform() {
        let pool: Vec<usize> = (0..10).collect();
        let mut rng = Rng::new(1, 1);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws {
            counts[rng.choose_distinct(&pool, 1)[0]] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.1).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn child_streams_depend_on_path() {
        let root = SeedStream::root(1);
        assert_ne!(root.child(1), root.child(2));
        assert_ne!(root.child(1).child(2), root.child(2).child(1));
        assert_eq!(root.child(3).child(4), root.child(3).child(4));
    }
}
