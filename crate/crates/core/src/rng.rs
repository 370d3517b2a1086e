//! Keyed uniform field `U(x, n)` and the auxiliary random streams.
//!
//! `U(x, n)` is read from a ChaCha8 keystream: the key is expanded from the
//! seed, the stream id is the time index `n`, and site `x` owns keystream
//! words `2x` and `2x + 1`. Any access order therefore yields the same value.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};

pub const GENERATOR_FAMILY: &str = "ChaCha8 keystream (rand_chacha)";
pub const GENERATOR_VERSION: &str = "rand_chacha 0.9";
pub const KEY_LAYOUT_VERSION: &str = "barw-field-v1: key=splitmix64x4(seed) stream=n words=2x,2x+1";

const SCALE: f64 = 1.0 / (1u64 << 53) as f64;

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of tags into a new seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = base;
    let mut out = splitmix64(&mut s);
    for &t in tags {
        s ^= t.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        out = splitmix64(&mut s) ^ out.rotate_left(17);
    }
    out
}

fn expand_key(seed: u64) -> [u8; 32] {
    let mut s = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    key
}

/// Maps 64 random bits to the midpoint of one of `2^53` equal cells of
/// `[0, 1)`, so the value is never 0 or 1.
#[inline]
fn to_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * SCALE
}

#[derive(Clone, Debug)]
pub struct UniformField {
    seed: u64,
    key: [u8; 32],
}

impl UniformField {
    pub fn new(seed: u64) -> Self {
        UniformField { seed, key: expand_key(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, n: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(n);
        rng
    }

    pub fn uniform_at(&self, n: u64, site: usize) -> f64 {
        let mut rng = self.stream(n);
        rng.set_word_pos(2 * site as u128);
        to_unit(rng.next_u64())
    }

    /// Fills `out[x] = U(x, n)` for `x = 0..out.len()`.
    pub fn fill_row(&self, n: u64, out: &mut [f64]) {
        let mut rng = self.stream(n);
        for v in out.iter_mut() {
            *v = to_unit(rng.next_u64());
        }
    }

    /// Lazily materialized row for time `n`.
    pub fn row(&self, n: u64, len: usize) -> FieldRow<'_> {
        FieldRow { field: self, n, len, cache: None }
    }
}

/// Source of the uniforms used by one update step.
pub trait SiteUniforms {
    fn uniform(&mut self, site: usize) -> f64;

    /// Hint that roughly `count` distinct sites will be queried.
    fn expect(&mut self, _count: usize) {}
}

pub struct FieldRow<'a> {
    field: &'a UniformField,
    n: u64,
    len: usize,
    cache: Option<Vec<f64>>,
}

impl SiteUniforms for FieldRow<'_> {
    fn uniform(&mut self, site: usize) -> f64 {
        match &self.cache {
            Some(row) => row[site],
            None => self.field.uniform_at(self.n, site),
        }
    }

    fn expect(&mut self, count: usize) {
        // Random access re-keys the stream per site; a full row is cheaper
        // once more than a few percent of the sites are needed.
        if self.cache.is_none() && count * 16 >= self.len {
            let mut row = vec![0.0; self.len];
            self.field.fill_row(self.n, &mut row);
            self.cache = Some(row);
        }
    }
}

impl SiteUniforms for &[f64] {
    fn uniform(&mut self, site: usize) -> f64 {
        self[site]
    }
}

/// Independent generator for initial conditions, offspring counts and
/// displacements, identified by `(seed, stream id)`.
#[derive(Clone, Debug)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(expand_key(derive_seed(seed, &[0x5354_5245_414d])));
        rng.set_stream(stream);
        StreamRng(rng)
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Poisson variate: multiplication of uniforms for small means, the
/// `rand_distr` sampler above 10.
pub fn poisson_sample<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::invalid(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    if mean <= 10.0 {
        let limit = (-mean).exp();
        let mut k = 0u64;
        let mut p = rng.random::<f64>();
        while p > limit {
            k += 1;
            p *= rng.random::<f64>();
        }
        return Ok(k);
    }
    let dist = rand_distr::Poisson::new(mean).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_row() {
        let f = UniformField::new(42);
        let mut row = vec![0.0; 257];
        for n in [0u64, 1, 17, 1 << 40] {
            f.fill_row(n, &mut row);
            for x in [0usize, 1, 2, 63, 64, 127, 128, 256] {
                assert_eq!(row[x], f.uniform_at(n, x));
            }
        }
    }

    #[test]
    fn values_in_open_unit_interval_and_streams_differ() {
        let f = UniformField::new(7);
        let mut a = vec![0.0; 1000];
        let mut b = vec![0.0; 1000];
        f.fill_row(3, &mut a);
        f.fill_row(4, &mut b);
        assert!(a.iter().all(|&u| u > 0.0 && u < 1.0));
        assert_ne!(a, b);
        let g = UniformField::new(8);
        assert_ne!(f.uniform_at(3, 5), g.uniform_at(3, 5));
    }

    #[test]
    fn lazy_row_agrees_either_way() {
        let f = UniformField::new(11);
        let mut sparse = f.row(5, 1000);
        let mut dense = f.row(5, 1000);
        dense.expect(1000);
        for x in [0, 10, 999] {
            assert_eq!(sparse.uniform(x), dense.uniform(x));
        }
    }

    #[test]
    fn poisson_rejects_bad_means_and_handles_zero() {
        let mut rng = StreamRng::new(1, 2);
        assert!(poisson_sample(-1.0, &mut rng).is_err());
        assert!(poisson_sample(f64::NAN, &mut rng).is_err());
        assert_eq!(poisson_sample(0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn poisson_mean_and_variance() {
        let mut rng = StreamRng::new(9, 0);
        for mean in [0.5, 3.0, 9.5, 25.0] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| poisson_sample(mean, &mut rng).unwrap() as f64).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            let se = (mean / n as f64).sqrt();
            assert!((m - mean).abs() < 5.0 * se, "mean {m} vs {mean}");
            assert!((v / mean - 1.0).abs() < 0.03, "variance {v} vs {mean}");
        }
    }
}
