use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Samples per independently seeded generation chunk.
pub const CHUNK_LEN: usize = 1 << 16;

/// Discriminant values this far below zero are rounding noise, not indefiniteness.
const DISCRIMINANT_TOL: f64 = -1e-12;

/// Deterministic RNG for `(master seed, stream id)`.
///
/// Stream ids are disjoint ChaCha streams of the same key, so any chunk can be
/// generated independently of the others.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Correlated zero-mean Gaussian pairs from a 2×2 covariance.
///
/// Uses the lower-triangular square root
/// `x = √Σaa·z₁`, `y = (Σab/√Σaa)·z₁ + √(Σbb − Σab²/Σaa)·z₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateSampler {
    l11: f64,
    l21: f64,
    l22: f64,
}

impl BivariateSampler {
    pub fn new(cov: [[f64; 2]; 2]) -> Result<Self> {
        let [[aa, ab], [ba, bb]] = cov;
        if !(aa > 0.0 && aa.is_finite()) {
            return Err(Error::Config(format!("covariance Σaa must be positive, got {aa}")));
        }
        if (ab - ba).abs() > 1e-12 * aa.max(bb).max(1.0) {
            return Err(Error::Config(format!("covariance not symmetric: {ab} vs {ba}")));
        }
        let l11 = aa.sqrt();
        let l21 = ab / l11;
        let mut disc = bb - ab * ab / aa;
        if disc < DISCRIMINANT_TOL * aa.max(bb).max(1.0) {
            return Err(Error::Config(format!(
                "covariance not positive semidefinite (Σbb − Σab²/Σaa = {disc})"
            )));
        }
        if disc < 0.0 {
            disc = 0.0;
        }
        Ok(Self {
            l11,
            l21,
            l22: disc.sqrt(),
        })
    }

    #[inline]
    pub fn transform(&self, z1: f64, z2: f64) -> (f64, f64) {
        (self.l11 * z1, self.l21 * z1 + self.l22 * z2)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        self.transform(z1, z2)
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, xs: &mut [f64], ys: &mut [f64]) {
        assert_eq!(xs.len(), ys.len());
        for (x, y) in xs.iter_mut().zip(ys.iter_mut()) {
            (*x, *y) = self.sample(rng);
        }
    }

    /// Endless stream of pairs for a seed.
    pub fn pairs(self, seed: u64) -> impl Iterator<Item = (f64, f64)> {
        let mut rng = stream_rng(seed, 0);
        std::iter::repeat_with(move || self.sample(&mut rng))
    }
}
