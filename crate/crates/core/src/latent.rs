//! Latent codes, truncated sampling and the small amount of vector algebra
//! the rest of the crate is built on.
//!
//! Normal variates come from Box–Muller over a ChaCha20 keystream. The
//! keystream is counter based and platform independent, so a `(seed, stream)`
//! pair always yields the same sequence of draws.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default latent dimensionality.
pub const DEFAULT_DIM: usize = 16;

/// Default truncation factor.
pub const DEFAULT_PSI: f64 = 0.5;

/// Norms below this are treated as zero by [`LatentCode::normalize`].
pub const DEGENERATE_NORM: f64 = 1e-12;

/// A point in the generator's latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("latent code"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(LatentCode(values))
    }

    pub fn zeros(dim: usize) -> Self {
        LatentCode(vec![0.0; dim])
    }

    /// Unit vector along `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        LatentCode(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &LatentCode) -> Result<f64> {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit vector in the same direction.
    pub fn normalize(&self) -> Result<LatentCode> {
        normalize(&self.0).map(LatentCode)
    }

    /// `self + alpha * direction`.
    pub fn add_scaled(&self, direction: &LatentCode, alpha: f64) -> Result<LatentCode> {
        check_len(self.dim(), direction.dim())?;
        Ok(LatentCode(
            self.0
                .iter()
                .zip(&direction.0)
                .map(|(a, d)| a + alpha * d)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &LatentCode) -> Result<LatentCode> {
        self.add_scaled(other, -1.0)
    }

    pub fn scale(&self, factor: f64) -> LatentCode {
        LatentCode(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn distance(&self, other: &LatentCode) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    pub fn cosine(&self, other: &LatentCode) -> Result<f64> {
        let d = self.dot(other)?;
        let denom = self.norm() * other.norm();
        if denom < DEGENERATE_NORM {
            return Ok(0.0);
        }
        Ok(d / denom)
    }
}

impl TryFrom<Vec<f64>> for LatentCode {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LatentCode::new(values)
    }
}

impl From<LatentCode> for Vec<f64> {
    fn from(code: LatentCode) -> Self {
        code.0
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateVector {
            norm: n,
            threshold: DEGENERATE_NORM,
        });
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// Seeded source of standard normal variates.
///
/// Each draw pair consumes two 64-bit words of the ChaCha20 keystream for
/// `(seed, stream)`; uniforms use the top 53 bits.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NormalStream { rng, spare: None }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.next_normal()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    seed: u64,
    count: usize,
    psi: f64,
    dim: usize,
}

impl SamplingConfig {
    pub fn new(seed: u64, count: usize, psi: f64, dim: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::InvalidConfig(format!("psi {psi} outside [0, 1]")));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be at least 1".into()));
        }
        Ok(SamplingConfig {
            seed,
            count,
            psi,
            dim,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Draws `count` standard normal codes and scales each toward the origin by
/// `psi` (truncation toward the distribution mean).
pub fn sample_latents(config: &SamplingConfig) -> Vec<LatentCode> {
    let mut stream = NormalStream::new(config.seed, 0);
    (0..config.count)
        .map(|_| {
            let v = stream
                .normal_vec(config.dim)
                .into_iter()
                .map(|x| x * config.psi)
                .collect();
            LatentCode(v)
        })
        .collect()
}

/// Single base latent selected by `seed`.
pub fn latent_for_seed(seed: u64, psi: f64, dim: usize) -> Result<LatentCode> {
    let config = SamplingConfig::new(seed, 1, psi, dim)?;
    Ok(sample_latents(&config).remove(0))
}

/// Random unit vector drawn from `stream`.
pub fn random_unit(stream: &mut NormalStream, dim: usize) -> Vec<f64> {
    loop {
        let v = stream.normal_vec(dim);
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}
