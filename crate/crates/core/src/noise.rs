//! Seeded additive noise.
//!
//! Noise is drawn from a ChaCha20 stream seeded with the 64-bit seed, so the
//! same [`NoiseSpec`] yields bit-identical samples on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Name of the generator recorded in output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9), seed_from_u64";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    /// Zero-mean uniform on `[-sigma*sqrt(3), sigma*sqrt(3)]`.
    Uniform,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "uniform" => Ok(NoiseKind::Uniform),
            other => Err(Error::InvalidParameter(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation, for either kind.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Gaussian, sigma, seed }
    }

    pub fn uniform(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Uniform, sigma, seed }
    }

    /// Bound on `|e|` for uniform noise.
    pub fn support(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::Gaussian => None,
            NoiseKind::Uniform => Some(self.sigma * 3f64.sqrt()),
        }
    }
}

/// Draws `len` noise samples.
pub fn sample_noise(len: usize, spec: &NoiseSpec) -> Result<Vec<f64>> {
    if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sigma must be > 0, got {}", spec.sigma)));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let out = match spec.kind {
        NoiseKind::Gaussian => (0..len)
            .map(|_| spec.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        NoiseKind::Uniform => {
            let a = spec.sigma * 3f64.sqrt();
            (0..len).map(|_| rng.random_range(-a..=a)).collect()
        }
    };
    Ok(out)
}

/// `y = x + e`. The result is not clipped to `[0, 1]`.
pub fn add_noise(x: &Image, spec: &NoiseSpec) -> Result<Image> {
    let e = sample_noise(x.len(), spec)?;
    let data = x.data().iter().zip(e).map(|(a, b)| a + b).collect();
    Image::new(x.rows(), x.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_noise() {
        let x = Image::filled(16, 16, 0.5);
        for spec in [NoiseSpec::gaussian(0.1, 7), NoiseSpec::uniform(0.3, 7)] {
            let a = add_noise(&x, &spec).unwrap();
            let b = add_noise(&x, &spec).unwrap();
            assert_eq!(a.data(), b.data());
        }
        let c = add_noise(&x, &NoiseSpec::gaussian(0.1, 8)).unwrap();
        assert_ne!(c.data(), add_noise(&x, &NoiseSpec::gaussian(0.1, 7)).unwrap().data());
    }

    #[test]
    fn gaussian_sample_std() {
        let y = add_noise(&Image::zeros(256, 256), &NoiseSpec::gaussian(0.05, 1)).unwrap();
        let m = y.mean();
        let var = y.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.0485..=0.0515).contains(&std), "std {std}");
    }

    #[test]
    fn uniform_support_and_std() {
        let spec = NoiseSpec::uniform(0.09, 3);
        let e = sample_noise(256 * 256, &spec).unwrap();
        let bound = spec.support().unwrap();
        assert!(e.iter().all(|v| v.abs() <= bound));
        let std = (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        assert!((std - 0.09).abs() < 0.09 * 0.02, "std {std}");
    }

    #[test]
    fn noise_is_not_clipped() {
        let y = add_noise(&Image::filled(32, 32, 1.0), &NoiseSpec::gaussian(0.2, 5)).unwrap();
        assert!(y.min_max().1 > 1.0);
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(sample_noise(4, &NoiseSpec::gaussian(0.0, 1)).is_err());
        assert!(sample_noise(4, &NoiseSpec::uniform(-1.0, 1)).is_err());
    }
}
