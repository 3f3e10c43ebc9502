//! Synthetic ground truth: i.i.d. Gaussian factors and an fMRI-like variant
//! with smooth temporal profiles.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorTriple;

/// Entry distribution of synthetic factor matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    /// Zero-mean unit-variance real Gaussian.
    Real,
    /// Independent real and imaginary Gaussians, unit total variance.
    #[default]
    Complex,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Self::Real),
            "complex" => Ok(Self::Complex),
            other => Err(Error::InvalidArgument(format!("unknown distribution '{other}' (real|complex)"))),
        }
    }
}

/// Gaussian factors drawn from a ChaCha8 stream seeded with `seed`.
pub fn gaussian_factors(dims: [usize; 3], rank: usize, dist: Distribution, seed: u64) -> Result<FactorTriple> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("dims {dims:?} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(FactorTriple::random(dims, rank, dist == Distribution::Complex, &mut rng))
}

/// Factors shaped like a k-space fMRI series: complex Gaussian k-space and coil
/// factors, and temporal factors that are a baseline plus a slow sinusoid.
///
/// `dims` is `(k-space points, frames, channels)`.
pub fn fmri_like_factors(dims: [usize; 3], rank: usize, seed: u64) -> Result<FactorTriple> {
    let mut f = gaussian_factors(dims, rank, Distribution::Complex, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7453_6c6f_7754_696d);
    let frames = dims[1];
    let mut b = DMatrix::zeros(frames, rank);
    for col in 0..rank {
        let base: f64 = 1.0 + 0.5 * rng.random::<f64>();
        let amp: f64 = 0.1 + 0.2 * rng.random::<f64>();
        let cycles: f64 = 0.5 + 1.5 * rng.random::<f64>();
        let phase: f64 = std::f64::consts::TAU * rng.random::<f64>();
        let drift: f64 = rng.sample(StandardNormal);
        for j in 0..frames {
            let t = j as f64 / frames.max(1) as f64;
            let v = base + amp * (std::f64::consts::TAU * cycles * t + phase).sin() + 0.05 * drift * t;
            b[(j, col)] = Complex64::new(v, 0.0);
        }
    }
    f.b = b;
    Ok(f)
}
