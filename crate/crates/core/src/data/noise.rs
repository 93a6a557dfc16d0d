use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// The generator behind shuffling, noise and initialization: ChaCha with 8
/// rounds, seeded from a `u64`.
pub type NoiseRng = ChaCha8Rng;

pub fn noise_rng(seed: u64) -> NoiseRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `clamp(x + e, 0, 1)` with `e ~ N(0, sigma^2)` drawn independently per
/// pixel from `rng`.
pub fn inject_noise_with<T: Real>(x: &Tensor<T>, sigma: f64, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    Ok(x.map_with(|v| {
        let e: f64 = normal.sample(rng);
        (v + T::lit(e)).max(T::zero()).min(T::one())
    }))
}

/// Seeded form of [`inject_noise_with`].
pub fn inject_noise<T: Real>(x: &Tensor<T>, sigma: f64, seed: u64) -> Result<Tensor<T>> {
    inject_noise_with(x, sigma, &mut noise_rng(seed))
}
