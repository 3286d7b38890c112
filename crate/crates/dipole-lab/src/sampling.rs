//! Deterministic sampling: Halton sequences and seeded pseudo-random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Radical inverse of `index` in the given prime base (van der Corput).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut acc = 0.0;
    while index > 0 {
        acc += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    acc
}

/// The `index`-th point of the Halton sequence in [0,1)^D using the first D primes.
pub fn halton<const D: usize>(index: u64) -> [f64; D] {
    const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    let mut out = [0.0; D];
    for (k, o) in out.iter_mut().enumerate() {
        *o = radical_inverse(index + 1, PRIMES[k]);
    }
    out
}

/// Seeded pseudo-random generator; identical seeds give identical streams on every platform.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of the solid ball of radius R about (0, c) expressed on the meridian:
/// maps a point of [0,1)² to (r, x₃) with the volume measure (θ integrated out).
pub fn ball_meridian_sample(u: [f64; 2], center_x3: f64, radius: f64) -> (f64, f64) {
    let rho = radius * u[0].cbrt();
    let cos_phi = 1.0 - 2.0 * u[1];
    let sin_phi = (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
    (rho * sin_phi, center_x3 + rho * cos_phi)
}

/// Uniform sample of the spherical shell R₀ < |x − c| < R₁ on the meridian.
pub fn shell_meridian_sample(u: [f64; 2], center_x3: f64, r0: f64, r1: f64) -> (f64, f64) {
    let rho = (r0.powi(3) + u[0] * (r1.powi(3) - r0.powi(3))).cbrt();
    let cos_phi = 1.0 - 2.0 * u[1];
    let sin_phi = (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
    (rho * sin_phi, center_x3 + rho * cos_phi)
}
