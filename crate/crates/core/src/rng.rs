//! Counter-based random numbers.
//!
//! Every draw is a pure function of a key tuple, so results never depend on
//! the order in which scanlines, frames or batch elements are evaluated.

/// Stream tags keep independent uses of one seed decorrelated.
pub mod stream {
    pub const SCATTER_PRESENCE: u64 = 0x5C47_7E12;
    pub const SCATTER_AMPLITUDE: u64 = 0xA3D1_0C55;
    pub const NOISE: u64 = 0x0015_E0F1;
    pub const INIT: u64 = 0x1417_0001;
    pub const AUGMENT: u64 = 0xA06E_3E77;
    pub const PATCH: u64 = 0x9A7C_4000;
    pub const BATCH: u64 = 0xBA7C_0042;
    pub const DATASET: u64 = 0xDA7A_5E70;
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an arbitrary key tuple to 64 uniformly mixed bits.
#[inline]
pub fn hash(keys: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C909u64;
    for &k in keys {
        h = splitmix(h ^ splitmix(k));
    }
    h
}

/// Uniform in [0, 1) with 53 bits of resolution.
#[inline]
pub fn uniform(keys: &[u64]) -> f64 {
    (hash(keys) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box-Muller over two derived uniforms.
pub fn normal(keys: &[u64]) -> f64 {
    let h = hash(keys);
    let u1 = ((splitmix(h ^ 1) >> 11) as f64 + 1.0) * (1.0 / ((1u64 << 53) as f64 + 1.0));
    let u2 = (splitmix(h ^ 2) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform integer in [0, n). `n` must be non-zero.
#[inline]
pub fn below(keys: &[u64], n: u64) -> u64 {
    ((hash(keys) as u128 * n as u128) >> 64) as u64
}

/// Stable 64-bit identifier for a string (FNV-1a).
pub fn str_key(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01B3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_in_keys() {
        assert_eq!(hash(&[1, 2, 3]), hash(&[1, 2, 3]));
        assert_ne!(hash(&[1, 2, 3]), hash(&[1, 3, 2]));
    }

    #[test]
    fn uniform_moments() {
        let n = 100_000;
        let mean: f64 = (0..n).map(|i| uniform(&[7, i])).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        assert!((0..n).all(|i| (0.0..1.0).contains(&uniform(&[7, i]))));
    }

    #[test]
    fn normal_moments() {
        let n = 100_000u64;
        let xs: Vec<f64> = (0..n).map(|i| normal(&[11, i])).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
        assert!(xs.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn below_in_range() {
        for i in 0..1000 {
            assert!(below(&[3, i], 7) < 7);
        }
    }
}
