//! Portable pseudo-random numbers.
//!
//! The generator is xorshift64* (Vigna, 2016):
//!
//! ```text
//! x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
//! out = x * 0x2545_F491_4F6C_DD1D   (wrapping)
//! ```
//!
//! seeded by one round of SplitMix64 on the user seed
//! (`z = seed + 0x9E37_79B9_7F4A_7C15; z = (z ^ z>>30) * 0xBF58_476D_1CE4_E5B9;
//! z = (z ^ z>>27) * 0x94D0_49BB_1331_11EB; z ^= z>>31`), with a zero state
//! replaced by the SplitMix increment. Uniform doubles take the top 53 bits;
//! normals use the cosine branch of Box-Muller with `u1` drawn from (0, 1].
//! Every step is specified so another language can reproduce the streams
//! bit for bit.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_MULT: u64 = 0x2545_F491_4F6C_DD1D;

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Self { state: if s == 0 { SPLITMIX_GAMMA } else { s } }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MULT)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. Uses the multiply-shift reduction, so the
    /// (negligible) bias is the same in every implementation.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_stream() {
        // splitmix64(0) is the well-known first SplitMix64 output.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let mut a = XorShift64Star::new(42);
        let mut b = XorShift64Star::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(XorShift64Star::new(1).next_u64(), XorShift64Star::new(2).next_u64());
    }

    #[test]
    fn moments_are_plausible() {
        let mut r = XorShift64Star::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        let u: f64 = (0..n).map(|_| r.uniform()).sum::<f64>() / n as f64;
        assert!((u - 0.5).abs() < 0.005);
        assert!((0..1000).all(|_| r.below(5) < 5));
    }
}
