//! Deterministic random number generation.
//!
//! Everything stochastic in this crate draws from [`SplitMix64`], a seedable
//! counter-based generator: the state advances by a fixed Weyl increment and
//! the output is a bijective finalizer of the counter. The full algorithm is
//! spelled out here so any platform (or another language) can reproduce the
//! streams bit-exactly:
//!
//! ```text
//! state  = state + 0x9E3779B97F4A7C15            (wrapping)
//! z      = state
//! z      = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z      = (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! output = z ^ (z >> 31)
//! ```
//!
//! Floating-point draws take the top bits of the 64-bit output, so they are
//! identical on every IEEE-754 platform. Gaussian draws use Box-Muller with
//! no cached second value; each call consumes exactly two 64-bit outputs.

/// Counter-based 64-bit PRNG (SplitMix64).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const WEYL: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(WEYL);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Independent child stream seeded from this one.
    pub fn fork(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }

    /// Uniform in [0, 1) with 24 bits of mantissa (exact in f32).
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (-1/2, 1/2), the quantization noise proxy.
    pub fn uniform_noise(&mut self) -> f32 {
        self.next_f32() - 0.5
    }

    /// Unbiased integer in [0, n) by rejection sampling.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Standard normal via Box-Muller; consumes two 64-bit draws per call.
    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unit-variance Laplace via inverse CDF (scale 1/sqrt(2)).
    pub fn laplace_unit(&mut self) -> f64 {
        let u = self.next_f64() - 0.5;
        let b = std::f64::consts::FRAC_1_SQRT_2;
        -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }

    /// Unit-variance Student-t with four degrees of freedom.
    ///
    /// t = Z / sqrt(chi2_4 / 4) with chi2_4 = 2(e1 + e2), e_i ~ Exp(1); the
    /// raw variate has variance nu/(nu-2) = 2, and the normalization folds
    /// into Z / sqrt(-ln(u1*u2)).
    pub fn student_t4_unit(&mut self) -> f64 {
        let z = self.standard_normal();
        let u1 = 1.0 - self.next_f64();
        let u2 = 1.0 - self.next_f64();
        z / (-(u1 * u2).ln()).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_across_instances() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn noise_support_and_mean() {
        let mut rng = SplitMix64::new(7);
        let mut sum = 0.0f64;
        let n = 1_000_000;
        for _ in 0..n {
            let u = rng.uniform_noise();
            assert!(u > -0.5 && u < 0.5);
            sum += u as f64;
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.002, "noise mean {mean}");
    }

    #[test]
    fn below_is_unbiased_enough() {
        let mut rng = SplitMix64::new(3);
        let mut counts = [0u32; 4];
        for _ in 0..100_000 {
            counts[rng.below(4) as usize] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / 100_000.0 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = SplitMix64::new(11);
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.standard_normal();
            s1 += z;
            s2 += z * z;
        }
        assert!((s1 / n as f64).abs() < 0.01);
        assert!((s2 / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn heavy_tail_variates_are_unit_variance() {
        let mut rng = SplitMix64::new(5);
        let n = 400_000;
        for sampler in [
            SplitMix64::laplace_unit as fn(&mut SplitMix64) -> f64,
            SplitMix64::student_t4_unit,
        ] {
            let mut s2 = 0.0;
            for _ in 0..n {
                let x = sampler(&mut rng);
                s2 += x * x;
            }
            let var = s2 / n as f64;
            // Student-t(4) second moment converges slowly; loose band.
            assert!((var - 1.0).abs() < 0.08, "variance {var}");
        }
    }
}
