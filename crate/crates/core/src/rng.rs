//! SplitMix64 generator with Box–Muller normal deviates.
//!
//! Every quantity that influences the output sequence lives in [`RngState`],
//! so a state serialized into a restart file reproduces the remaining stream
//! exactly. Normal deviates use the closed-form Box–Muller transform, never a
//! rejection loop, so the number of uniforms consumed per deviate is fixed.

use std::f64::consts::TAU;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RngState {
    pub state: u64,
    pub stream_id: u64,
    /// Second deviate of the last Box–Muller pair, returned by the next call.
    pub gauss_cache: Option<f64>,
}

impl RngState {
    /// Seeds a stream. The starting state is one SplitMix64 step taken from
    /// `seed ^ (stream_id * GOLDEN_GAMMA)`, which scatters neighbouring
    /// streams across the period instead of leaving them one step apart.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let base = seed ^ stream_id.wrapping_mul(GOLDEN_GAMMA);
        RngState {
            state: mix64(base.wrapping_add(GOLDEN_GAMMA)),
            stream_id,
            gauss_cache: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform deviate on [0, 1) built from the top 53 bits of one output.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate. Two uniforms are consumed on every other call.
    pub fn gauss(&mut self) -> f64 {
        if let Some(z) = self.gauss_cache.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        // 1 - u1 lies in (0, 1], so the logarithm is finite.
        let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = TAU * u2;
        self.gauss_cache = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn fill_gauss(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.gauss();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference SplitMix64 written out longhand.
    fn reference_stream(seed: u64, stream: u64, n: usize) -> Vec<u64> {
        let mut x = seed ^ stream.wrapping_mul(0x9E3779B97F4A7C15);
        x = x.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        let mut s = z ^ (z >> 31);
        (0..n)
            .map(|_| {
                s = s.wrapping_add(0x9E3779B97F4A7C15);
                let mut z = s;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
                z ^ (z >> 31)
            })
            .collect()
    }

    #[test]
    fn matches_longhand_splitmix() {
        let mut rng = RngState::new(7, 3);
        let expected = reference_stream(7, 3, 64);
        let got: Vec<u64> = (0..64).map(|_| rng.next_u64()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn same_inputs_same_state() {
        assert_eq!(RngState::new(0, 0), RngState::new(0, 0));
    }

    #[test]
    fn streams_differ() {
        let a = reference_stream(7, 0, 1)[0];
        let b = reference_stream(7, 1, 1)[0];
        assert_ne!(a, b);
        let ua = RngState::new(7, 0).uniform();
        let ub = RngState::new(7, 1).uniform();
        assert_ne!(ua, ub);
    }

    #[test]
    fn copy_resumes_identically() {
        let mut rng = RngState::new(42, 9);
        for _ in 0..17 {
            rng.gauss();
        }
        let mut copy = rng;
        for _ in 0..1000 {
            assert_eq!(rng.gauss().to_bits(), copy.gauss().to_bits());
        }
    }

    #[test]
    fn uniform_moments() {
        let mut rng = RngState::new(1, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn uniform_never_reaches_one() {
        let mut rng = RngState {
            state: u64::MAX.wrapping_sub(GOLDEN_GAMMA),
            stream_id: 0,
            gauss_cache: None,
        };
        // Whatever the output, 53-bit scaling keeps it below 1.
        let u = rng.uniform();
        assert!(u < 1.0);
        let top = (u64::MAX >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        assert!(top < 1.0);
    }

    #[test]
    fn gauss_variance() {
        let mut rng = RngState::new(5, 2);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.gauss();
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn cached_call_consumes_no_uniforms() {
        let mut rng = RngState::new(3, 0);
        rng.gauss();
        assert!(rng.gauss_cache.is_some());
        let before = rng.state;
        rng.gauss();
        assert_eq!(rng.state, before);
        assert!(rng.gauss_cache.is_none());
    }
}
