//! Deterministic splitmix64 stream with Box–Muller normals.
//!
//! Every golden-path random draw (masks, sensor noise, channel noise, fading
//! gains) goes through this generator so that a seed reproduces the same
//! sequence on every platform and in every language port.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`: the top 53 bits of the next output scaled by 2^-53.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal from two uniforms; no second value is cached.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        box_muller(u1, u2)
    }

    /// Uniform integer in `0..n`.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_uniform() * n as f64) as usize).min(n - 1)
    }

    /// Independent child stream, used to give each consumer its own sequence.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `sqrt(-2 ln u1) · cos(2π u2)` with `u1 ∈ (0, 1]`.
pub fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
