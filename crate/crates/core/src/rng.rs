//! Counter-based random streams with fixed, documented constants, so that
//! synthetic embeddings are reproducible bit-for-bit on every platform.
//!
//! * Mixing function: the SplitMix64 finalizer (Steele, Lea & Flood 2014),
//!   constants `0xbf58476d1ce4e5b9`, `0x94d049bb133111eb`, shifts 30/27/31.
//! * Stream key for `(seed, domain, index)`:
//!   `mix(mix(seed ^ domain·0x9e3779b97f4a7c15) ^ index·0xd1b54a32d192ed03)`.
//! * The n-th 64-bit output of a stream is `mix(key + (n+1)·0x9e3779b97f4a7c15)`.
//! * Uniforms in (0, 1): `((x >> 11) + 0.5) · 2⁻⁵³`.
//! * Normals: Box–Muller on consecutive uniform pairs `(u1, u2)`,
//!   `√(−2 ln u1)·cos(2π u2)` then `√(−2 ln u1)·sin(2π u2)`, evaluated with
//!   the pure-Rust `libm` routines.
//! * String keys (image ids) hash with 64-bit FNV-1a over their UTF-8 bytes.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const INDEX_MUL: u64 = 0xd1b5_4a32_d192_ed03;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One keyed stream of pseudo-random values.
#[derive(Debug, Clone)]
pub struct KeyedStream {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl KeyedStream {
    pub fn new(seed: u64, domain: u64, index: u64) -> Self {
        let key = mix64(mix64(seed ^ domain.wrapping_mul(GOLDEN)) ^ index.wrapping_mul(INDEX_MUL));
        KeyedStream { key, counter: 0, spare_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval (0, 1).
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_open01();
        let u2 = self.next_open01();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }
}
