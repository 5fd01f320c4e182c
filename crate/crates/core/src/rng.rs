//! Named, reproducible random streams.
//!
//! Every stochastic step in the pipeline draws from its own stream, derived
//! from the experiment seed plus a label and integer coordinates (stage,
//! cell, step, ...). Streams are independent of execution order, so a stage
//! can be reordered or parallelized without changing any draw, and a rerun
//! with the same seed is bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The RNG used everywhere in this crate.
pub type Stream = ChaCha12Rng;

/// 64-bit FNV-1a over a byte slice; the mixing step for stream derivation.
fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer, to decorrelate nearby FNV outputs.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream from `(seed, label, coords)`. Distinct labels or
/// coordinates give statistically independent streams; the derivation is a
/// fixed algorithm (FNV-1a + SplitMix64 into a seeded ChaCha12), so it is
/// stable across platforms and runs.
pub fn stream(seed: u64, label: &str, coords: &[u64]) -> Stream {
    let mut h = fnv1a(0xcbf2_9ce4_8422_2325, &seed.to_le_bytes());
    h = fnv1a(h, label.as_bytes());
    for &c in coords {
        h = fnv1a(h, &c.to_le_bytes());
    }
    Stream::seed_from_u64(splitmix(h))
}

/// Standard normal draw (Box–Muller; two uniforms per call, second value
/// discarded for simplicity — this crate's draws are not throughput-bound).
pub fn normal(rng: &mut Stream) -> f64 {
    use rand::Rng;
    loop {
        let u1: f64 = rng.gen::<f64>();
        if u1 > 0.0 {
            let u2: f64 = rng.gen::<f64>();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Fills `out` with standard normal draws.
pub fn normal_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
