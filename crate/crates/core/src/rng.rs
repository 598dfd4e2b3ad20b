//! Keyed random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by
//! `(seed, domain, index)`, so replicate `b` or tree `t` sees the same
//! numbers whether fits run serially or in parallel.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Resample = 1,
    Innovation = 2,
    Tree = 3,
    Boost = 4,
    Init = 5,
    Dropout = 6,
    Permutation = 7,
    Mcs = 8,
    Simulation = 9,
    Revision = 10,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain as u64)));
    rng.set_stream(index);
    rng
}

/// The two primitive draws block resamplers need. Implemented for every
/// `RngCore`; tests substitute scripted draws.
pub trait IndexDraw {
    /// Uniform integer in `[0, upper)`; `upper >= 1`.
    fn uniform_index(&mut self, upper: usize) -> usize;
    /// Uniform real in `[0, 1)`.
    fn unit(&mut self) -> f64;
}

impl<R: RngCore> IndexDraw for R {
    fn uniform_index(&mut self, upper: usize) -> usize {
        self.random_range(0..upper)
    }

    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// Replays fixed index and unit draws, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct ScriptedDraws {
    indices: Vec<usize>,
    units: Vec<f64>,
    i: usize,
    u: usize,
}

impl ScriptedDraws {
    pub fn new(indices: Vec<usize>, units: Vec<f64>) -> Self {
        Self {
            indices,
            units,
            i: 0,
            u: 0,
        }
    }
}

impl IndexDraw for ScriptedDraws {
    fn uniform_index(&mut self, upper: usize) -> usize {
        let v = self.indices[self.i % self.indices.len()];
        self.i += 1;
        assert!(v < upper, "scripted index {v} outside [0, {upper})");
        v
    }

    fn unit(&mut self) -> f64 {
        let v = self.units[self.u % self.units.len()];
        self.u += 1;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_keyed() {
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(stream(7, Domain::Tree, 3), |r, _: u64| Some(r.next_u64()))
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(stream(7, Domain::Tree, 3), |r, _: u64| Some(r.next_u64()))
            .collect();
        assert_eq!(a, b);
        let mut c = stream(7, Domain::Tree, 4);
        assert_ne!(a[0], c.next_u64());
        let mut d = stream(7, Domain::Boost, 3);
        assert_ne!(a[0], d.next_u64());
    }
}
