//! Deterministic randomness plumbing.
//!
//! Every random decision in the pipeline (client selection, support/query
//! draws, reparameterization noise, anonymization label draws, data
//! synthesis) flows from one root seed through named sub-streams, so each
//! component is reproducible in isolation and independent of the others.

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Element, Tensor};

const SPLITMIX_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A derivation point in the seed tree. Labels and indices are absorbed into
/// the state, and [`Seeder::rng`] produces an independent ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeder {
    state: u64,
}

impl Seeder {
    pub fn new(root: u64) -> Self {
        let mut state = root ^ 0x42_4c_4e_44; // domain separation from plain seeds
        splitmix64(&mut state);
        Self { state }
    }

    /// Derives a child stream for a named component.
    pub fn derive(&self, label: &str) -> Seeder {
        let mut state = self.state;
        for &b in label.as_bytes() {
            state ^= u64::from(b);
            splitmix64(&mut state);
        }
        Seeder { state }
    }

    /// Derives a child stream for an indexed component (client id, epoch, ...).
    pub fn derive_idx(&self, index: u64) -> Seeder {
        let mut state = self.state ^ index.rotate_left(17);
        splitmix64(&mut state);
        Seeder { state }
    }

    /// Instantiates the RNG for this point in the tree.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.state;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// One standard-normal draw via Box–Muller. Sampling happens in `f64` and is
/// cast down, so the stream is identical for every element type.
pub fn standard_normal<T: Element, R: Rng + ?Sized>(rng: &mut R) -> T {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    T::from_f64(r * (core::f64::consts::TAU * u2).cos())
}

/// A tensor of i.i.d. standard-normal samples.
pub fn normal_tensor<T: Element, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| standard_normal(rng)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data constructed together")
}
