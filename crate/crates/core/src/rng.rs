//! Counter-based random streams.
//!
//! A stream is addressed by `(master seed, replicate, component)`. The master
//! seed fixes the ChaCha key; replicate and component select the 64-bit stream
//! word. Any replicate can be regenerated without touching the others, so the
//! schedule that visits replicates has no influence on the numbers drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

const COMPONENT_BITS: u32 = 4;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent substream for one `(replicate, component)` cell.
pub fn stream(master: u64, replicate: u64, component: u32) -> StreamRng {
    assert!(component < (1 << COMPONENT_BITS), "component id out of range");
    assert!(replicate < (1 << (64 - COMPONENT_BITS)), "replicate id out of range");
    let mut state = master;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((replicate << COMPONENT_BITS) | component as u64);
    rng
}

/// Derive a child master seed, e.g. one per experiment cell.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    let mut state = master ^ label.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut state)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform point on the unit sphere in `dim` dimensions.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-300 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
