//! Seeded benchmark inputs.

use svf_core::rng::{bernoulli_vec, seeded};
use svf_core::{RealTensor, SpikeTensor};

/// `rows × cols` spikes firing with probability `density`.
pub fn spikes(dims: &[usize], density: f64, seed: u64) -> SpikeTensor {
    let n = dims.iter().product();
    SpikeTensor::from_bools(dims.to_vec(), &bernoulli_vec(&mut seeded(seed), n, density))
        .expect("valid dims")
}

/// Deterministic real input in `[-1, 2)`.
pub fn currents(dims: &[usize], seed: u64) -> RealTensor {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    RealTensor::from_fn(dims.to_vec(), |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 3.0 - 1.0
    })
    .expect("valid dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(spikes(&[4, 70], 0.3, 1), spikes(&[4, 70], 0.3, 1));
        let x = currents(&[3, 5], 2);
        assert_eq!(x, currents(&[3, 5], 2));
        assert!(x.data().iter().all(|v| (-1.0..2.0).contains(v)));
    }
}
