use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator behind every seeded operation in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a named sub-component.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A tensor of independent standard normal draws.
pub fn normal_tensor(shape: &[usize], seed: u64) -> crate::tensor::Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = seeded(seed);
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| StandardNormal.sample(&mut rng)).collect();
    crate::tensor::Tensor::new(shape.to_vec(), data).expect("shape matches buffer")
}
