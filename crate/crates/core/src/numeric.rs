//! Small numeric helpers shared across modules: deterministic summation and seeding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere a seed is accepted. ChaCha8 is counter based and its
/// output stream is fixed by the algorithm, so seeded results are portable.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pairwise (tree) summation in a fixed order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise summation of a strided column: `values[offset + k * stride]` for `k < count`.
pub fn pairwise_sum_strided(values: &[f64], offset: usize, stride: usize, count: usize) -> f64 {
    const LEAF: usize = 8;
    if count <= LEAF {
        return (0..count).map(|k| values[offset + k * stride]).sum();
    }
    let mid = count / 2;
    pairwise_sum_strided(values, offset, stride, mid)
        + pairwise_sum_strided(values, offset + mid * stride, stride, count - mid)
}

/// Element-wise pairwise summation of equally sized vectors.
pub fn pairwise_sum_vecs(vectors: &[Vec<f64>], len: usize) -> Vec<f64> {
    if vectors.is_empty() {
        return vec![0.0; len];
    }
    if vectors.len() == 1 {
        return vectors[0].clone();
    }
    let mid = vectors.len() / 2;
    let mut left = pairwise_sum_vecs(&vectors[..mid], len);
    let right = pairwise_sum_vecs(&vectors[mid..], len);
    for (l, r) in left.iter_mut().zip(right) {
        *l += r;
    }
    left
}
