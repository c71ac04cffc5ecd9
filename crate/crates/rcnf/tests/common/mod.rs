//! Shared helpers for integration tests: synthetic image datasets whose
//! classes differ by Bernoulli pixel density, and reduced architectures
//! that train quickly on a CPU.
//!
//! Each integration test target compiles this module separately, so not
//! every helper is used by every target.
#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcnf::capsnet::{ConvLayerSpec, ModelSpec};
use rcnf::data::{stack_images, Dataset, GrayscaleImage};

/// One image whose pixels are 255 with probability `density`, else 0.
pub fn bernoulli_image(size: usize, density: f64, rng: &mut ChaCha8Rng) -> GrayscaleImage {
    let pixels: Vec<u8> = (0..size * size)
        .map(|_| if rng.random::<f64>() < density { 255 } else { 0 })
        .collect();
    GrayscaleImage::new(size, size, pixels).expect("positive extents")
}

/// `counts[k]` samples of class `k` at `densities[k]`, stacked into one
/// single-line dataset. Deterministic in `seed`.
pub fn density_dataset(
    densities: &[f64],
    counts: &[usize],
    size: usize,
    seed: u64,
) -> Dataset<f32> {
    assert_eq!(densities.len(), counts.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (class, (&density, &count)) in densities.iter().zip(counts).enumerate() {
        for _ in 0..count {
            images.push(bernoulli_image(size, density, &mut rng));
            labels.push(class);
        }
    }
    let line = stack_images(&images).expect("uniform extents");
    Dataset::new(vec![line], labels).expect("non-empty")
}

/// 32-pixel architecture small enough for CPU training runs.
pub fn reduced_spec(num_classes: usize) -> ModelSpec {
    ModelSpec {
        input_size: 32,
        input_lines: 1,
        conv_plan: vec![ConvLayerSpec::new(8, 3, 2), ConvLayerSpec::new(16, 3, 2)],
        capsule_input_dim: 128,
        num_capsules: num_classes,
        capsule_dim: 8,
        routing_iterations: 3,
        reconstruction_enabled: false,
    }
}

/// Even smaller: 8-pixel inputs, for tests where training quality is
/// irrelevant.
pub fn tiny_spec(num_classes: usize) -> ModelSpec {
    ModelSpec {
        input_size: 8,
        input_lines: 1,
        conv_plan: vec![ConvLayerSpec::new(4, 3, 2)],
        capsule_input_dim: 32,
        num_capsules: num_classes,
        capsule_dim: 4,
        routing_iterations: 3,
        reconstruction_enabled: false,
    }
}
