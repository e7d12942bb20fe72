//! Fixtures shared by the benchmarks.

use segros::toymodel::{generate_batch, SyntheticSample, SyntheticSpec, ToyModelConfig};

/// Small sample matching the default synthetic shape.
pub fn small_spec() -> SyntheticSpec {
    SyntheticSpec::default()
}

/// Larger prompt and patch grid for the scoring kernels.
pub fn large_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_text: 32,
        n_patches: 256,
        dim: 64,
        planted_fraction: 0.2,
        vocab_size: 16,
    }
}

pub fn batch(seed: u64, count: usize, spec: &SyntheticSpec) -> Vec<SyntheticSample> {
    generate_batch(seed, count, spec).expect("fixture spec is valid")
}

pub fn model_config(spec: &SyntheticSpec) -> ToyModelConfig {
    ToyModelConfig {
        dim: spec.dim,
        vocab_size: spec.vocab_size,
        max_patches: spec.n_patches,
        ffn_dim: spec.dim,
        ..Default::default()
    }
}
