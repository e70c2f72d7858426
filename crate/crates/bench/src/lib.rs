//! Inputs shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vien_core::fixture::TinyModel;
use vien_core::quant::QuantType;

/// TinyLlama-1.1B matrix shapes as (rows, cols).
pub const TINYLLAMA_SHAPES: [(&str, usize, usize); 3] = [
    ("attn_q", 2048, 2048),
    ("ffn_up", 5632, 2048),
    ("ffn_down", 2048, 5632),
];

pub fn gaussian(seed: u64, n: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// One decoder layer at TinyLlama width over the synthetic chat vocabulary.
pub fn tinyllama_layer(weight_type: QuantType) -> TinyModel {
    TinyModel {
        n_layers: 1,
        embed_dim: 2048,
        n_heads: 32,
        n_kv_heads: 4,
        ffn_hidden_dim: 5632,
        context_len: 512,
        ..TinyModel::chat(weight_type)
    }
}
