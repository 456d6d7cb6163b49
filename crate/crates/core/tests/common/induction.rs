// SPDX-License-Identifier: MIT OR Apache-2.0

//! A two-layer model whose head 1.0 is an induction head by construction.
//!
//! Residual layout (`d_model = 64`): token one-hot in 0..16, position
//! one-hot in 16..48, previous-token one-hot in 48..64. Head 0.0 attends to
//! the previous position and copies that token into 48..64; head 1.0 matches
//! the current token against the previous-token slot, so it attends to the
//! position right after an earlier occurrence of the current token.

use circuit_probe::model::{Gpt2Weights, Model, ModelConfig};

pub const VOCAB: usize = 16;
pub const CONTEXT: usize = 32;
const TOK: usize = 0;
const POS: usize = 16;
const PREV: usize = 48;
const SHARPNESS: f32 = 12.0;

pub fn induction_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 64,
        d_head: 32,
        vocab_size: VOCAB,
        max_context: CONTEXT,
        layer_norm_epsilon: 1e-5,
        d_mlp: None,
    }
}

pub fn induction_model() -> Model {
    let cfg = induction_config();
    let d = cfg.d_model;
    let mut w = Gpt2Weights::zeros(&cfg).unwrap();
    for t in 0..VOCAB {
        w.wte[(t, TOK + t)] = 1.0;
    }
    for p in 0..CONTEXT {
        w.wpe[(p, POS + p)] = 1.0;
    }
    let (q, k, v) = (0, d, 2 * d);

    // head 0.0: query position p against key position p - 1, value = token
    let l0 = &mut w.layers[0];
    for p in 0..CONTEXT {
        l0.w_qkv[(POS + p, q + p)] = SHARPNESS;
        if p + 1 < CONTEXT {
            l0.w_qkv[(POS + p, k + p + 1)] = SHARPNESS;
        }
    }
    for t in 0..VOCAB {
        l0.w_qkv[(TOK + t, v + t)] = 1.0;
        l0.w_o[(t, PREV + t)] = 1.0;
    }

    // head 1.0: query token t against key previous-token t
    let l1 = &mut w.layers[1];
    for t in 0..VOCAB {
        l1.w_qkv[(TOK + t, q + t)] = SHARPNESS;
        l1.w_qkv[(PREV + t, k + t)] = SHARPNESS;
    }
    Model::new(cfg, w).unwrap()
}

/// `[perm || perm]` for a seeded permutation of the vocabulary.
pub fn distinct_repeats(seed: u64, n: usize) -> Vec<Vec<u32>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut half: Vec<u32> = (0..VOCAB as u32).collect();
            half.shuffle(&mut rng);
            half.iter().chain(&half).copied().collect()
        })
        .collect()
}
