// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a GPT-2 family decoder.
///
/// Deserializes both from its own field names and from the `config.json`
/// published alongside GPT-2 checkpoints (`n_layer`, `n_head`, `n_embd`,
/// `n_positions`). `d_head` is optional in the file and derived when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(alias = "n_layer")]
    pub n_layers: usize,
    #[serde(alias = "n_head")]
    pub n_heads: usize,
    #[serde(alias = "n_embd")]
    pub d_model: usize,
    #[serde(default)]
    pub d_head: usize,
    pub vocab_size: usize,
    #[serde(alias = "n_positions")]
    pub max_context: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_epsilon: f32,
    /// Hidden width of the MLP; GPT-2 uses `4 * d_model` and stores `null`.
    #[serde(default, alias = "n_inner")]
    pub d_mlp: Option<usize>,
}

fn default_eps() -> f32 {
    1e-5
}

impl ModelConfig {
    /// GPT2-Medium dimensions as published with the checkpoint.
    pub fn gpt2_medium() -> Self {
        Self {
            n_layers: 24,
            n_heads: 16,
            d_model: 1024,
            d_head: 64,
            vocab_size: 50257,
            max_context: 1024,
            layer_norm_epsilon: 1e-5,
            d_mlp: None,
        }
    }

    pub fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_head: 64,
            vocab_size: 50257,
            max_context: 1024,
            layer_norm_epsilon: 1e-5,
            d_mlp: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.d_head == 0 && cfg.n_heads > 0 {
            cfg.d_head = cfg.d_model / cfg.n_heads;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::Config(format!(
                "d_model ({}) != n_heads ({}) x d_head ({})",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if self.d_mlp == Some(0) {
            return Err(Error::Config("d_mlp must be positive".into()));
        }
        if !(self.layer_norm_epsilon > 0.0) {
            return Err(Error::Config("layer_norm_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn mlp_width(&self) -> usize {
        self.d_mlp.unwrap_or(4 * self.d_model)
    }

    pub fn n_total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}
