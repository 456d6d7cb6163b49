// SPDX-License-Identifier: MIT OR Apache-2.0

//! GPT-2 runtime: weights, tokenizer and a hookable forward pass.

mod cache;
mod config;
mod forward;
mod hooks;
mod tokenizer;
mod weights;

pub use cache::{ActivationCache, CaptureFilter};
pub use config::ModelConfig;
pub use forward::{cached, logit_diff, LogitScope, Logits, Model, RunOptions};
pub use hooks::{ComponentRef, EditAction, EditRule, HeadRef, Site, SiteKey};
pub use tokenizer::{TokenSequence, Tokenizer, END_OF_TEXT};
pub use weights::{Gpt2Weights, LayerWeights};
