// SPDX-License-Identifier: MIT OR Apache-2.0

//! Duplicate-token and induction head scores on repeated random sequences.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaptureFilter, HeadRef, Model, RunOptions, Site};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub duplicate_score: f64,
    pub induction_score: f64,
}

/// Scores for every head, `n_layers x n_heads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub duplicate: Array2<f64>,
    pub induction: Array2<f64>,
}

impl HeadScores {
    pub fn get(&self, head: HeadRef) -> HeadScore {
        HeadScore {
            duplicate_score: self.duplicate[(head.layer, head.head)],
            induction_score: self.induction[(head.layer, head.head)],
        }
    }

    /// 1-based rank of `head` in `grid`, highest score first.
    pub fn rank(grid: &Array2<f64>, head: HeadRef) -> usize {
        let v = grid[(head.layer, head.head)];
        1 + grid.iter().filter(|&&o| o > v).count()
    }
}

/// `[first half || first half]` with tokens uniform over the vocabulary,
/// skipping the end-of-text token when the model has a tokenizer.
pub fn repeated_sequences(model: &Model, seed: u64, n_seqs: usize, seq_len: usize) -> Result<Vec<Vec<u32>>> {
    if seq_len < 2 || !seq_len.is_multiple_of(2) {
        return Err(Error::Dataset(format!("sequence length {seq_len} must be even and at least 2")));
    }
    let cfg = model.config();
    if seq_len > cfg.max_context {
        return Err(Error::ContextOverflow { len: seq_len, max: cfg.max_context });
    }
    let special = model.tokenizer().ok().and_then(|t| t.end_of_text());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_seqs)
        .map(|_| {
            let half: Vec<u32> = (0..seq_len / 2)
                .map(|_| loop {
                    let t = rng.gen_range(0..cfg.vocab_size as u32);
                    if Some(t) != special {
                        break t;
                    }
                })
                .collect();
            half.iter().chain(&half).copied().collect()
        })
        .collect())
}

/// For each position whose token occurred earlier, the attention paid to
/// the most recent earlier occurrence (duplicate) and to the token right
/// after it (induction), averaged over all such positions. Heads see no
/// qualifying position in a sequence without repeats and score 0.
pub fn score_heads(model: &Model, sequences: &[Vec<u32>]) -> Result<HeadScores> {
    let cfg = model.config();
    let capture = CaptureFilter::kinds([Site::HeadPattern]);
    let per_seq = sequences
        .par_iter()
        .map(|seq| {
            let mut last_seen: HashMap<u32, usize> = HashMap::new();
            let mut targets = Vec::new();
            for (i, &t) in seq.iter().enumerate() {
                if let Some(&j) = last_seen.get(&t) {
                    targets.push((i, j));
                }
                last_seen.insert(t, i);
            }
            let mut dup = Array2::<f64>::zeros((cfg.n_layers, cfg.n_heads));
            let mut ind = Array2::<f64>::zeros((cfg.n_layers, cfg.n_heads));
            if targets.is_empty() {
                return Ok((dup, ind, 0usize));
            }
            let (_, cache) = model.run(seq, &[], &RunOptions::last(capture.clone()))?;
            for h in HeadRef::all(cfg) {
                let pattern = cache.pattern(h.layer, h.head).expect("captured");
                for &(i, j) in &targets {
                    dup[(h.layer, h.head)] += pattern[(i, j)] as f64;
                    ind[(h.layer, h.head)] += pattern[(i, j + 1)] as f64;
                }
            }
            Ok((dup, ind, targets.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let total: usize = per_seq.iter().map(|s| s.2).sum();
    let mut duplicate = Array2::zeros((cfg.n_layers, cfg.n_heads));
    let mut induction = Array2::zeros((cfg.n_layers, cfg.n_heads));
    if total > 0 {
        for (d, i, _) in &per_seq {
            duplicate += d;
            induction += i;
        }
        duplicate /= total as f64;
        induction /= total as f64;
    }
    Ok(HeadScores { duplicate, induction })
}

pub fn detect_heads(model: &Model, seed: u64, n_seqs: usize, seq_len: usize) -> Result<HeadScores> {
    score_heads(model, &repeated_sequences(model, seed, n_seqs, seq_len)?)
}
