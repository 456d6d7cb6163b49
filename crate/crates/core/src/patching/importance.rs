// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadRef;

/// Percent logit-difference change per head, `n_layers x n_heads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub scores: Array2<f64>,
    pub stage_label: String,
    pub n_examples: usize,
    pub zero_baseline: usize,
}

impl ImportanceMatrix {
    pub fn new(scores: Array2<f64>, stage_label: impl Into<String>) -> Self {
        Self { scores, stage_label: stage_label.into(), n_examples: 0, zero_baseline: 0 }
    }

    pub fn n_layers(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_heads(&self) -> usize {
        self.scores.ncols()
    }

    pub fn get(&self, head: HeadRef) -> Option<f64> {
        self.scores.get((head.layer, head.head)).copied()
    }

    /// Heads ordered most harmful first (most negative score); ties by
    /// `(layer, head)`.
    pub fn ranked(&self) -> Vec<(HeadRef, f64)> {
        let mut out: Vec<(HeadRef, f64)> =
            self.scores.indexed_iter().map(|((l, h), &v)| (HeadRef::new(l, h), v)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn most_important(&self) -> Option<HeadRef> {
        self.ranked().first().map(|(h, _)| *h)
    }

    /// 1-based rank of `head` in [`ranked`](Self::ranked).
    pub fn rank_of(&self, head: HeadRef) -> Option<usize> {
        self.ranked().iter().position(|(h, _)| *h == head).map(|i| i + 1)
    }

    /// Elementwise `self - other`.
    pub fn difference(&self, other: &ImportanceMatrix) -> Result<ImportanceMatrix> {
        if self.scores.dim() != other.scores.dim() {
            return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", self.scores.dim(), other.scores.dim())));
        }
        Ok(ImportanceMatrix::new(
            &self.scores - &other.scores,
            format!("{} minus {}", self.stage_label, other.stage_label),
        ))
    }

    /// Rows of `layer,head,score` for tabular output.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,score\n");
        for ((l, h), v) in self.scores.indexed_iter() {
            out.push_str(&format!("{l},{h},{v}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, stage_label: &str) -> Result<Self> {
        let mut cells = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::DimensionMismatch(format!("line {}: expected `layer,head,score`", i + 1));
            let mut parts = line.split(',');
            let l: usize = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            let h: usize = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            cells.push((l, h, v));
        }
        let layers = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
        let heads = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
        if cells.len() != layers * heads || cells.is_empty() {
            return Err(Error::DimensionMismatch(format!("{} cells do not fill a {layers}x{heads} grid", cells.len())));
        }
        let mut scores = Array2::from_elem((layers, heads), f64::NAN);
        for (l, h, v) in cells {
            scores[(l, h)] = v;
        }
        if scores.iter().any(|v| v.is_nan()) {
            return Err(Error::DimensionMismatch("duplicate cells in grid".into()));
        }
        Ok(Self::new(scores, stage_label))
    }
}
