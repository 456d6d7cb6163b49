// SPDX-License-Identifier: MIT OR Apache-2.0

//! Brute-force reference for patching on small models.
//!
//! A plain-loop, f64 forward pass written independently of the library's
//! runtime. Patching is expressed directly as "which value does each head
//! output / MLP output / head input take on each row", and the oracle
//! recomputes everything else from scratch.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use circuit_probe::model::TokenSequence;
use circuit_probe::model::{Gpt2Weights, Model, ModelConfig};
use circuit_probe::tasks::{PromptPair, Task};

pub mod induction;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Q(usize, usize),
    K(usize, usize),
    V(usize, usize),
    Z(usize, usize),
    Mlp(usize),
}

/// Forced values: node → row → vector.
pub type Overrides = HashMap<Node, HashMap<usize, Vec<f64>>>;

pub struct Trace {
    pub values: HashMap<Node, Rows>,
    pub logits: Rows,
}

pub struct Oracle {
    cfg: ModelConfig,
    w: Gpt2Weights,
}

fn layer_norm(x: &[f64], g: &[f32], b: &[f32], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter().enumerate().map(|(i, v)| (v - mean) * inv * g[i] as f64 + b[i] as f64).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// `x (len in) @ W (in x out) + b`.
fn affine(x: &[f64], w: &ndarray::Array2<f32>, cols: std::ops::Range<usize>, b: &[f32]) -> Vec<f64> {
    cols.map(|c| {
        let mut acc = b[c] as f64;
        for (r, &xv) in x.iter().enumerate() {
            acc += xv * w[(r, c)] as f64;
        }
        acc
    })
    .collect()
}

impl Oracle {
    pub fn new(model: &Model) -> Self {
        Self { cfg: model.config().clone(), w: model.weights().clone() }
    }

    fn set(overrides: &Overrides, node: Node, rows: &mut Rows) {
        if let Some(forced) = overrides.get(&node) {
            for (&r, v) in forced {
                rows[r] = v.clone();
            }
        }
    }

    pub fn forward(&self, tokens: &[u32], overrides: &Overrides) -> Trace {
        let cfg = &self.cfg;
        let (d, dh, n) = (cfg.d_model, cfg.d_head, tokens.len());
        let eps = cfg.layer_norm_epsilon as f64;
        let mut x: Rows = tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| (0..d).map(|i| self.w.wte[(t as usize, i)] as f64 + self.w.wpe[(p, i)] as f64).collect())
            .collect();
        let mut values = HashMap::new();
        for (l, lw) in self.w.layers.iter().enumerate() {
            let g1 = lw.ln1_g.to_vec();
            let b1 = lw.ln1_b.to_vec();
            let bqkv = lw.b_qkv.to_vec();
            let ln: Rows = x.iter().map(|r| layer_norm(r, &g1, &b1, eps)).collect();
            let mut attn_out: Rows = vec![lw.b_o.iter().map(|&b| b as f64).collect(); n];
            for h in 0..cfg.n_heads {
                let proj = |block: usize| -> Rows {
                    let start = block * d + h * dh;
                    ln.iter().map(|r| affine(r, &lw.w_qkv, start..start + dh, &bqkv)).collect()
                };
                let (mut q, mut k, mut v) = (proj(0), proj(1), proj(2));
                Self::set(overrides, Node::Q(l, h), &mut q);
                Self::set(overrides, Node::K(l, h), &mut k);
                Self::set(overrides, Node::V(l, h), &mut v);
                let mut z: Rows = vec![vec![0.0; dh]; n];
                for i in 0..n {
                    let scores: Vec<f64> =
                        (0..=i).map(|j| (0..dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()).collect();
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let total: f64 = e.iter().sum();
                    for j in 0..=i {
                        for c in 0..dh {
                            z[i][c] += e[j] / total * v[j][c];
                        }
                    }
                }
                Self::set(overrides, Node::Z(l, h), &mut z);
                for i in 0..n {
                    for o in 0..d {
                        attn_out[i][o] += (0..dh).map(|c| z[i][c] * lw.w_o[(h * dh + c, o)] as f64).sum::<f64>();
                    }
                }
                values.insert(Node::Q(l, h), q);
                values.insert(Node::K(l, h), k);
                values.insert(Node::V(l, h), v);
                values.insert(Node::Z(l, h), z);
            }
            for i in 0..n {
                for o in 0..d {
                    x[i][o] += attn_out[i][o];
                }
            }
            let g2 = lw.ln2_g.to_vec();
            let b2 = lw.ln2_b.to_vec();
            let bin = lw.b_in.to_vec();
            let bout = lw.b_out.to_vec();
            let m = lw.w_in.ncols();
            let mut mlp: Rows = x
                .iter()
                .map(|r| {
                    let hidden: Vec<f64> =
                        affine(&layer_norm(r, &g2, &b2, eps), &lw.w_in, 0..m, &bin).into_iter().map(gelu).collect();
                    affine(&hidden, &lw.w_out, 0..d, &bout)
                })
                .collect();
            Self::set(overrides, Node::Mlp(l), &mut mlp);
            for i in 0..n {
                for o in 0..d {
                    x[i][o] += mlp[i][o];
                }
            }
            values.insert(Node::Mlp(l), mlp);
        }
        let gf = self.w.lnf_g.to_vec();
        let bf = self.w.lnf_b.to_vec();
        let logits = x
            .iter()
            .map(|r| {
                let ln = layer_norm(r, &gf, &bf, eps);
                (0..cfg.vocab_size).map(|t| (0..d).map(|i| ln[i] * self.w.wte[(t, i)] as f64).sum()).collect()
            })
            .collect();
        Trace { values, logits }
    }

    /// Activation patch: `targets` rows (all rows when `None`) take their
    /// `x_new` values; everything downstream is recomputed.
    pub fn activation_patch(&self, pair: &PromptPair, targets: &[(Node, Option<Vec<usize>>)]) -> (f64, f64) {
        let clean = self.forward(&pair.x_original.ids, &Overrides::new());
        let new = self.forward(&pair.x_new.ids, &Overrides::new());
        let mut ov = Overrides::new();
        let n = pair.x_original.len();
        for (node, rows) in targets {
            let rows = rows.clone().unwrap_or_else(|| (0..n).collect());
            let entry = ov.entry(*node).or_default();
            for r in rows {
                entry.insert(r, new.values[node][r].clone());
            }
        }
        let patched = self.forward(&pair.x_original.ids, &ov);
        (ld(&clean, pair), ld(&patched, pair))
    }

    /// Path patch with head-output or MLP senders.
    ///
    /// Pass 3 pins every head output to its clean value, except sender heads
    /// (new values at the sender rows, clean elsewhere) and receiver heads
    /// whose output is measured. Receivers `None` measure the logits.
    pub fn path_patch(
        &self,
        pair: &PromptPair,
        senders: &[Node],
        sender_rows: Option<&[usize]>,
        receivers: Option<&[Node]>,
        receiver_rows: Option<&[usize]>,
    ) -> (f64, f64) {
        let n = pair.x_original.len();
        let all: Vec<usize> = (0..n).collect();
        let clean = self.forward(&pair.x_original.ids, &Overrides::new());
        let new = self.forward(&pair.x_new.ids, &Overrides::new());

        let mut ov = Overrides::new();
        for l in 0..self.cfg.n_layers {
            for h in 0..self.cfg.n_heads {
                let node = Node::Z(l, h);
                if senders.contains(&node) || receivers.is_some_and(|r| r.contains(&node)) {
                    continue;
                }
                ov.insert(node, all.iter().map(|&r| (r, clean.values[&node][r].clone())).collect());
            }
        }
        let rows = sender_rows.unwrap_or(&all);
        for s in senders {
            let mixed = all
                .iter()
                .map(|&r| {
                    let src = if rows.contains(&r) { &new } else { &clean };
                    (r, src.values[s][r].clone())
                })
                .collect();
            ov.insert(*s, mixed);
        }
        let pass3 = self.forward(&pair.x_original.ids, &ov);
        let Some(receivers) = receivers else {
            return (ld(&clean, pair), ld(&pass3, pair));
        };
        let mut ov4 = Overrides::new();
        let rrows = receiver_rows.unwrap_or(&all);
        for r in receivers {
            ov4.insert(*r, rrows.iter().map(|&p| (p, pass3.values[r][p].clone())).collect());
        }
        let patched = self.forward(&pair.x_original.ids, &ov4);
        (ld(&clean, pair), ld(&patched, pair))
    }
}

pub fn ld(trace: &Trace, pair: &PromptPair) -> f64 {
    let last = trace.logits.last().unwrap();
    last[pair.y_original as usize] - last[pair.y_new as usize]
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_head: 8,
        vocab_size: 40,
        max_context: 16,
        layer_norm_epsilon: 1e-5,
        d_mlp: None,
    }
}

pub fn toy_model(seed: u64) -> Model {
    Model::random(toy_config(), seed).unwrap()
}

/// A pair of raw token sequences with an `end` annotation.
pub fn raw_pair(x_original: Vec<u32>, x_new: Vec<u32>, y_original: u32, y_new: u32) -> PromptPair {
    let end = x_original.len() - 1;
    PromptPair {
        task: Task::Ioi,
        x_original: TokenSequence { ids: x_original, text: String::new() },
        x_new: TokenSequence { ids: x_new, text: String::new() },
        y_original,
        y_new,
        annotations: BTreeMap::from([("end".to_string(), end)]),
        distractor_answers: vec![y_new],
    }
}
