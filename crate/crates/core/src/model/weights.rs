// SPDX-License-Identifier: MIT OR Apache-2.0

//! GPT-2 parameters in the published checkpoint layout.
//!
//! Projection matrices keep the `(in, out)` orientation of the checkpoint's
//! `Conv1D` modules, so `c_attn.weight` is `d_model x 3 d_model` with the
//! query, key and value blocks side by side and heads contiguous within each
//! block.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Array1<f32>,
    pub ln1_b: Array1<f32>,
    /// `c_attn.weight`, `d_model x 3 d_model`.
    pub w_qkv: Array2<f32>,
    pub b_qkv: Array1<f32>,
    /// `attn.c_proj.weight`, `d_model x d_model`; rows grouped by head.
    pub w_o: Array2<f32>,
    pub b_o: Array1<f32>,
    pub ln2_g: Array1<f32>,
    pub ln2_b: Array1<f32>,
    pub w_in: Array2<f32>,
    pub b_in: Array1<f32>,
    pub w_out: Array2<f32>,
    pub b_out: Array1<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gpt2Weights {
    pub wte: Array2<f32>,
    pub wpe: Array2<f32>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Array1<f32>,
    pub lnf_b: Array1<f32>,
}

impl LayerWeights {
    /// Query, key or value projection of one head (`d_model x d_head`).
    pub fn head_proj(&self, which: usize, head: usize, d_head: usize) -> ArrayView2<'_, f32> {
        let d_model = self.w_qkv.nrows();
        let start = which * d_model + head * d_head;
        self.w_qkv.slice(ndarray::s![.., start..start + d_head])
    }

    /// Output projection rows owned by one head (`d_head x d_model`).
    pub fn head_out(&self, head: usize, d_head: usize) -> ArrayView2<'_, f32> {
        self.w_o.slice(ndarray::s![head * d_head..(head + 1) * d_head, ..])
    }
}

fn tensor_names(layer: usize) -> [(&'static str, String); 12] {
    let p = |s: &str| format!("h.{layer}.{s}");
    [
        ("ln1_g", p("ln_1.weight")),
        ("ln1_b", p("ln_1.bias")),
        ("w_qkv", p("attn.c_attn.weight")),
        ("b_qkv", p("attn.c_attn.bias")),
        ("w_o", p("attn.c_proj.weight")),
        ("b_o", p("attn.c_proj.bias")),
        ("ln2_g", p("ln_2.weight")),
        ("ln2_b", p("ln_2.bias")),
        ("w_in", p("mlp.c_fc.weight")),
        ("b_in", p("mlp.c_fc.bias")),
        ("w_out", p("mlp.c_proj.weight")),
        ("b_out", p("mlp.c_proj.bias")),
    ]
}

struct TensorSource<'a> {
    st: SafeTensors<'a>,
    prefix: &'static str,
}

impl TensorSource<'_> {
    fn fetch(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let full = format!("{}{}", self.prefix, name);
        let view = self.st.tensor(&full).map_err(|_| Error::MissingTensor(name.to_string()))?;
        if view.shape() != shape {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual: view.shape().to_vec(),
            });
        }
        if view.dtype() != Dtype::F32 {
            return Err(Error::Weights(format!(
                "tensor `{name}` has dtype {:?}; only F32 checkpoints are supported",
                view.dtype()
            )));
        }
        Ok(view.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }

    fn vector(&self, name: &str, len: usize) -> Result<Array1<f32>> {
        Ok(Array1::from_vec(self.fetch(name, &[len])?))
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let data = self.fetch(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
    }
}

impl Gpt2Weights {
    /// Reads a safetensors checkpoint. Tensor names may carry the
    /// `transformer.` prefix written by `GPT2LMHeadModel`.
    pub fn from_safetensors(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        // SAFETY: the mapping is read-only and dropped before this function returns.
        let mmap = unsafe { memmap2::Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
        Self::from_safetensors_bytes(&mmap, cfg)
    }

    pub fn from_safetensors_bytes(bytes: &[u8], cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Weights(e.to_string()))?;
        let prefix = if st.names().iter().any(|n| n.as_str() == "wte.weight") { "" } else { "transformer." };
        let src = TensorSource { st, prefix };
        let d = cfg.d_model;
        let m = cfg.mlp_width();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let n = tensor_names(l);
            layers.push(LayerWeights {
                ln1_g: src.vector(&n[0].1, d)?,
                ln1_b: src.vector(&n[1].1, d)?,
                w_qkv: src.matrix(&n[2].1, d, 3 * d)?,
                b_qkv: src.vector(&n[3].1, 3 * d)?,
                w_o: src.matrix(&n[4].1, d, d)?,
                b_o: src.vector(&n[5].1, d)?,
                ln2_g: src.vector(&n[6].1, d)?,
                ln2_b: src.vector(&n[7].1, d)?,
                w_in: src.matrix(&n[8].1, d, m)?,
                b_in: src.vector(&n[9].1, m)?,
                w_out: src.matrix(&n[10].1, m, d)?,
                b_out: src.vector(&n[11].1, d)?,
            });
        }
        Ok(Self {
            wte: src.matrix("wte.weight", cfg.vocab_size, d)?,
            wpe: src.matrix("wpe.weight", cfg.max_context, d)?,
            layers,
            lnf_g: src.vector("ln_f.weight", d)?,
            lnf_b: src.vector("ln_f.bias", d)?,
        })
    }

    /// Every parameter under its checkpoint name, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f32, D>) -> &[f32] {
            a.as_slice().expect("weights are stored contiguously")
        }
        let mut out: Vec<(String, Vec<usize>, &[f32])> = vec![
            ("wte.weight".into(), self.wte.shape().to_vec(), flat(&self.wte)),
            ("wpe.weight".into(), self.wpe.shape().to_vec(), flat(&self.wpe)),
            ("ln_f.weight".into(), self.lnf_g.shape().to_vec(), flat(&self.lnf_g)),
            ("ln_f.bias".into(), self.lnf_b.shape().to_vec(), flat(&self.lnf_b)),
        ];
        for (l, lw) in self.layers.iter().enumerate() {
            let n = tensor_names(l);
            let vecs = [&lw.ln1_g, &lw.ln1_b, &lw.b_qkv, &lw.b_o, &lw.ln2_g, &lw.ln2_b, &lw.b_in, &lw.b_out];
            let vec_names = [0, 1, 3, 5, 6, 7, 9, 11];
            for (v, i) in vecs.into_iter().zip(vec_names) {
                out.push((n[i].1.clone(), v.shape().to_vec(), flat(v)));
            }
            for (m, i) in [(&lw.w_qkv, 2), (&lw.w_o, 4), (&lw.w_in, 8), (&lw.w_out, 10)] {
                out.push((n[i].1.clone(), m.shape().to_vec(), flat(m)));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn to_safetensors_bytes(&self) -> Result<Vec<u8>> {
        let named = self.named_tensors();
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> =
            named.into_iter().map(|(n, s, d)| (n, s, d.iter().flat_map(|x| x.to_le_bytes()).collect())).collect();
        let views: Vec<(String, TensorView<'_>)> = bytes
            .iter()
            .map(|(n, s, b)| {
                TensorView::new(Dtype::F32, s.clone(), b)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Weights(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let meta: HashMap<String, String> = [("format".to_string(), "pt".to_string())].into();
        safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Weights(e.to_string()))
    }

    pub fn save_safetensors(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_safetensors_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Seeded random parameters, scaled so attention patterns and logits are
    /// far from uniform.
    pub fn random(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let m = cfg.mlp_width();
        let weight = Normal::new(0.0f32, 0.2).unwrap();
        let small = Normal::new(0.0f32, 0.1).unwrap();
        let mut mat =
            |r: usize, c: usize, dist: &Normal<f32>| Array2::from_shape_simple_fn((r, c), || dist.sample(&mut rng));
        let wte = mat(cfg.vocab_size, d, &weight);
        let wpe = mat(cfg.max_context, d, &weight);
        let mut layer_mats = Vec::new();
        for _ in 0..cfg.n_layers {
            layer_mats.push((mat(d, 3 * d, &weight), mat(d, d, &weight), mat(d, m, &weight), mat(m, d, &weight)));
        }
        let mut vec = |n: usize, offset: f32| Array1::from_shape_simple_fn(n, || offset + small.sample(&mut rng));
        let layers = layer_mats
            .into_iter()
            .map(|(w_qkv, w_o, w_in, w_out)| LayerWeights {
                ln1_g: vec(d, 1.0),
                ln1_b: vec(d, 0.0),
                w_qkv,
                b_qkv: vec(3 * d, 0.0),
                w_o,
                b_o: vec(d, 0.0),
                ln2_g: vec(d, 1.0),
                ln2_b: vec(d, 0.0),
                w_in,
                b_in: vec(m, 0.0),
                w_out,
                b_out: vec(d, 0.0),
            })
            .collect();
        Ok(Self { wte, wpe, layers, lnf_g: vec(d, 1.0), lnf_b: vec(d, 0.0) })
    }

    /// All-zero parameters with unit layer-norm gains; a starting point for
    /// hand-built circuits.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let m = cfg.mlp_width();
        let layer = LayerWeights {
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            w_qkv: Array2::zeros((d, 3 * d)),
            b_qkv: Array1::zeros(3 * d),
            w_o: Array2::zeros((d, d)),
            b_o: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w_in: Array2::zeros((d, m)),
            b_in: Array1::zeros(m),
            w_out: Array2::zeros((m, d)),
            b_out: Array1::zeros(d),
        };
        Ok(Self {
            wte: Array2::zeros((cfg.vocab_size, d)),
            wpe: Array2::zeros((cfg.max_context, d)),
            layers: vec![layer; cfg.n_layers],
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
        })
    }

    /// Checks every tensor against `cfg`, reporting the first offender.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let d = cfg.d_model;
        let m = cfg.mlp_width();
        let expect = |name: &str, actual: &[usize], expected: &[usize]| {
            if actual != expected {
                Err(Error::TensorShape { name: name.to_string(), expected: expected.to_vec(), actual: actual.to_vec() })
            } else {
                Ok(())
            }
        };
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Config(format!(
                "weights have {} layers, config says {}",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        expect("wte.weight", self.wte.shape(), &[cfg.vocab_size, d])?;
        expect("wpe.weight", self.wpe.shape(), &[cfg.max_context, d])?;
        expect("ln_f.weight", self.lnf_g.shape(), &[d])?;
        expect("ln_f.bias", self.lnf_b.shape(), &[d])?;
        for (l, lw) in self.layers.iter().enumerate() {
            let n = tensor_names(l);
            let shapes: [(&[usize], Vec<usize>); 12] = [
                (lw.ln1_g.shape(), vec![d]),
                (lw.ln1_b.shape(), vec![d]),
                (lw.w_qkv.shape(), vec![d, 3 * d]),
                (lw.b_qkv.shape(), vec![3 * d]),
                (lw.w_o.shape(), vec![d, d]),
                (lw.b_o.shape(), vec![d]),
                (lw.ln2_g.shape(), vec![d]),
                (lw.ln2_b.shape(), vec![d]),
                (lw.w_in.shape(), vec![d, m]),
                (lw.b_in.shape(), vec![m]),
                (lw.w_out.shape(), vec![m, d]),
                (lw.b_out.shape(), vec![d]),
            ];
            for ((_, name), (actual, expected)) in n.iter().zip(shapes.iter()) {
                expect(name, actual, expected)?;
            }
        }
        Ok(())
    }
}
