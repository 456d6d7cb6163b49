// SPDX-License-Identifier: MIT OR Apache-2.0

//! CPU forward pass with a hook at every site in [`Site`].

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::cache::{ActivationCache, CaptureFilter};
use super::config::ModelConfig;
use super::hooks::{ComponentRef, EditAction, EditRule, Site, SiteKey};
use super::tokenizer::{TokenSequence, Tokenizer};
use super::weights::Gpt2Weights;
use crate::error::{Error, Result};

const PATTERN_SUM_TOLERANCE: f32 = 1e-5;

/// Logit rows for a contiguous suffix of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    first_position: usize,
    values: Array2<f32>,
}

impl Logits {
    pub fn first_position(&self) -> usize {
        self.first_position
    }

    pub fn last_position(&self) -> usize {
        self.first_position + self.values.nrows() - 1
    }

    pub fn values(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }

    pub fn at(&self, position: usize) -> Result<ArrayView1<'_, f32>> {
        if position < self.first_position || position > self.last_position() {
            return Err(Error::PositionOutOfRange { position, len: self.last_position() + 1 });
        }
        Ok(self.values.index_axis(Axis(0), position - self.first_position))
    }

    pub fn last(&self) -> ArrayView1<'_, f32> {
        self.values.index_axis(Axis(0), self.values.nrows() - 1)
    }

    /// Highest-scoring token at `position`, optionally restricted to `allowed`.
    /// Ties resolve to the lowest id.
    pub fn argmax_at(&self, position: usize, allowed: Option<&[u32]>) -> Result<u32> {
        let row = self.at(position)?;
        let best = match allowed {
            Some(ids) => ids
                .iter()
                .copied()
                .filter(|&id| (id as usize) < row.len())
                .fold(None, |best: Option<(u32, f32)>, id| {
                    let v = row[id as usize];
                    match best {
                        Some((b, bv)) if bv > v || (bv == v && b < id) => Some((b, bv)),
                        _ => Some((id, v)),
                    }
                })
                .map(|(id, _)| id),
            None => row
                .iter()
                .enumerate()
                .fold(None, |best: Option<(usize, f32)>, (i, &v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((i, v)),
                })
                .map(|(i, _)| i as u32),
        };
        best.ok_or_else(|| Error::Dataset("no candidate tokens to choose from".into()))
    }
}

/// `logits[position][y_original] - logits[position][y_new]`.
pub fn logit_diff(logits: &Logits, y_original: u32, y_new: u32, position: usize) -> Result<f32> {
    let row = logits.at(position)?;
    let get = |id: u32| row.get(id as usize).copied().ok_or(Error::TokenOutOfRange { id, vocab_size: row.len() });
    Ok(get(y_original)? - get(y_new)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitScope {
    #[default]
    All,
    Last,
}

/// Defaults to full logits and a complete cache.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub logits: LogitScope,
    pub capture: CaptureFilter,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { logits: LogitScope::All, capture: CaptureFilter::all() }
    }
}

impl RunOptions {
    pub fn last(capture: CaptureFilter) -> Self {
        Self { logits: LogitScope::Last, capture }
    }
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    weights: Gpt2Weights,
    tokenizer: Option<Arc<Tokenizer>>,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Gpt2Weights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Self { config, weights, tokenizer: None })
    }

    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        let weights = Gpt2Weights::random(&config, seed)?;
        Self::new(config, weights)
    }

    /// A small randomly initialized model over the GPT-2 vocabulary with
    /// the bundled tokenizer, for exercising pipelines without checkpoints.
    pub fn toy_gpt2(seed: u64) -> Result<Self> {
        let config = ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_head: 16,
            vocab_size: 50257,
            max_context: 128,
            layer_norm_epsilon: 1e-5,
            d_mlp: None,
        };
        Self::random(config, seed)?.with_tokenizer(Arc::new(Tokenizer::bundled_gpt2()?))
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<Tokenizer>) -> Result<Self> {
        if tokenizer.vocab_size() != self.config.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer has {} entries but model vocabulary is {}",
                tokenizer.vocab_size(),
                self.config.vocab_size
            )));
        }
        self.tokenizer = Some(tokenizer);
        Ok(self)
    }

    pub fn load(
        config_file: impl AsRef<Path>,
        weights_file: impl AsRef<Path>,
        vocab_file: impl AsRef<Path>,
        merges_file: impl AsRef<Path>,
    ) -> Result<Self> {
        let config = ModelConfig::from_file(config_file)?;
        let weights = Gpt2Weights::from_safetensors(weights_file, &config)?;
        let tokenizer = Tokenizer::from_files(vocab_file, merges_file)?;
        Self::new(config, weights)?.with_tokenizer(Arc::new(tokenizer))
    }

    /// Loads `config.json` and `model.safetensors` from `dir`, with
    /// `vocab.json` / `merges.txt` from the same directory or, when absent,
    /// the bundled GPT-2 vocabulary.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (vocab, merges) = (dir.join("vocab.json"), dir.join("merges.txt"));
        let tokenizer = if vocab.exists() && merges.exists() {
            Tokenizer::from_files(vocab, merges)?
        } else {
            Tokenizer::bundled_gpt2()?
        };
        let config = ModelConfig::from_file(dir.join("config.json"))?;
        let weights = Gpt2Weights::from_safetensors(dir.join("model.safetensors"), &config)?;
        Self::new(config, weights)?.with_tokenizer(Arc::new(tokenizer))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Gpt2Weights {
        &self.weights
    }

    pub fn tokenizer(&self) -> Result<&Tokenizer> {
        self.tokenizer.as_deref().ok_or(Error::NoTokenizer)
    }

    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        Ok(self.tokenizer()?.encode(text))
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(self.tokenizer()?.decode(ids))
    }

    /// Unembedding row for `id`: the direction whose inner product with a
    /// (normalized) residual write is that token's logit contribution.
    pub fn unembed_direction(&self, id: u32) -> Result<ArrayView1<'_, f32>> {
        if id as usize >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange { id, vocab_size: self.config.vocab_size });
        }
        Ok(self.weights.wte.index_axis(Axis(0), id as usize))
    }

    /// Standard deviation the final layer norm divides by for `resid`.
    pub fn final_ln_scale(&self, resid: ArrayView1<'_, f32>) -> f32 {
        let mean = resid.mean().unwrap_or(0.0);
        let var = resid.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / resid.len() as f32;
        (var + self.config.layer_norm_epsilon).sqrt()
    }

    /// Maps one additive residual write through the final layer norm with a
    /// frozen scale: `gain * (write - mean(write)) / scale`.
    pub fn fold_final_ln(&self, write: ArrayView1<'_, f32>, scale: f32) -> Array1<f32> {
        let mean = write.mean().unwrap_or(0.0);
        Zip::from(&write).and(&self.weights.lnf_g).map_collect(|&w, &g| g * (w - mean) / scale)
    }

    pub fn run_with_cache(&self, tokens: impl AsRef<[u32]>) -> Result<(Logits, ActivationCache)> {
        self.run(tokens, &[], &RunOptions::default())
    }

    pub fn run_with_edits(&self, tokens: impl AsRef<[u32]>, edits: &[EditRule]) -> Result<(Logits, ActivationCache)> {
        self.run(tokens, edits, &RunOptions::default())
    }

    /// Greedy next token after the final position.
    pub fn greedy_next(&self, tokens: impl AsRef<[u32]>) -> Result<u32> {
        let (logits, _) = self.run(tokens, &[], &RunOptions::last(CaptureFilter::nothing()))?;
        logits.argmax_at(logits.last_position(), None)
    }

    pub fn run(
        &self,
        tokens: impl AsRef<[u32]>,
        edits: &[EditRule],
        opts: &RunOptions,
    ) -> Result<(Logits, ActivationCache)> {
        let tokens = tokens.as_ref();
        let cfg = &self.config;
        let n = tokens.len();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        if n > cfg.max_context {
            return Err(Error::ContextOverflow { len: n, max: cfg.max_context });
        }
        if let Some(&id) = tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange { id, vocab_size: cfg.vocab_size });
        }
        let mut pass =
            Pass { edits: EditTable::build(edits, cfg, n)?, capture: &opts.capture, cache: ActivationCache::new(n) };
        let w = &self.weights;
        let (d_head, eps) = (cfg.d_head, cfg.layer_norm_epsilon);
        let d = cfg.d_model;

        let mut x = Array2::zeros((n, d));
        for (i, &tok) in tokens.iter().enumerate() {
            let mut row = x.row_mut(i);
            row += &w.wte.row(tok as usize);
            row += &w.wpe.row(i);
        }
        pass.visit(SiteKey::new(Site::Embed, 0, None), &mut x)?;

        let inv_sqrt = 1.0 / (d_head as f32).sqrt();
        for (l, lw) in w.layers.iter().enumerate() {
            pass.visit(SiteKey::new(Site::ResidPre, l, None), &mut x)?;
            let ln = layer_norm(x.view(), &lw.ln1_g, &lw.ln1_b, eps);
            let qkv = ln.dot(&lw.w_qkv) + &lw.b_qkv;
            let mut zs = Array2::zeros((n, d));
            for h in 0..cfg.n_heads {
                let cols = |block: usize| {
                    let start = block * d + h * d_head;
                    qkv.slice(s![.., start..start + d_head]).to_owned()
                };
                let (mut q, mut k, mut v) = (cols(0), cols(1), cols(2));
                pass.visit(SiteKey::head(Site::HeadQ, l, h), &mut q)?;
                pass.visit(SiteKey::head(Site::HeadK, l, h), &mut k)?;
                pass.visit(SiteKey::head(Site::HeadV, l, h), &mut v)?;
                let mut pattern = q.dot(&k.t());
                causal_softmax(&mut pattern, inv_sqrt);
                pass.visit(SiteKey::head(Site::HeadPattern, l, h), &mut pattern)?;
                let mut z = pattern.dot(&v);
                pass.visit(SiteKey::head(Site::HeadZ, l, h), &mut z)?;
                zs.slice_mut(s![.., h * d_head..(h + 1) * d_head]).assign(&z);
            }
            let mut attn = zs.dot(&lw.w_o) + &lw.b_o;
            pass.visit(SiteKey::new(Site::AttnOut, l, None), &mut attn)?;
            x += &attn;
            pass.visit(SiteKey::new(Site::ResidMid, l, None), &mut x)?;

            let ln2 = layer_norm(x.view(), &lw.ln2_g, &lw.ln2_b, eps);
            let mut hidden = ln2.dot(&lw.w_in) + &lw.b_in;
            hidden.mapv_inplace(gelu_new);
            let mut mlp = hidden.dot(&lw.w_out) + &lw.b_out;
            pass.visit(SiteKey::new(Site::MlpOut, l, None), &mut mlp)?;
            x += &mlp;
            pass.visit(SiteKey::new(Site::ResidPost, l, None), &mut x)?;
        }

        let first = match opts.logits {
            LogitScope::All => 0,
            LogitScope::Last => n - 1,
        };
        let final_ln = layer_norm(x.slice(s![first.., ..]), &w.lnf_g, &w.lnf_b, eps);
        let values = final_ln.dot(&w.wte.t());
        let logits_key = SiteKey::new(Site::Logits, cfg.n_layers - 1, None);
        if pass.capture.wants(&logits_key) && first == 0 {
            pass.cache.insert(logits_key, values.clone());
        }
        Ok((Logits { first_position: first, values }, pass.cache))
    }
}

pub(crate) fn layer_norm(x: ArrayView2<'_, f32>, gain: &Array1<f32>, bias: &Array1<f32>, eps: f32) -> Array2<f32> {
    let d = x.ncols() as f32;
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f32>() / d;
        let inv = 1.0 / (var + eps).sqrt();
        Zip::from(&mut row).and(gain).and(bias).for_each(|v, &g, &b| *v = *v * inv * g + b);
    }
    out
}

fn causal_softmax(scores: &mut Array2<f32>, scale: f32) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let max = row.iter().take(i + 1).fold(f32::NEG_INFINITY, |m, &v| m.max(v * scale));
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j <= i {
                *v = (*v * scale - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

/// Tanh approximation of GELU used by GPT-2.
pub(crate) fn gelu_new(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

struct Pass<'a> {
    edits: EditTable<'a>,
    capture: &'a CaptureFilter,
    cache: ActivationCache,
}

impl Pass<'_> {
    fn visit(&mut self, key: SiteKey, value: &mut Array2<f32>) -> Result<()> {
        if let Some(rules) = self.edits.by_key.get(&key) {
            for (position, action) in rules {
                apply_edit(key, *position, action, value)?;
            }
        }
        if self.capture.wants(&key) {
            self.cache.insert(key, value.clone());
        }
        Ok(())
    }
}

struct EditTable<'a> {
    by_key: HashMap<SiteKey, Vec<(Option<usize>, &'a EditAction)>>,
}

impl<'a> EditTable<'a> {
    fn build(edits: &'a [EditRule], cfg: &ModelConfig, n_tokens: usize) -> Result<Self> {
        let mut by_key: HashMap<SiteKey, Vec<(Option<usize>, &'a EditAction)>> = HashMap::new();
        for rule in edits {
            let target = rule.target;
            target.validate(cfg)?;
            let invalid = |reason: &str| Error::InvalidEdit { target: target.to_string(), reason: reason.to_string() };
            if target.site == Site::Logits {
                return Err(invalid("logits are read-only"));
            }
            if let Some(p) = target.position {
                if p >= n_tokens {
                    return Err(Error::PositionOutOfRange { position: p, len: n_tokens });
                }
            }
            match &rule.action {
                EditAction::ForcePattern(weights) => {
                    if target.site != Site::HeadPattern {
                        return Err(invalid("force-pattern applies to attention patterns only"));
                    }
                    let Some(query) = target.position else {
                        return Err(invalid("force-pattern needs a query position"));
                    };
                    if weights.iter().any(|&(k, w)| k > query || !(w >= 0.0)) {
                        return Err(invalid("forced weights must be nonnegative and attend to earlier positions"));
                    }
                    let total: f32 = weights.iter().map(|&(_, w)| w).sum();
                    if (total - 1.0).abs() > PATTERN_SUM_TOLERANCE {
                        return Err(invalid("forced weights must sum to 1"));
                    }
                }
                EditAction::BlockPattern(keys) => {
                    if target.site != Site::HeadPattern {
                        return Err(invalid("block-pattern applies to attention patterns only"));
                    }
                    if target.position.is_none() {
                        return Err(invalid("block-pattern needs a query position"));
                    }
                    if let Some(&k) = keys.iter().find(|&&k| k >= n_tokens) {
                        return Err(Error::PositionOutOfRange { position: k, len: n_tokens });
                    }
                }
                _ => {}
            }
            let slot = by_key.entry(target.key()).or_default();
            let clash = slot.iter().any(|(p, _)| match (p, target.position) {
                (Some(a), Some(b)) => *a == b,
                _ => true,
            });
            if clash {
                return Err(Error::ConflictingEdits(target.to_string()));
            }
            slot.push((target.position, &rule.action));
        }
        Ok(Self { by_key })
    }
}

fn apply_edit(key: SiteKey, position: Option<usize>, action: &EditAction, value: &mut Array2<f32>) -> Result<()> {
    let target = || match position {
        Some(p) => key.at(p),
        None => key.all(),
    };
    let shape_err = |expected: &[usize], actual: &[usize]| Error::InvalidEdit {
        target: target().to_string(),
        reason: format!("replacement shape {actual:?} does not match site shape {expected:?}"),
    };
    let overwrite = |value: &mut Array2<f32>, src: ArrayView2<'_, f32>| -> Result<()> {
        match position {
            Some(p) => {
                let src_row = if src.nrows() == 1 {
                    src.row(0)
                } else if src.nrows() == value.nrows() {
                    src.row(p)
                } else {
                    return Err(shape_err(&[1, value.ncols()], src.shape()));
                };
                if src_row.len() != value.ncols() {
                    return Err(shape_err(&[1, value.ncols()], src.shape()));
                }
                value.row_mut(p).assign(&src_row);
            }
            None => {
                if src.shape() != value.shape() {
                    return Err(shape_err(value.shape(), src.shape()));
                }
                value.assign(&src);
            }
        }
        Ok(())
    };
    match action {
        EditAction::ReplaceWith(src) => overwrite(value, src.view()),
        EditAction::FreezeFrom(cache) => {
            let src = cache.site(&key).ok_or_else(|| Error::InvalidEdit {
                target: target().to_string(),
                reason: "source cache has no value for this site".into(),
            })?;
            if src.shape() != value.shape() {
                return Err(shape_err(value.shape(), src.shape()));
            }
            overwrite(value, src.view())
        }
        EditAction::Zero => {
            match position {
                Some(p) => value.row_mut(p).fill(0.0),
                None => value.fill(0.0),
            }
            Ok(())
        }
        EditAction::ForcePattern(weights) => {
            let mut row = value.row_mut(position.expect("validated"));
            row.fill(0.0);
            for &(k, w) in weights {
                row[k] += w;
            }
            Ok(())
        }
        EditAction::BlockPattern(keys) => {
            let mut row = value.row_mut(position.expect("validated"));
            for &k in keys {
                row[k] = 0.0;
            }
            let total = row.sum();
            if !(total > 0.0) {
                return Err(Error::InvalidEdit {
                    target: target().to_string(),
                    reason: "blocking removed all attention mass from the row".into(),
                });
            }
            row.mapv_inplace(|v| v / total);
            Ok(())
        }
    }
}

/// Convenience for tests and analyses: the cached tensor for `component`.
pub fn cached<'c>(cache: &'c ActivationCache, component: &ComponentRef) -> Result<ArrayView2<'c, f32>> {
    cache.get(component).ok_or_else(|| Error::InvalidComponent(format!("{component} not in cache")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::hooks::HeadRef;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            vocab_size: 13,
            max_context: 10,
            layer_norm_epsilon: 1e-5,
            d_mlp: None,
        };
        Model::random(cfg, 11).unwrap()
    }

    #[test]
    fn patterns_are_row_stochastic_and_causal() {
        let m = tiny();
        let (_, cache) = m.run_with_cache([1, 4, 2, 9, 9]).unwrap();
        for l in 0..2 {
            for h in 0..2 {
                let p = cache.pattern(l, h).unwrap();
                for (i, row) in p.rows().into_iter().enumerate() {
                    assert!((row.sum() - 1.0).abs() < 1e-5);
                    assert!(row.iter().skip(i + 1).all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn cache_covers_every_site() {
        let m = tiny();
        let (_, cache) = m.run_with_cache([1, 2, 3]).unwrap();
        // embed + 2 layers x (5 layer sites + 2 heads x 5 head sites) + logits
        assert_eq!(cache.len(), 1 + 2 * (5 + 10) + 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = tiny();
        assert!(matches!(m.run_with_cache([]), Err(Error::EmptySequence)));
        assert!(matches!(m.run_with_cache([13]), Err(Error::TokenOutOfRange { .. })));
        assert!(matches!(m.run_with_cache([0; 11]), Err(Error::ContextOverflow { len: 11, max: 10 })));
    }

    #[test]
    fn conflicting_and_malformed_edits_are_rejected() {
        let m = tiny();
        let z = ComponentRef::head(Site::HeadZ, 0, 1);
        let dup = [EditRule::zero(z.at(1)), EditRule::zero(z.at(1))];
        assert!(matches!(m.run_with_edits([1, 2], &dup), Err(Error::ConflictingEdits(_))));
        let overlap = [EditRule::zero(z), EditRule::zero(z.at(0))];
        assert!(matches!(m.run_with_edits([1, 2], &overlap), Err(Error::ConflictingEdits(_))));
        let disjoint = [EditRule::zero(z.at(0)), EditRule::zero(z.at(1))];
        assert!(m.run_with_edits([1, 2], &disjoint).is_ok());

        let bad_shape = [EditRule::replace(z, Array2::zeros((2, 3)))];
        assert!(matches!(m.run_with_edits([1, 2], &bad_shape), Err(Error::InvalidEdit { .. })));
        let h = HeadRef::new(1, 0);
        let unnormalized = [EditRule::force(h, 1, vec![(0, 0.5), (1, 0.4)])];
        assert!(m.run_with_edits([1, 2], &unnormalized).is_err());
        let future = [EditRule::force(h, 0, vec![(1, 1.0)])];
        assert!(m.run_with_edits([1, 2], &future).is_err());
        let everything = [EditRule::block(h, 1, vec![0, 1])];
        assert!(m.run_with_edits([1, 2], &everything).is_err());
        let logits = [EditRule::zero(ComponentRef::logits(m.config()))];
        assert!(m.run_with_edits([1, 2], &logits).is_err());
    }

    #[test]
    fn force_and_block_keep_rows_stochastic() {
        let m = tiny();
        let h = HeadRef::new(1, 1);
        let toks = [3, 1, 4, 1, 5];
        let (_, forced) = m.run_with_edits(toks, &[EditRule::force(h, 4, vec![(1, 0.5), (3, 0.5)])]).unwrap();
        let row = forced.pattern(1, 1).unwrap().row(4).to_owned();
        assert_eq!(row.to_vec(), vec![0.0, 0.5, 0.0, 0.5, 0.0]);

        let (_, plain) = m.run_with_cache(toks).unwrap();
        let (_, blocked) = m.run_with_edits(toks, &[EditRule::block(h, 4, vec![0, 2])]).unwrap();
        let before = plain.pattern(1, 1).unwrap().row(4).to_owned();
        let after = blocked.pattern(1, 1).unwrap().row(4).to_owned();
        assert_eq!(after[0], 0.0);
        assert_eq!(after[2], 0.0);
        assert!((after.sum() - 1.0).abs() < 1e-5);
        let kept = before[1] + before[3] + before[4];
        assert!((after[1] - before[1] / kept).abs() < 1e-6);
    }

    #[test]
    fn last_scope_matches_full_logits() {
        let m = tiny();
        let toks = [7, 3, 3, 1];
        let (full, _) = m.run_with_cache(toks).unwrap();
        let (last, _) = m.run(toks, &[], &RunOptions::last(CaptureFilter::nothing())).unwrap();
        assert_eq!(last.first_position(), 3);
        assert_eq!(full.at(3).unwrap(), last.at(3).unwrap());
        assert!(last.at(2).is_err());
    }

    #[test]
    fn logit_diff_is_antisymmetric() {
        let m = tiny();
        let (logits, _) = m.run_with_cache([2, 5]).unwrap();
        let a = logit_diff(&logits, 3, 7, 1).unwrap();
        let b = logit_diff(&logits, 7, 3, 1).unwrap();
        assert_eq!(a, -b);
        assert_eq!(logit_diff(&logits, 4, 4, 1).unwrap(), 0.0);
    }

    #[test]
    fn gelu_matches_reference_points() {
        // values from torch's gelu(approximate="tanh")
        assert!((gelu_new(1.0) - 0.841_192).abs() < 1e-6);
        assert!((gelu_new(-0.5) - -0.154_286).abs() < 1e-6);
        assert_eq!(gelu_new(0.0), 0.0);
    }
}
