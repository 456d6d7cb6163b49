// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching, four-pass path patching and per-head sweeps.
//!
//! The run being measured is always `x_original`; patched values come from
//! `x_new`. A negative percent change means the patch hurt the model's
//! preference for `y_original` over `y_new`.

mod importance;

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    logit_diff, ActivationCache, CaptureFilter, ComponentRef, EditRule, HeadRef, Model, RunOptions, Site, SiteKey,
};
use crate::tasks::PromptPair;

pub use importance::ImportanceMatrix;

/// Token positions a patch applies to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Positions {
    #[default]
    All,
    At(Vec<usize>),
    /// Annotation names resolved per prompt pair, e.g. `end` or `obj2`.
    Named(Vec<String>),
}

impl Positions {
    pub fn named(name: &str) -> Self {
        Positions::Named(vec![name.to_string()])
    }

    pub fn end() -> Self {
        Self::named("end")
    }

    /// `None` means every position.
    pub fn resolve(&self, pair: &PromptPair) -> Result<Option<Vec<usize>>> {
        let n = pair.x_original.len();
        let checked = |ps: Vec<usize>| -> Result<Option<Vec<usize>>> {
            if let Some(&p) = ps.iter().find(|&&p| p >= n) {
                return Err(Error::PositionOutOfRange { position: p, len: n });
            }
            let set: BTreeSet<usize> = ps.into_iter().collect();
            Ok(Some(set.into_iter().collect()))
        };
        match self {
            Positions::All => Ok(None),
            Positions::At(ps) => checked(ps.clone()),
            Positions::Named(names) => checked(names.iter().map(|name| pair.position(name)).collect::<Result<_>>()?),
        }
    }
}

impl std::str::FromStr for Positions {
    type Err = Error;

    /// `all`, a comma list of indices (`3,7`) or of annotation names (`end,obj2`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(Positions::All);
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::PatchSpec(format!("empty entry in position list `{s}`")));
        }
        let numeric: std::result::Result<Vec<usize>, _> = parts.iter().map(|p| p.parse()).collect();
        Ok(match numeric {
            Ok(ps) => Positions::At(ps),
            Err(_) => Positions::Named(parts.into_iter().map(String::from).collect()),
        })
    }
}

/// Where a path patch is measured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Receivers {
    Logits,
    Sites(Vec<SiteKey>),
}

impl Receivers {
    /// The query (or key/value) inputs of a set of heads.
    pub fn head_inputs(site: Site, heads: &[HeadRef]) -> Self {
        Receivers::Sites(heads.iter().map(|h| SiteKey::head(site, h.layer, h.head)).collect())
    }
}

impl std::str::FromStr for Receivers {
    type Err = Error;

    /// `logits`, or a head input site and a head list: `q:15.14,16.15`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "logits" {
            return Ok(Receivers::Logits);
        }
        let (site, heads) = s
            .split_once(':')
            .ok_or_else(|| Error::PatchSpec(format!("expected `logits` or `site:heads`, got `{s}`")))?;
        let site: Site = site.trim().parse()?;
        let heads = heads.split(',').map(|h| h.parse::<HeadRef>()).collect::<Result<Vec<_>>>()?;
        if heads.is_empty() {
            return Err(Error::PatchSpec(format!("no heads in `{s}`")));
        }
        Ok(Receivers::head_inputs(site, &heads))
    }
}

/// Senders `s`, receivers `r` and the positions each is patched at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub senders: Vec<SiteKey>,
    pub receivers: Receivers,
    #[serde(default)]
    pub positions: Positions,
    #[serde(default)]
    pub receiver_positions: Positions,
}

impl PatchSpec {
    pub fn new(senders: Vec<SiteKey>, receivers: Receivers) -> Self {
        Self { senders, receivers, positions: Positions::All, receiver_positions: Positions::All }
    }

    pub fn at(mut self, positions: Positions) -> Self {
        self.positions = positions;
        self
    }

    pub fn receivers_at(mut self, positions: Positions) -> Self {
        self.receiver_positions = positions;
        self
    }

    /// Head outputs as senders.
    pub fn heads(heads: &[HeadRef], receivers: Receivers) -> Self {
        Self::new(heads.iter().map(|h| SiteKey::head(Site::HeadZ, h.layer, h.head)).collect(), receivers)
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        let cfg = model.config();
        let bad = |msg: String| Err(Error::PatchSpec(msg));
        if self.senders.is_empty() {
            return bad("no senders".into());
        }
        for s in &self.senders {
            s.all().validate(cfg)?;
            if s.site == Site::Logits {
                return bad("logits cannot be a sender".into());
            }
        }
        let unique: HashSet<&SiteKey> = self.senders.iter().collect();
        if unique.len() != self.senders.len() {
            return bad("duplicate sender".into());
        }
        if let Receivers::Sites(receivers) = &self.receivers {
            if receivers.is_empty() {
                return bad("no receivers".into());
            }
            for r in receivers {
                r.all().validate(cfg)?;
                if r.site == Site::Logits {
                    return bad("use the logits receiver instead of a logits site".into());
                }
                if unique.contains(r) {
                    return bad(format!("{} is both sender and receiver", r.all()));
                }
            }
            for s in &self.senders {
                if !receivers.iter().any(|r| r.order(cfg) > s.order(cfg)) {
                    return bad(format!("no receiver is downstream of sender {}", s.all()));
                }
            }
        }
        Ok(())
    }

    /// True when some receiver can see a change at `sender`.
    pub fn reaches(model: &Model, sender: &SiteKey, receivers: &Receivers) -> bool {
        match receivers {
            Receivers::Logits => true,
            Receivers::Sites(rs) => rs.iter().any(|r| r.order(model.config()) > sender.order(model.config())),
        }
    }
}

/// `(patched - baseline) / |baseline| * 100`.
pub fn percent_logit_diff(baseline: f64, patched: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((patched - baseline) / baseline.abs() * 100.0)
}

/// Outcome of patching one or more prompt pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchResult {
    /// Mean clean logit difference.
    pub baseline_ld: f64,
    /// Mean patched logit difference.
    pub patched_ld: f64,
    /// Mean of per-example percent changes.
    pub percent_change: f64,
    pub per_example: Vec<(f64, f64)>,
    /// Examples dropped from `percent_change` because their baseline was 0.
    pub zero_baseline: usize,
}

impl PatchResult {
    pub fn from_examples(per_example: Vec<(f64, f64)>) -> Result<Self> {
        if per_example.is_empty() {
            return Err(Error::PatchSpec("no examples to aggregate".into()));
        }
        let n = per_example.len() as f64;
        let mut percents = Vec::with_capacity(per_example.len());
        for &(b, p) in &per_example {
            if let Ok(pc) = percent_logit_diff(b, p) {
                percents.push(pc);
            }
        }
        if percents.is_empty() {
            return Err(Error::ZeroBaseline);
        }
        Ok(Self {
            baseline_ld: per_example.iter().map(|e| e.0).sum::<f64>() / n,
            patched_ld: per_example.iter().map(|e| e.1).sum::<f64>() / n,
            percent_change: percents.iter().sum::<f64>() / percents.len() as f64,
            zero_baseline: per_example.len() - percents.len(),
            per_example,
        })
    }
}

/// Passes 1 and 2 for one pair: cached activations of both inputs.
#[derive(Debug, Clone)]
pub struct PairRuns {
    pub original: Arc<ActivationCache>,
    pub new: Arc<ActivationCache>,
    pub baseline_ld: f32,
    pub y_original: u32,
    pub y_new: u32,
}

impl PairRuns {
    pub fn compute(model: &Model, pair: &PromptPair, capture: &CaptureFilter) -> Result<Self> {
        if pair.x_original.len() != pair.x_new.len() {
            return Err(Error::PatchSpec(format!(
                "patching needs equal-length inputs, got {} and {} tokens",
                pair.x_original.len(),
                pair.x_new.len()
            )));
        }
        let opts = RunOptions::last(capture.clone());
        let (logits, original) = model.run(&pair.x_original, &[], &opts)?;
        let (_, new) = model.run(&pair.x_new, &[], &opts)?;
        Ok(Self {
            original: Arc::new(original),
            new: Arc::new(new),
            baseline_ld: logit_diff(&logits, pair.y_original, pair.y_new, pair.end())?,
            y_original: pair.y_original,
            y_new: pair.y_new,
        })
    }

    /// Captures every head output plus the given extra keys.
    pub fn for_spec(model: &Model, pair: &PromptPair, spec: &PatchSpec) -> Result<Self> {
        Self::compute(model, pair, &capture_for(spec.senders.iter().copied()))
    }
}

fn capture_for(keys: impl IntoIterator<Item = SiteKey>) -> CaptureFilter {
    CaptureFilter::kinds([Site::HeadZ]).with_keys(keys)
}

fn site_value(cache: &ActivationCache, key: &SiteKey) -> Result<Array2<f32>> {
    cache.site(key).cloned().ok_or_else(|| Error::PatchSpec(format!("{} missing from cache", key.all())))
}

/// `base` with the rows in `positions` (all rows when `None`) taken from `src`.
fn mix(
    base: &ActivationCache,
    src: &ActivationCache,
    key: &SiteKey,
    positions: Option<&[usize]>,
) -> Result<Array2<f32>> {
    let from = site_value(src, key)?;
    let Some(positions) = positions else {
        return Ok(from);
    };
    let mut out = site_value(base, key)?;
    for &p in positions {
        out.row_mut(p).assign(&from.row(p));
    }
    Ok(out)
}

/// Edits for pass 3: senders take `x_new` values at their positions, and
/// every head output that is neither a receiver nor fed by a sender inside
/// the same head is frozen to the `x_original` run. MLPs and layer norms are
/// recomputed.
pub fn pass3_edits(
    model: &Model,
    spec: &PatchSpec,
    runs: &PairRuns,
    sender_positions: Option<&[usize]>,
) -> Result<Vec<EditRule>> {
    let cfg = model.config();
    let mut edits = Vec::new();
    let mut exempt: HashSet<HeadRef> = HashSet::new();
    for s in &spec.senders {
        let value = mix(&runs.original, &runs.new, s, sender_positions)?;
        edits.push(EditRule::replace(s.all(), value));
        if let Some(h) = s.head {
            exempt.insert(HeadRef::new(s.layer, h));
        }
    }
    if let Receivers::Sites(rs) = &spec.receivers {
        for r in rs.iter().filter(|r| r.site == Site::HeadZ) {
            exempt.insert(HeadRef::new(r.layer, r.head.expect("validated per-head site")));
        }
    }
    for head in HeadRef::all(cfg).filter(|h| !exempt.contains(h)) {
        edits.push(EditRule::freeze(head.site(Site::HeadZ), Arc::clone(&runs.original)));
    }
    Ok(edits)
}

/// Four-pass path patching of one pair, reusing `runs` for passes 1 and 2.
pub fn path_patch_with(model: &Model, pair: &PromptPair, spec: &PatchSpec, runs: &PairRuns) -> Result<(f32, f32)> {
    let sender_positions = spec.positions.resolve(pair)?;
    let edits = pass3_edits(model, spec, runs, sender_positions.as_deref())?;
    let end = pair.end();
    let patched = match &spec.receivers {
        Receivers::Logits => {
            let (logits, _) = model.run(&pair.x_original, &edits, &RunOptions::last(CaptureFilter::nothing()))?;
            logit_diff(&logits, runs.y_original, runs.y_new, end)?
        }
        Receivers::Sites(receivers) => {
            let capture = CaptureFilter::keys(receivers.iter().copied());
            let (_, pass3) = model.run(&pair.x_original, &edits, &RunOptions::last(capture))?;
            let receiver_positions = spec.receiver_positions.resolve(pair)?;
            let mut patch = Vec::with_capacity(receivers.len());
            for r in receivers {
                let value = site_value(&pass3, r)?;
                match &receiver_positions {
                    None => patch.push(EditRule::replace(r.all(), value)),
                    Some(ps) => patch.extend(
                        ps.iter()
                            .map(|&p| EditRule::replace(r.at(p), value.slice(ndarray::s![p..p + 1, ..]).to_owned())),
                    ),
                }
            }
            let (logits, _) = model.run(&pair.x_original, &patch, &RunOptions::last(CaptureFilter::nothing()))?;
            logit_diff(&logits, runs.y_original, runs.y_new, end)?
        }
    };
    Ok((runs.baseline_ld, patched))
}

/// Four-pass path patching of a single pair.
pub fn path_patch(model: &Model, pair: &PromptPair, spec: &PatchSpec) -> Result<PatchResult> {
    path_patch_dataset(model, std::slice::from_ref(pair), spec)
}

/// Path patching averaged over pairs (normalized per pair, then averaged).
pub fn path_patch_dataset(model: &Model, pairs: &[PromptPair], spec: &PatchSpec) -> Result<PatchResult> {
    spec.validate(model)?;
    let per_example = pairs
        .par_iter()
        .map(|pair| {
            let runs = PairRuns::for_spec(model, pair, spec)?;
            let (b, p) = path_patch_with(model, pair, spec, &runs)?;
            Ok((b as f64, p as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    PatchResult::from_examples(per_example)
}

/// Runs `x_original` with each target overwritten by its `x_new` value and
/// every downstream component recomputed.
pub fn activation_patch(model: &Model, pair: &PromptPair, targets: &[ComponentRef]) -> Result<PatchResult> {
    if targets.is_empty() {
        return Err(Error::PatchSpec("no activation patch targets".into()));
    }
    let cfg = model.config();
    for t in targets {
        t.validate(cfg)?;
    }
    let runs = PairRuns::compute(model, pair, &CaptureFilter::keys(targets.iter().map(|t| t.key())))?;
    let edits = targets
        .iter()
        .map(|t| {
            let src = site_value(&runs.new, &t.key())?;
            Ok(match t.position {
                Some(p) if p < src.nrows() => EditRule::replace(*t, src.slice(ndarray::s![p..p + 1, ..]).to_owned()),
                Some(p) => return Err(Error::PositionOutOfRange { position: p, len: src.nrows() }),
                None => EditRule::replace(*t, src),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (logits, _) = model.run(&pair.x_original, &edits, &RunOptions::last(CaptureFilter::nothing()))?;
    let patched = logit_diff(&logits, pair.y_original, pair.y_new, pair.end())?;
    PatchResult::from_examples(vec![(runs.baseline_ld as f64, patched as f64)])
}

/// One sweep: every head's output as sole sender towards `receivers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub receivers: Receivers,
    pub sender_positions: Positions,
    pub receiver_positions: Positions,
    pub sample_n: usize,
    pub stage_label: String,
}

impl SweepConfig {
    pub fn to_logits(sample_n: usize) -> Self {
        Self {
            receivers: Receivers::Logits,
            sender_positions: Positions::end(),
            receiver_positions: Positions::All,
            sample_n,
            stage_label: "to-logits".into(),
        }
    }
}

/// Path-patches every head to the configured receivers over the first
/// `sample_n` pairs. Heads with no downstream receiver score exactly 0.
pub fn sweep_heads(model: &Model, dataset: &[PromptPair], config: &SweepConfig) -> Result<ImportanceMatrix> {
    let cfg = model.config();
    if config.sample_n == 0 || config.sample_n > dataset.len() {
        return Err(Error::PatchSpec(format!("sample_n {} must be in 1..={}", config.sample_n, dataset.len())));
    }
    let heads: Vec<HeadRef> = HeadRef::all(cfg).collect();
    let specs: Vec<Option<PatchSpec>> = heads
        .iter()
        .map(|h| {
            let sender = SiteKey::head(Site::HeadZ, h.layer, h.head);
            PatchSpec::reaches(model, &sender, &config.receivers).then(|| {
                PatchSpec::heads(&[*h], config.receivers.clone())
                    .at(config.sender_positions.clone())
                    .receivers_at(config.receiver_positions.clone())
            })
        })
        .collect();
    for spec in specs.iter().flatten() {
        spec.validate(model)?;
    }

    let mut percent_sum = vec![0.0f64; heads.len()];
    let mut counted = 0usize;
    let mut zero_baseline = 0usize;
    for (i, pair) in dataset[..config.sample_n].iter().enumerate() {
        let runs = PairRuns::compute(model, pair, &capture_for([]))?;
        if runs.baseline_ld == 0.0 {
            zero_baseline += 1;
            continue;
        }
        let per_head = specs
            .par_iter()
            .map(|spec| match spec {
                None => Ok(0.0),
                Some(spec) => {
                    let (b, p) = path_patch_with(model, pair, spec, &runs)?;
                    percent_logit_diff(b as f64, p as f64)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        for (acc, v) in percent_sum.iter_mut().zip(per_head) {
            *acc += v;
        }
        counted += 1;
        log::debug!("{}: example {}/{}", config.stage_label, i + 1, config.sample_n);
    }
    if counted == 0 {
        return Err(Error::ZeroBaseline);
    }
    let scores =
        Array2::from_shape_fn((cfg.n_layers, cfg.n_heads), |(l, h)| percent_sum[l * cfg.n_heads + h] / counted as f64);
    Ok(ImportanceMatrix { scores, stage_label: config.stage_label.clone(), n_examples: counted, zero_baseline })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_change_arithmetic() {
        assert_eq!(percent_logit_diff(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(percent_logit_diff(2.0, 1.0).unwrap(), -50.0);
        assert!((percent_logit_diff(2.0, 2.2).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(percent_logit_diff(-2.0, -3.0).unwrap(), -50.0);
        assert!(matches!(percent_logit_diff(0.0, 1.0), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn zero_baselines_are_excluded_and_counted() {
        let r = PatchResult::from_examples(vec![(2.0, 1.0), (0.0, 5.0), (4.0, 4.0)]).unwrap();
        assert_eq!(r.zero_baseline, 1);
        assert_eq!(r.percent_change, -25.0);
        assert!(PatchResult::from_examples(vec![(0.0, 1.0)]).is_err());
    }

    #[test]
    fn positions_parse() {
        assert_eq!("all".parse::<Positions>().unwrap(), Positions::All);
        assert_eq!("3, 7".parse::<Positions>().unwrap(), Positions::At(vec![3, 7]));
        assert_eq!("end,obj2".parse::<Positions>().unwrap(), Positions::Named(vec!["end".into(), "obj2".into()]));
        assert!("3,,4".parse::<Positions>().is_err());
    }

    #[test]
    fn receivers_parse() {
        assert_eq!("logits".parse::<Receivers>().unwrap(), Receivers::Logits);
        assert_eq!(
            "q:15.14, 16.15".parse::<Receivers>().unwrap(),
            Receivers::head_inputs(Site::HeadQ, &[HeadRef::new(15, 14), HeadRef::new(16, 15)])
        );
        assert!("q".parse::<Receivers>().is_err());
        assert!("bogus:1.1".parse::<Receivers>().is_err());
    }
}
