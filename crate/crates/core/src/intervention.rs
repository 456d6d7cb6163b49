// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention forcing, blocking and zero-ablation, the Colored Objects repair
//! experiment, and content-gatherer blocking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::stats::{mean, spearman, standard_error};
use crate::analysis::{head_attributions, Contrast};
use crate::error::{Error, Result};
use crate::model::{
    ActivationCache, CaptureFilter, EditRule, HeadRef, Logits, Model, ModelConfig, RunOptions, Site, SiteKey,
};
use crate::patching::ImportanceMatrix;
use crate::tasks::{eval_accuracy_with, PromptPair};

const SUM_TOLERANCE: f64 = 1e-6;

/// Overwrite a head's attention row at `from` with `targets` (position
/// name to weight); every other key gets 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedAttention {
    pub head: HeadRef,
    pub from: String,
    pub targets: BTreeMap<String, f64>,
}

/// Zero a head's attention from `from` to `positions`, then renormalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedAttention {
    pub head: HeadRef,
    pub from: String,
    pub positions: Vec<String>,
}

/// Attention edits addressed by annotation name, resolved per prompt.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    #[serde(default)]
    pub forced: Vec<ForcedAttention>,
    #[serde(default)]
    pub blocked: Vec<BlockedAttention>,
    #[serde(default)]
    pub zeroed: Vec<HeadRef>,
}

impl InterventionSpec {
    pub fn is_empty(&self) -> bool {
        self.forced.is_empty() && self.blocked.is_empty() && self.zeroed.is_empty()
    }

    /// Every head forced from `from` with equal weight on each of `targets`.
    pub fn split_evenly(heads: &[HeadRef], from: &str, targets: &[&str]) -> Self {
        let w = 1.0 / targets.len() as f64;
        Self {
            forced: heads
                .iter()
                .map(|&head| ForcedAttention {
                    head,
                    from: from.to_string(),
                    targets: targets.iter().map(|t| (t.to_string(), w)).collect(),
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn block_from(heads: &[HeadRef], from: &str, positions: &[&str]) -> Self {
        Self {
            blocked: heads
                .iter()
                .map(|&head| BlockedAttention {
                    head,
                    from: from.to_string(),
                    positions: positions.iter().map(|p| p.to_string()).collect(),
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn merge(mut self, other: InterventionSpec) -> Self {
        self.forced.extend(other.forced);
        self.blocked.extend(other.blocked);
        self.zeroed.extend(other.zeroed);
        self
    }

    /// Heads whose computation the intervention changes.
    pub fn heads(&self) -> BTreeSet<HeadRef> {
        self.forced
            .iter()
            .map(|f| f.head)
            .chain(self.blocked.iter().map(|b| b.head))
            .chain(self.zeroed.iter().copied())
            .collect()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let invalid = Error::Intervention;
        for f in &self.forced {
            f.head.validate(cfg)?;
            if f.targets.is_empty() {
                return Err(invalid(format!("forced head {} has no targets", f.head)));
            }
            if let Some((name, w)) = f.targets.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
                return Err(invalid(format!("forced head {} has weight {w} on `{name}`", f.head)));
            }
            let total: f64 = f.targets.values().sum();
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(invalid(format!("forced head {} targets sum to {total}, not 1", f.head)));
            }
        }
        for b in &self.blocked {
            b.head.validate(cfg)?;
            if b.positions.is_empty() {
                return Err(invalid(format!("blocked head {} has no positions", b.head)));
            }
        }
        for h in &self.zeroed {
            h.validate(cfg)?;
        }
        Ok(())
    }

    /// Edit rules for one prompt, with names resolved through its annotations.
    pub fn edits(&self, pair: &PromptPair) -> Result<Vec<EditRule>> {
        let mut rules = Vec::with_capacity(self.forced.len() + self.blocked.len() + self.zeroed.len());
        for f in &self.forced {
            let mut weights: BTreeMap<usize, f64> = BTreeMap::new();
            for (name, w) in &f.targets {
                *weights.entry(pair.position(name)?).or_default() += w;
            }
            rules.push(EditRule::force(
                f.head,
                pair.position(&f.from)?,
                weights.into_iter().map(|(p, w)| (p, w as f32)).collect(),
            ));
        }
        for b in &self.blocked {
            let keys: BTreeSet<usize> = b.positions.iter().map(|p| pair.position(p)).collect::<Result<_>>()?;
            rules.push(EditRule::block(b.head, pair.position(&b.from)?, keys.into_iter().collect()));
        }
        for &h in &self.zeroed {
            rules.push(EditRule::zero(h.site(Site::HeadZ)));
        }
        Ok(rules)
    }
}

/// Full-cache forward pass on `x_original` under `spec`.
pub fn apply_intervention(
    model: &Model,
    pair: &PromptPair,
    spec: &InterventionSpec,
) -> Result<(Logits, ActivationCache)> {
    spec.validate(model.config())?;
    model.run_with_edits(&pair.x_original, &spec.edits(pair)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairVariant {
    Both,
    InhibitionOnly,
    NegativeMoverOnly,
}

impl RepairVariant {
    pub const ALL: [RepairVariant; 3] = [Self::Both, Self::InhibitionOnly, Self::NegativeMoverOnly];
}

impl fmt::Display for RepairVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Both => "both",
            Self::InhibitionOnly => "inhibition",
            Self::NegativeMoverOnly => "negmover",
        })
    }
}

impl FromStr for RepairVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "inhibition" | "inhibition-only" => Ok(Self::InhibitionOnly),
            "negmover" | "negative-mover" | "negative-mover-only" => Ok(Self::NegativeMoverOnly),
            other => Err(Error::Intervention(format!("unknown repair variant `{other}` (both, inhibition, negmover)"))),
        }
    }
}

fn score(grid: &ImportanceMatrix, head: HeadRef) -> Result<f64> {
    grid.get(head).ok_or_else(|| {
        let (l, h) = grid.scores.dim();
        Error::InvalidComponent(format!("head {head} outside {l}x{h} grid `{}`", grid.stage_label))
    })
}

/// Heads used by the repair experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub inhibition: Vec<HeadRef>,
    pub negative_movers: Vec<HeadRef>,
    /// Heads whose attention and attribution changes are measured.
    pub movers: Vec<HeadRef>,
    pub from: String,
    pub targets: Vec<String>,
    /// To-logits sweep for the attribution correlation; skipped when absent.
    pub to_logits: Option<ImportanceMatrix>,
    /// How the inhibition set was chosen, when it was resolved from a sweep.
    pub note: Option<String>,
}

impl RepairConfig {
    /// GPT2-Medium circuit heads for Colored Objects.
    pub fn gpt2_medium() -> Self {
        Self {
            inhibition: vec![HeadRef::new(12, 3), HeadRef::new(13, 4), HeadRef::new(13, 13)],
            negative_movers: vec![HeadRef::new(19, 1)],
            movers: [(15, 14), (16, 15), (17, 4), (18, 5), (19, 15)]
                .into_iter()
                .map(|(l, h)| HeadRef::new(l, h))
                .collect(),
            from: "end".into(),
            targets: vec!["wrong_col1".into(), "wrong_col2".into()],
            to_logits: None,
            note: None,
        }
    }

    /// Picks 13.13 or 13.14 as the third inhibition head, whichever lowers
    /// the mover-query logit difference more in `mover_query`.
    pub fn resolve_inhibition(mut self, mover_query: &ImportanceMatrix) -> Result<Self> {
        let (a, b) = (HeadRef::new(13, 13), HeadRef::new(13, 14));
        let (sa, sb) = (score(mover_query, a)?, score(mover_query, b)?);
        let chosen = if sb < sa { b } else { a };
        let other = if chosen == a { b } else { a };
        self.inhibition.retain(|h| *h != a && *h != b);
        self.inhibition.push(chosen);
        self.inhibition.sort();
        self.note = Some(format!(
            "third inhibition head {chosen} ({:.2}%) chosen over {other} ({:.2}%) on `{}`",
            score(mover_query, chosen)?,
            score(mover_query, other)?,
            mover_query.stage_label
        ));
        Ok(self)
    }

    pub fn spec(&self, variant: RepairVariant) -> InterventionSpec {
        let heads: Vec<HeadRef> = match variant {
            RepairVariant::Both => self.inhibition.iter().chain(&self.negative_movers).copied().collect(),
            RepairVariant::InhibitionOnly => self.inhibition.clone(),
            RepairVariant::NegativeMoverOnly => self.negative_movers.clone(),
        };
        let targets: Vec<&str> = self.targets.iter().map(String::as_str).collect();
        InterventionSpec::split_evenly(&heads, &self.from, &targets)
    }
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self::gpt2_medium()
    }
}

/// Change in a mover head's attention from `[end]`, after minus before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDelta {
    pub head: HeadRef,
    pub correct_color: f64,
    pub correct_color_se: f64,
    /// Summed over both wrong colors.
    pub wrong_color: f64,
    pub wrong_color_se: f64,
}

/// Change in a head's direct logit attribution, after minus before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionDelta {
    pub head: HeadRef,
    pub delta: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub variant: String,
    pub intervened: Vec<HeadRef>,
    pub n: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// Correct before, wrong after.
    pub new_mistakes: usize,
    /// Wrong before, correct after.
    pub fixed: usize,
    /// Size of the subset the deltas are averaged over.
    pub n_originally_correct: usize,
    pub per_head_attention_delta: Vec<AttentionDelta>,
    /// Every head in the model.
    pub per_head_attribution_delta: Vec<AttributionDelta>,
    /// Attribution delta against to-logits importance (the negated percent
    /// change), intervened heads excluded.
    pub spearman_rho: Option<f64>,
    pub spearman_p: Option<f64>,
    pub note: Option<String>,
}

impl InterventionReport {
    pub fn attention_delta(&self, head: HeadRef) -> Option<&AttentionDelta> {
        self.per_head_attention_delta.iter().find(|d| d.head == head)
    }

    pub fn attribution_delta(&self, head: HeadRef) -> Option<f64> {
        self.per_head_attribution_delta.iter().find(|d| d.head == head).map(|d| d.delta)
    }

    /// Mean over measured mover heads of `(correct, wrong)` attention deltas.
    pub fn mean_mover_attention_delta(&self) -> (f64, f64) {
        let c: Vec<f64> = self.per_head_attention_delta.iter().map(|d| d.correct_color).collect();
        let w: Vec<f64> = self.per_head_attention_delta.iter().map(|d| d.wrong_color).collect();
        (mean(&c), mean(&w))
    }
}

struct ExampleOutcome {
    correct_before: bool,
    correct_after: bool,
    /// Per mover: (correct before, correct after, wrong before, wrong after).
    attention: Vec<[f64; 4]>,
    /// Per head, after minus before.
    attribution: Vec<f64>,
}

fn measure_example(
    model: &Model,
    pair: &PromptPair,
    spec: &InterventionSpec,
    config: &RepairConfig,
    capture: &CaptureFilter,
) -> Result<ExampleOutcome> {
    let opts = RunOptions::last(capture.clone());
    let (before, cache_b) = model.run(&pair.x_original, &[], &opts)?;
    let (after, cache_a) = model.run(&pair.x_original, &spec.edits(pair)?, &opts)?;
    let end = pair.end();
    let (y_pos, y_neg) = Contrast::BestDistractor.answers(pair, &before)?;
    let correct = pair.position("answer_col")?;
    let wrong = config.targets.iter().map(|t| pair.position(t)).collect::<Result<Vec<_>>>()?;
    let attention = config
        .movers
        .iter()
        .map(|m| {
            let pb = cache_b.pattern(m.layer, m.head).expect("captured");
            let pa = cache_a.pattern(m.layer, m.head).expect("captured");
            let wrong_mass = |p: &ndarray::Array2<f32>| wrong.iter().map(|&w| p[(end, w)] as f64).sum::<f64>();
            [pb[(end, correct)] as f64, pa[(end, correct)] as f64, wrong_mass(pb), wrong_mass(pa)]
        })
        .collect();
    let ab = head_attributions(model, &cache_b, y_pos, y_neg)?;
    let aa = head_attributions(model, &cache_a, y_pos, y_neg)?;
    Ok(ExampleOutcome {
        correct_before: before.argmax_at(before.last_position(), None)? == pair.y_original,
        correct_after: after.argmax_at(after.last_position(), None)? == pair.y_original,
        attention,
        attribution: ab.iter().zip(&aa).map(|((_, b), (_, a))| (a - b) as f64).collect(),
    })
}

/// Forces the configured heads from `[end]` onto the two wrong colors at
/// 50/50 and measures accuracy and downstream changes, with the default
/// GPT2-Medium heads.
pub fn repair_experiment(model: &Model, dataset: &[PromptPair], variant: RepairVariant) -> Result<InterventionReport> {
    repair_experiment_with(model, dataset, variant, &RepairConfig::default())
}

pub fn repair_experiment_with(
    model: &Model,
    dataset: &[PromptPair],
    variant: RepairVariant,
    config: &RepairConfig,
) -> Result<InterventionReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot intervene on an empty dataset".into()));
    }
    let cfg = model.config();
    let spec = config.spec(variant);
    spec.validate(cfg)?;
    for m in &config.movers {
        m.validate(cfg)?;
    }
    let capture = CaptureFilter::kinds([Site::HeadZ])
        .with_keys([SiteKey::new(Site::ResidPost, cfg.n_layers - 1, None)])
        .with_keys(config.movers.iter().map(|m| SiteKey::head(Site::HeadPattern, m.layer, m.head)));
    let outcomes = dataset
        .par_iter()
        .map(|pair| measure_example(model, pair, &spec, config, &capture))
        .collect::<Result<Vec<_>>>()?;

    let n = outcomes.len();
    let frac = |k: usize| k as f64 / n as f64;
    let kept: Vec<&ExampleOutcome> = outcomes.iter().filter(|o| o.correct_before).collect();
    let summarize = |xs: Vec<f64>| (mean(&xs), if xs.len() > 1 { standard_error(&xs) } else { 0.0 });

    let per_head_attention_delta = config
        .movers
        .iter()
        .enumerate()
        .map(|(i, &head)| {
            let (correct_color, correct_color_se) =
                summarize(kept.iter().map(|o| o.attention[i][1] - o.attention[i][0]).collect());
            let (wrong_color, wrong_color_se) =
                summarize(kept.iter().map(|o| o.attention[i][3] - o.attention[i][2]).collect());
            AttentionDelta { head, correct_color, correct_color_se, wrong_color, wrong_color_se }
        })
        .collect();
    let per_head_attribution_delta: Vec<AttributionDelta> = HeadRef::all(cfg)
        .enumerate()
        .map(|(i, head)| {
            let (delta, se) = summarize(kept.iter().map(|o| o.attribution[i]).collect());
            AttributionDelta { head, delta, se }
        })
        .collect();

    let intervened = spec.heads();
    let (spearman_rho, spearman_p) = match (&config.to_logits, kept.is_empty()) {
        (Some(grid), false) => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for d in per_head_attribution_delta.iter().filter(|d| !intervened.contains(&d.head)) {
                xs.push(d.delta);
                ys.push(-score(grid, d.head)?);
            }
            let (rho, p) = spearman(&xs, &ys)?;
            (Some(rho), Some(p))
        }
        _ => (None, None),
    };

    Ok(InterventionReport {
        variant: variant.to_string(),
        intervened: intervened.into_iter().collect(),
        n,
        accuracy_before: frac(outcomes.iter().filter(|o| o.correct_before).count()),
        accuracy_after: frac(outcomes.iter().filter(|o| o.correct_after).count()),
        new_mistakes: outcomes.iter().filter(|o| o.correct_before && !o.correct_after).count(),
        fixed: outcomes.iter().filter(|o| !o.correct_before && o.correct_after).count(),
        n_originally_correct: kept.len(),
        per_head_attention_delta,
        per_head_attribution_delta,
        spearman_rho,
        spearman_p,
        note: config.note.clone(),
    })
}

/// Question tokens content-gatherer heads are blocked from reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockTarget {
    Obj2,
    ColorWord,
    Both,
    None,
}

impl BlockTarget {
    pub fn annotations(self) -> &'static [&'static str] {
        match self {
            Self::Obj2 => &["obj2"],
            Self::ColorWord => &["question_color_word"],
            Self::Both => &["obj2", "question_color_word"],
            Self::None => &[],
        }
    }
}

impl FromStr for BlockTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obj2" => Ok(Self::Obj2),
            "color-word" | "color" => Ok(Self::ColorWord),
            "both" => Ok(Self::Both),
            "none" => Ok(Self::None),
            other => Err(Error::Intervention(format!("unknown block target `{other}` (obj2, color-word, both, none)"))),
        }
    }
}

pub const CONTENT_GATHERERS: [HeadRef; 4] =
    [HeadRef::new(11, 6), HeadRef::new(11, 7), HeadRef::new(12, 15), HeadRef::new(13, 3)];

/// Accuracy with the default content gatherers blocked from `[end]`.
pub fn block_content_gatherers(model: &Model, dataset: &[PromptPair], targets: BlockTarget) -> Result<f64> {
    block_content_gatherers_with(model, dataset, targets, &CONTENT_GATHERERS)
}

pub fn block_content_gatherers_with(
    model: &Model,
    dataset: &[PromptPair],
    targets: BlockTarget,
    heads: &[HeadRef],
) -> Result<f64> {
    let spec = match targets {
        BlockTarget::None => InterventionSpec::default(),
        t => InterventionSpec::block_from(heads, "end", t.annotations()),
    };
    spec.validate(model.config())?;
    Ok(eval_accuracy_with(model, dataset, None, |pair| spec.edits(pair))?.accuracy)
}
