// SPDX-License-Identifier: MIT OR Apache-2.0

//! Direct and cumulative logit attribution through a frozen final layer norm.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::mean;
use crate::error::{Error, Result};
use crate::model::{ActivationCache, CaptureFilter, ComponentRef, HeadRef, Logits, Model, RunOptions, Site, SiteKey};
use crate::tasks::PromptPair;

/// Which wrong answer a logit difference is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Contrast {
    /// `y_original - y_new`.
    #[default]
    Counterfactual,
    /// `y_original` minus the distractor the clean run scores highest.
    BestDistractor,
}

impl Contrast {
    pub fn answers(self, pair: &PromptPair, clean: &Logits) -> Result<(u32, u32)> {
        match self {
            Contrast::Counterfactual => Ok((pair.y_original, pair.y_new)),
            Contrast::BestDistractor => {
                let neg = clean.argmax_at(pair.end(), Some(&pair.distractor_answers))?;
                Ok((pair.y_original, neg))
            }
        }
    }
}

/// `unembed(y_pos) - unembed(y_neg)`.
pub fn answer_direction(model: &Model, y_pos: u32, y_neg: u32) -> Result<Array1<f32>> {
    Ok(&model.unembed_direction(y_pos)? - &model.unembed_direction(y_neg)?)
}

/// The final layer norm's divisor at `position`, taken from the last residual.
pub fn frozen_scale(model: &Model, cache: &ActivationCache, position: usize) -> Result<f32> {
    let last = SiteKey::new(Site::ResidPost, model.config().n_layers - 1, None);
    let resid = cache
        .row(&last, position)
        .ok_or_else(|| Error::InvalidComponent(format!("{} not in cache", last.at(position))))?;
    Ok(model.final_ln_scale(resid))
}

/// What `component` adds to the residual stream at `position` (for
/// residual sites, the whole stream so far).
pub fn residual_write(
    model: &Model,
    cache: &ActivationCache,
    component: &ComponentRef,
    position: usize,
) -> Result<Array1<f32>> {
    let missing = || Error::InvalidComponent(format!("{component} not in cache"));
    match component.site {
        Site::HeadZ => {
            let head = component.head.ok_or_else(missing)?;
            let z = cache.row(&component.key(), position).ok_or_else(missing)?;
            let w_o = model.weights().layers[component.layer].head_out(head, model.config().d_head);
            Ok(z.dot(&w_o))
        }
        Site::Embed | Site::AttnOut | Site::MlpOut | Site::ResidPre | Site::ResidMid | Site::ResidPost => {
            Ok(cache.row(&component.key(), position).ok_or_else(missing)?.to_owned())
        }
        _ => Err(Error::InvalidComponent(format!("{component} does not write to the residual stream"))),
    }
}

/// Logit-difference contribution of an arbitrary residual write.
fn project(model: &Model, write: ArrayView1<'_, f32>, scale: f32, direction: &Array1<f32>) -> f32 {
    model.fold_final_ln(write, scale).dot(direction)
}

/// Contribution of the final layer norm's bias, which no component owns.
pub fn final_bias_attribution(model: &Model, y_pos: u32, y_neg: u32) -> Result<f32> {
    Ok(model.weights().lnf_b.dot(&answer_direction(model, y_pos, y_neg)?))
}

/// Projection of `component`'s write at `[end]` (or its own position, if set)
/// onto `unembed(y_pos) - unembed(y_neg)`, folding the final layer norm with
/// the scale frozen from the full residual.
pub fn direct_logit_attribution(
    model: &Model,
    cache: &ActivationCache,
    component: &ComponentRef,
    y_pos: u32,
    y_neg: u32,
) -> Result<f32> {
    let position = component.position.unwrap_or(cache.token_count() - 1);
    let scale = frozen_scale(model, cache, position)?;
    let write = residual_write(model, cache, component, position)?;
    Ok(project(model, write.view(), scale, &answer_direction(model, y_pos, y_neg)?))
}

/// DLA of every head at `[end]`.
pub fn head_attributions(
    model: &Model,
    cache: &ActivationCache,
    y_pos: u32,
    y_neg: u32,
) -> Result<Vec<(HeadRef, f32)>> {
    let end = cache.token_count() - 1;
    let scale = frozen_scale(model, cache, end)?;
    let dir = answer_direction(model, y_pos, y_neg)?;
    HeadRef::all(model.config())
        .map(|h| {
            let write = residual_write(model, cache, &h.site(Site::HeadZ), end)?;
            Ok((h, project(model, write.view(), scale, &dir)))
        })
        .collect()
}

/// One labelled term of the residual decomposition at `[end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub label: String,
    pub value: f32,
}

/// Splits the logit difference at `[end]` into embedding, every head, each
/// layer's attention bias, every MLP and the final bias. The terms sum to
/// the logit difference.
pub fn decompose(model: &Model, cache: &ActivationCache, y_pos: u32, y_neg: u32) -> Result<Vec<Attribution>> {
    let cfg = model.config();
    let end = cache.token_count() - 1;
    let scale = frozen_scale(model, cache, end)?;
    let dir = answer_direction(model, y_pos, y_neg)?;
    let term =
        |label: String, write: ArrayView1<'_, f32>| Attribution { label, value: project(model, write, scale, &dir) };
    let mut out = vec![term("embed".into(), residual_write(model, cache, &ComponentRef::embed(), end)?.view())];
    for l in 0..cfg.n_layers {
        for h in 0..cfg.n_heads {
            let w = residual_write(model, cache, &ComponentRef::head(Site::HeadZ, l, h), end)?;
            out.push(term(HeadRef::new(l, h).to_string(), w.view()));
        }
        out.push(term(format!("attn-bias {l}"), model.weights().layers[l].b_o.view()));
        let mlp = residual_write(model, cache, &ComponentRef::layer_site(Site::MlpOut, l), end)?;
        out.push(term(format!("mlp {l}"), mlp.view()));
    }
    out.push(Attribution { label: "final-bias".into(), value: final_bias_attribution(model, y_pos, y_neg)? });
    Ok(out)
}

/// Running logit difference after the embedding and after every attention
/// and MLP sublayer: `2 * n_layers + 1` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    pub labels: Vec<String>,
    pub per_example: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

pub fn cumulative_points(model: &Model, cache: &ActivationCache, y_pos: u32, y_neg: u32) -> Result<Vec<f64>> {
    let cfg = model.config();
    let end = cache.token_count() - 1;
    let scale = frozen_scale(model, cache, end)?;
    let dir = answer_direction(model, y_pos, y_neg)?;
    let bias = final_bias_attribution(model, y_pos, y_neg)?;
    let mut keys = vec![SiteKey::new(Site::ResidPre, 0, None)];
    for l in 0..cfg.n_layers {
        keys.push(SiteKey::new(Site::ResidMid, l, None));
        keys.push(SiteKey::new(Site::ResidPost, l, None));
    }
    keys.iter()
        .map(|k| {
            let resid =
                cache.row(k, end).ok_or_else(|| Error::InvalidComponent(format!("{} not in cache", k.at(end))))?;
            Ok((project(model, resid, scale, &dir) + bias) as f64)
        })
        .collect()
}

pub fn cumulative_labels(n_layers: usize) -> Vec<String> {
    let mut labels = vec!["embed".to_string()];
    for l in 0..n_layers {
        labels.push(format!("attn {l}"));
        labels.push(format!("mlp {l}"));
    }
    labels
}

pub fn cumulative_logit_attribution(
    model: &Model,
    dataset: &[PromptPair],
    contrast: Contrast,
) -> Result<CumulativeCurve> {
    cumulative_logit_attribution_with(model, dataset, contrast, |_| Ok(Vec::new()))
}

/// As [`cumulative_logit_attribution`], running each prompt with edits.
pub fn cumulative_logit_attribution_with<F>(
    model: &Model,
    dataset: &[PromptPair],
    contrast: Contrast,
    edits_for: F,
) -> Result<CumulativeCurve>
where
    F: Fn(&PromptPair) -> Result<Vec<crate::model::EditRule>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let capture = CaptureFilter::kinds([Site::ResidPre, Site::ResidMid, Site::ResidPost]);
    let per_example = dataset
        .par_iter()
        .map(|pair| {
            let (clean, _) = model.run(&pair.x_original, &[], &RunOptions::last(CaptureFilter::nothing()))?;
            let (y_pos, y_neg) = contrast.answers(pair, &clean)?;
            let (_, cache) = model.run(&pair.x_original, &edits_for(pair)?, &RunOptions::last(capture.clone()))?;
            cumulative_points(model, &cache, y_pos, y_neg)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_points = per_example[0].len();
    let mean = (0..n_points).map(|i| mean(&per_example.iter().map(|p| p[i]).collect::<Vec<_>>())).collect();
    Ok(CumulativeCurve { labels: cumulative_labels(model.config().n_layers), per_example, mean })
}
