// SPDX-License-Identifier: MIT OR Apache-2.0

//! Where heads attend from a query position, and what they copy.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{mean, pearson};
use crate::error::{Error, Result};
use crate::model::{CaptureFilter, EditRule, HeadRef, Model, RunOptions, Site, SiteKey};
use crate::tasks::PromptPair;

/// A named set of key positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGroup {
    pub name: String,
    /// Annotation names; empty means "every position not in another group".
    pub annotations: Vec<String>,
}

impl TokenGroup {
    pub fn new(name: &str, annotations: &[&str]) -> Self {
        Self { name: name.to_string(), annotations: annotations.iter().map(|s| s.to_string()).collect() }
    }

    pub fn rest(name: &str) -> Self {
        Self::new(name, &[])
    }
}

/// Attention row of `head` at `from` for each pair, optionally under edits.
pub fn attention_rows<F>(
    model: &Model,
    dataset: &[PromptPair],
    head: HeadRef,
    from: &str,
    edits_for: F,
) -> Result<Vec<Array1<f32>>>
where
    F: Fn(&PromptPair) -> Result<Vec<EditRule>> + Sync,
{
    head.validate(model.config())?;
    let key = SiteKey::head(Site::HeadPattern, head.layer, head.head);
    dataset
        .par_iter()
        .map(|pair| {
            let q = pair.position(from)?;
            let (_, cache) =
                model.run(&pair.x_original, &edits_for(pair)?, &RunOptions::last(CaptureFilter::keys([key])))?;
            Ok(cache.row(&key, q).expect("captured").to_owned())
        })
        .collect()
}

fn group_mass(pair: &PromptPair, row: &Array1<f32>, groups: &[TokenGroup]) -> Result<Vec<f64>> {
    let mut claimed = BTreeSet::new();
    let mut named: Vec<Option<BTreeSet<usize>>> = Vec::with_capacity(groups.len());
    for g in groups {
        if g.annotations.is_empty() {
            named.push(None);
            continue;
        }
        let set: BTreeSet<usize> = g.annotations.iter().map(|a| pair.position(a)).collect::<Result<_>>()?;
        claimed.extend(set.iter().copied());
        named.push(Some(set));
    }
    Ok(named
        .iter()
        .map(|set| match set {
            Some(set) => set.iter().map(|&p| row[p] as f64).sum(),
            None => (0..row.len()).filter(|p| !claimed.contains(p)).map(|p| row[p] as f64).sum(),
        })
        .collect())
}

/// Mean attention mass from `from` into each group.
pub fn attention_stats(
    model: &Model,
    dataset: &[PromptPair],
    head: HeadRef,
    from: &str,
    groups: &[TokenGroup],
) -> Result<BTreeMap<String, f64>> {
    if dataset.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let names: BTreeSet<&str> = groups.iter().map(|g| g.name.as_str()).collect();
    if names.len() != groups.len() {
        return Err(Error::Dataset("token group names must be unique".into()));
    }
    let rows = attention_rows(model, dataset, head, from, |_| Ok(Vec::new()))?;
    let masses =
        dataset.iter().zip(&rows).map(|(pair, row)| group_mass(pair, row, groups)).collect::<Result<Vec<_>>>()?;
    Ok(groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.name.clone(), mean(&masses.iter().map(|m| m[i]).collect::<Vec<_>>())))
        .collect())
}

/// Mean attention from `from` to every position; prompts must share a length.
pub fn attention_profile(model: &Model, dataset: &[PromptPair], head: HeadRef, from: &str) -> Result<Vec<f64>> {
    let n = dataset.first().map(|p| p.x_original.len()).ok_or_else(|| Error::Dataset("empty dataset".into()))?;
    if dataset.iter().any(|p| p.x_original.len() != n) {
        return Err(Error::Dataset("attention profile needs equal-length prompts".into()));
    }
    let rows = attention_rows(model, dataset, head, from, |_| Ok(Vec::new()))?;
    Ok((0..n).map(|p| mean(&rows.iter().map(|r| r[p] as f64).collect::<Vec<_>>())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyPoint {
    pub attention: f64,
    pub projection: f64,
    /// Decoded token attended to, e.g. `blue`.
    pub label: String,
    pub position_name: String,
}

/// Attention from `[end]` to selected tokens against how strongly the head's
/// output at `[end]` points along those tokens' unembedding directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyScatter {
    pub head: HeadRef,
    pub points: Vec<CopyPoint>,
}

impl CopyScatter {
    /// Pearson correlation between attention and projection; a summary of
    /// our own, since copying is otherwise only shown as a scatter.
    pub fn correlation(&self) -> Result<f64> {
        let xs: Vec<f64> = self.points.iter().map(|p| p.attention).collect();
        let ys: Vec<f64> = self.points.iter().map(|p| p.projection).collect();
        pearson(&xs, &ys)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("position,token,attention,projection\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.position_name, p.label, p.attention, p.projection));
        }
        out
    }
}

pub fn copy_scatter(model: &Model, dataset: &[PromptPair], head: HeadRef, positions: &[&str]) -> Result<CopyScatter> {
    head.validate(model.config())?;
    let pattern = SiteKey::head(Site::HeadPattern, head.layer, head.head);
    let z = SiteKey::head(Site::HeadZ, head.layer, head.head);
    let w_o = model.weights().layers[head.layer].head_out(head.head, model.config().d_head);
    let per_pair = dataset
        .par_iter()
        .map(|pair| {
            let end = pair.end();
            let (_, cache) = model.run(&pair.x_original, &[], &RunOptions::last(CaptureFilter::keys([pattern, z])))?;
            let write = cache.row(&z, end).expect("captured").dot(&w_o);
            let row = cache.row(&pattern, end).expect("captured");
            positions
                .iter()
                .map(|name| {
                    let p = pair.position(name)?;
                    let token = pair.x_original.ids[p];
                    let label = match model.tokenizer() {
                        Ok(t) => t.decode(&[token]).trim().to_string(),
                        Err(_) => token.to_string(),
                    };
                    Ok(CopyPoint {
                        attention: row[p] as f64,
                        projection: write.dot(&model.unembed_direction(token)?) as f64,
                        label,
                        position_name: name.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CopyScatter { head, points: per_pair.into_iter().flatten().collect() })
}
