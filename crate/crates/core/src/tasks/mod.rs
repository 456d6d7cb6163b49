// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt-pair datasets for the IOI and Colored Objects tasks.

mod colored_objects;
mod io;
mod ioi;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaptureFilter, EditRule, Model, RunOptions, TokenSequence, Tokenizer};

pub use colored_objects::{colored_objects_pair, gen_colored_objects, render_prompt, Scene, COLORS, OBJECTS};
pub use io::{read_dataset, write_dataset, DatasetRecord};
pub use ioi::{gen_ioi, ioi_pair, DEFAULT_NAMES, DEFAULT_TEMPLATES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Ioi,
    ColoredObjects,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ioi" => Ok(Task::Ioi),
            "colored-objects" | "cobjs" => Ok(Task::ColoredObjects),
            _ => Err(Error::Dataset(format!("unknown task `{s}`"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Ioi => "ioi",
            Task::ColoredObjects => "colored-objects",
        })
    }
}

/// An original prompt and its counterfactual, with answer tokens and named
/// positions in `x_original`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub task: Task,
    pub x_original: TokenSequence,
    pub x_new: TokenSequence,
    pub y_original: u32,
    pub y_new: u32,
    pub annotations: BTreeMap<String, usize>,
    /// Wrong answers a well-formed prediction may still land on.
    pub distractor_answers: Vec<u32>,
}

impl PromptPair {
    pub fn position(&self, name: &str) -> Result<usize> {
        self.annotations.get(name).copied().ok_or_else(|| Error::MissingAnnotation(name.to_string()))
    }

    /// The prediction position `[end]`.
    pub fn end(&self) -> usize {
        self.x_original.len() - 1
    }

    /// Slot (0, 1 or 2) of the queried object in a Colored Objects test list.
    pub fn queried_slot(&self) -> Option<usize> {
        let answer = *self.annotations.get("answer_col")?;
        (1..=3).position(|k| self.annotations.get(&format!("col{k}")) == Some(&answer))
    }

    /// `y_original` plus every distractor.
    pub fn choices(&self) -> Vec<u32> {
        std::iter::once(self.y_original).chain(self.distractor_answers.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x_original.len();
        if n == 0 {
            return Err(Error::Dataset("empty prompt".into()));
        }
        if let Some((name, &idx)) = self.annotations.iter().find(|(_, &i)| i >= n) {
            return Err(Error::Dataset(format!("annotation `{name}` = {idx} outside prompt of {n} tokens")));
        }
        if self.y_original == self.y_new {
            return Err(Error::Dataset("y_original equals y_new".into()));
        }
        if self.task == Task::ColoredObjects && self.x_new.len() != n {
            return Err(Error::Dataset(format!("x_new has {} tokens, x_original has {n}", self.x_new.len())));
        }
        Ok(())
    }
}

/// Generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    pub n_examples: usize,
    pub seed: u64,
    /// IOI templates; empty selects the built-in bank.
    #[serde(default)]
    pub template_bank: Vec<String>,
}

impl DatasetSpec {
    pub fn new(task: Task, n_examples: usize, seed: u64) -> Self {
        Self { task, n_examples, seed, template_bank: Vec::new() }
    }

    pub fn generate(&self, tokenizer: &Tokenizer) -> Result<Vec<PromptPair>> {
        match self.task {
            Task::Ioi => gen_ioi(self, tokenizer),
            Task::ColoredObjects => gen_colored_objects(self, tokenizer),
        }
    }
}

/// A prompt assembled from pieces, some of which carry annotation names.
///
/// Each piece is encoded separately; the concatenation must equal the
/// encoding of the full text, which holds whenever pieces split at
/// pre-tokenizer boundaries (before a space or punctuation).
pub(crate) struct PromptBuilder<'t> {
    tokenizer: &'t Tokenizer,
    text: String,
    ids: Vec<u32>,
    annotations: BTreeMap<String, usize>,
}

impl<'t> PromptBuilder<'t> {
    pub(crate) fn new(tokenizer: &'t Tokenizer) -> Self {
        Self { tokenizer, text: String::new(), ids: Vec::new(), annotations: BTreeMap::new() }
    }

    pub(crate) fn push(&mut self, piece: &str) -> &mut Self {
        self.text.push_str(piece);
        self.ids.extend(self.tokenizer.encode(piece).ids);
        self
    }

    /// Appends a piece that must be a single token and records its position.
    pub(crate) fn mark(&mut self, name: &str, piece: &str) -> Result<&mut Self> {
        let id = self.tokenizer.single_token(piece)?;
        self.annotations.insert(name.to_string(), self.ids.len());
        self.text.push_str(piece);
        self.ids.push(id);
        Ok(self)
    }

    pub(crate) fn finish(mut self) -> Result<(TokenSequence, BTreeMap<String, usize>)> {
        let whole = self.tokenizer.encode(&self.text);
        if whole.ids != self.ids {
            return Err(Error::Dataset(format!(
                "piecewise tokenization disagrees with full encoding for {:?}",
                self.text
            )));
        }
        self.annotations.insert("end".into(), self.ids.len() - 1);
        Ok((whole, self.annotations))
    }
}

/// Accuracy of greedy next-token predictions at `[end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub in_choice_rate: f64,
    /// Accuracy split by queried slot; Colored Objects only.
    pub per_position_accuracy: Option<[f64; 3]>,
    pub predictions: Vec<u32>,
    pub n: usize,
}

impl EvalReport {
    pub fn correct(&self, dataset: &[PromptPair]) -> Vec<bool> {
        self.predictions.iter().zip(dataset).map(|(&p, pair)| p == pair.y_original).collect()
    }

    pub(crate) fn from_predictions(dataset: &[PromptPair], predictions: Vec<u32>) -> Self {
        let n = dataset.len();
        let hits = predictions.iter().zip(dataset).filter(|(&p, d)| p == d.y_original).count();
        let in_choice = predictions.iter().zip(dataset).filter(|(&p, d)| d.choices().contains(&p)).count();
        let mut slot_hits = [0usize; 3];
        let mut slot_total = [0usize; 3];
        let mut has_slots = false;
        for (p, d) in predictions.iter().zip(dataset) {
            if let Some(s) = d.queried_slot() {
                has_slots = true;
                slot_total[s] += 1;
                if *p == d.y_original {
                    slot_hits[s] += 1;
                }
            }
        }
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            accuracy: frac(hits, n),
            in_choice_rate: frac(in_choice, n),
            per_position_accuracy: has_slots.then(|| [0, 1, 2].map(|s| frac(slot_hits[s], slot_total[s]))),
            predictions,
            n,
        }
    }
}

/// Greedy accuracy on `x_original`; `restrict` limits the argmax to a token set.
pub fn eval_accuracy(model: &Model, dataset: &[PromptPair], restrict: Option<&[u32]>) -> Result<EvalReport> {
    eval_accuracy_with(model, dataset, restrict, |_| Ok(Vec::new()))
}

/// As [`eval_accuracy`], running each prompt with the edits `edits_for` returns.
pub fn eval_accuracy_with<F>(
    model: &Model,
    dataset: &[PromptPair],
    restrict: Option<&[u32]>,
    edits_for: F,
) -> Result<EvalReport>
where
    F: Fn(&PromptPair) -> Result<Vec<EditRule>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let opts = RunOptions::last(CaptureFilter::nothing());
    let predictions = dataset
        .par_iter()
        .map(|pair| {
            let edits = edits_for(pair)?;
            let (logits, _) = model.run(&pair.x_original, &edits, &opts)?;
            logits.argmax_at(pair.end(), restrict)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_predictions(dataset, predictions))
}
