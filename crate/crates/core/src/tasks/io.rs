// SPDX-License-Identifier: MIT OR Apache-2.0

//! Line-delimited JSON dataset files.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PromptPair, Task};
use crate::error::{Error, Result};
use crate::model::Tokenizer;

/// One line of a dataset file. Answers are stored as decoded token text
/// (for example `" Blue"`) so files stay readable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub task: Task,
    pub text_original: String,
    pub text_new: String,
    pub answer: String,
    pub answer_new: String,
    pub distractors: Vec<String>,
    pub annotations: BTreeMap<String, usize>,
}

impl DatasetRecord {
    pub fn from_pair(pair: &PromptPair, tokenizer: &Tokenizer) -> Self {
        let text = |id: u32| tokenizer.decode(&[id]);
        Self {
            task: pair.task,
            text_original: pair.x_original.text.clone(),
            text_new: pair.x_new.text.clone(),
            answer: text(pair.y_original),
            answer_new: text(pair.y_new),
            distractors: pair.distractor_answers.iter().map(|&d| text(d)).collect(),
            annotations: pair.annotations.clone(),
        }
    }

    pub fn into_pair(self, tokenizer: &Tokenizer) -> Result<PromptPair> {
        let pair = PromptPair {
            task: self.task,
            x_original: tokenizer.encode(&self.text_original),
            x_new: tokenizer.encode(&self.text_new),
            y_original: tokenizer.single_token(&self.answer)?,
            y_new: tokenizer.single_token(&self.answer_new)?,
            annotations: self.annotations,
            distractor_answers: self.distractors.iter().map(|d| tokenizer.single_token(d)).collect::<Result<_>>()?,
        };
        pair.validate()?;
        Ok(pair)
    }
}

pub fn write_dataset(path: impl AsRef<Path>, pairs: &[PromptPair], tokenizer: &Tokenizer) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in pairs {
        let line = serde_json::to_string(&DatasetRecord::from_pair(pair, tokenizer))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>, tokenizer: &Tokenizer) -> Result<Vec<PromptPair>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        pairs.push(
            record
                .into_pair(tokenizer)
                .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1)))?,
        );
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("{} holds no records", path.display())));
    }
    Ok(pairs)
}
