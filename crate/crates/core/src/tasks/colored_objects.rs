// SPDX-License-Identifier: MIT OR Apache-2.0

//! One-shot "what color is the X?" prompts over three colored objects.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetSpec, PromptBuilder, PromptPair, Task};
use crate::error::{Error, Result};
use crate::model::Tokenizer;

pub const OBJECTS: [&str; 17] = [
    "pencil", "notebook", "pen", "cup", "plate", "jug", "mug", "puzzle", "textbook", "leash", "necklace", "bracelet",
    "bottle", "ball", "envelope", "lighter", "bowl",
];

pub const COLORS: [&str; 8] = ["orange", "red", "purple", "blue", "black", "yellow", "brown", "green"];

const MAX_REROLLS: usize = 100;

/// Three objects with their colors and the index of the one asked about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub objects: [&'static str; 3],
    pub colors: [&'static str; 3],
    pub queried: usize,
}

impl Scene {
    pub fn random(rng: &mut impl Rng, queried: usize) -> Self {
        let objects: Vec<&'static str> = OBJECTS.choose_multiple(rng, 3).copied().collect();
        let colors: Vec<&'static str> = COLORS.choose_multiple(rng, 3).copied().collect();
        Self { objects: [objects[0], objects[1], objects[2]], colors: [colors[0], colors[1], colors[2]], queried }
    }

    fn answer(&self) -> &'static str {
        self.colors[self.queried]
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        " an"
    } else {
        " a"
    }
}

/// Appends "Q: On the table, <intro> ... What color is the <obj>?\nA:".
/// Test-question positions are annotated when `annotate` is set.
fn push_question(b: &mut PromptBuilder<'_>, intro: &str, scene: &Scene, annotate: bool) -> Result<()> {
    b.push("Q: On the table,");
    b.push(&format!(" {intro}"));
    for k in 0..3 {
        match k {
            0 => {}
            1 => {
                b.push(",");
            }
            _ => {
                b.push(", and");
            }
        }
        b.push(article(scene.colors[k]));
        let color = format!(" {}", scene.colors[k]);
        let object = format!(" {}", scene.objects[k]);
        if annotate {
            b.mark(&format!("col{}", k + 1), &color)?;
            if k == scene.queried {
                b.mark("obj1", &object)?;
            } else {
                b.mark(&format!("list_obj{}", k + 1), &object)?;
            }
        } else {
            b.push(&color);
            b.push(&object);
        }
    }
    b.push(". What");
    let question_object = format!(" {}", scene.objects[scene.queried]);
    if annotate {
        b.mark("question_color_word", " color")?;
        b.push(" is the");
        b.mark("obj2", &question_object)?;
    } else {
        b.push(" color is the");
        b.push(&question_object);
    }
    b.push("?\nA:");
    Ok(())
}

/// Renders the in-context example followed by the test question.
pub fn render_prompt(
    tokenizer: &Tokenizer,
    example: &Scene,
    test: &Scene,
) -> Result<(crate::model::TokenSequence, std::collections::BTreeMap<String, usize>)> {
    let mut b = PromptBuilder::new(tokenizer);
    push_question(&mut b, "I see", example, false)?;
    b.mark("ic_label", &format!(" {}", capitalize(example.answer())))?;
    b.push("\n");
    push_question(&mut b, "there is", test, true)?;
    b.finish()
}

/// A pair whose counterfactual asks about the object in slot `new_queried`.
pub fn colored_objects_pair(
    tokenizer: &Tokenizer,
    example: &Scene,
    test: &Scene,
    new_queried: usize,
) -> Result<PromptPair> {
    if new_queried == test.queried || new_queried > 2 || test.queried > 2 {
        return Err(Error::Dataset(format!(
            "counterfactual slot {new_queried} must differ from queried slot {}",
            test.queried
        )));
    }
    let (x_original, mut annotations) = render_prompt(tokenizer, example, test)?;
    let counter = Scene { queried: new_queried, ..test.clone() };
    let (x_new, _) = render_prompt(tokenizer, example, &counter)?;

    let answer = |c: &str| tokenizer.single_token(&format!(" {}", capitalize(c)));
    let wrong: Vec<usize> = (0..3).filter(|&k| k != test.queried).collect();
    annotations.insert("answer_col".into(), annotations[&format!("col{}", test.queried + 1)]);
    for (i, &k) in wrong.iter().enumerate() {
        annotations.insert(format!("wrong_col{}", i + 1), annotations[&format!("col{}", k + 1)]);
    }
    let pair = PromptPair {
        task: Task::ColoredObjects,
        x_original,
        x_new,
        y_original: answer(test.answer())?,
        y_new: answer(counter.answer())?,
        annotations,
        distractor_answers: wrong.iter().map(|&k| answer(test.colors[k])).collect::<Result<_>>()?,
    };
    pair.validate()?;
    Ok(pair)
}

/// Generates `spec.n_examples` pairs with the queried slot balanced across
/// the three positions and every prompt the same token length.
pub fn gen_colored_objects(spec: &DatasetSpec, tokenizer: &Tokenizer) -> Result<Vec<PromptPair>> {
    if spec.n_examples == 0 {
        return Err(Error::Dataset("n_examples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut slots: Vec<usize> = (0..spec.n_examples).map(|i| i % 3).collect();
    slots.shuffle(&mut rng);

    let mut pairs: Vec<PromptPair> = Vec::with_capacity(spec.n_examples);
    for queried in slots {
        let mut attempt = 0;
        let pair = loop {
            let example_slot = rng.gen_range(0..3);
            let example = Scene::random(&mut rng, example_slot);
            let test = Scene::random(&mut rng, queried);
            let others: Vec<usize> = (0..3).filter(|&k| k != queried).collect();
            let new_queried = *others.choose(&mut rng).expect("two other slots");
            let pair = colored_objects_pair(tokenizer, &example, &test, new_queried)?;
            let expected = pairs.first().map(|p| p.x_original.len());
            if expected.is_none_or(|n| n == pair.x_original.len()) {
                break pair;
            }
            attempt += 1;
            if attempt == MAX_REROLLS {
                return Err(Error::Dataset(format!(
                    "could not draw a prompt of {} tokens in {MAX_REROLLS} attempts",
                    expected.unwrap_or(0)
                )));
            }
        };
        pairs.push(pair);
    }
    Ok(pairs)
}
