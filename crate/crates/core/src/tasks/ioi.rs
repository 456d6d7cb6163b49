// SPDX-License-Identifier: MIT OR Apache-2.0

//! Indirect-object identification prompts.
//!
//! Templates name two people, then repeat one of them (the subject `S`) as the
//! giver; the answer is the other name (the indirect object `IO`).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetSpec, PromptBuilder, PromptPair, Task};
use crate::error::{Error, Result};
use crate::model::Tokenizer;

/// Placeholders: `{A}` and `{B}` are the first two mentions, `{S}` the repeat.
pub const DEFAULT_TEMPLATES: [&str; 8] = [
    "Then, {A} and {B} had a lot of fun at the school. {S} gave a ring to",
    "When {A} and {B} went to the store, {S} gave a drink to",
    "Then, {A} and {B} went to the park. {S} gave a ball to",
    "After {A} and {B} went to the restaurant, {S} handed a menu to",
    "While {A} and {B} were working at the office, {S} gave a report to",
    "Friends {A} and {B} found a bottle at the beach. {S} passed it to",
    "When {A} and {B} arrived at the hospital, {S} gave a flower to",
    "Then, {A} and {B} were cleaning the kitchen. {S} handed a plate to",
];

pub const DEFAULT_NAMES: [&str; 50] = [
    "Matthew",
    "Robert",
    "Mary",
    "John",
    "Michael",
    "David",
    "James",
    "William",
    "Richard",
    "Thomas",
    "Daniel",
    "Paul",
    "Mark",
    "Steven",
    "Andrew",
    "Kevin",
    "Brian",
    "George",
    "Edward",
    "Jason",
    "Jeff",
    "Ryan",
    "Gary",
    "Eric",
    "Stephen",
    "Jacob",
    "Frank",
    "Scott",
    "Justin",
    "Peter",
    "Patrick",
    "Jack",
    "Dennis",
    "Sarah",
    "Lisa",
    "Nancy",
    "Karen",
    "Betty",
    "Helen",
    "Sandra",
    "Laura",
    "Kate",
    "Anna",
    "Emma",
    "Grace",
    "Rose",
    "Alice",
    "Jennifer",
    "Elizabeth",
    "Susan",
];

enum Piece<'a> {
    Text(&'a str),
    Slot(char),
}

/// Splits a template into literal text and `{A}`/`{B}`/`{S}` slots. The space
/// before each slot moves into the name token.
fn parse_template(template: &str) -> Result<Vec<Piece<'_>>> {
    let bad = |why: &str| Error::Dataset(format!("template {template:?}: {why}"));
    let mut pieces = Vec::new();
    let mut rest = template;
    let mut seen = String::new();
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').ok_or_else(|| bad("unclosed `{`"))? + open;
        let slot = &rest[open + 1..close];
        let name = match slot {
            "A" | "B" | "S" => slot.chars().next().unwrap(),
            other => return Err(bad(&format!("unknown slot `{other}`"))),
        };
        let before = rest[..open].strip_suffix(' ').ok_or_else(|| bad("each slot must follow a space"))?;
        if !before.is_empty() {
            pieces.push(Piece::Text(before));
        }
        pieces.push(Piece::Slot(name));
        seen.push(name);
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    let mut order: Vec<char> = seen.chars().collect();
    order.sort_unstable();
    if order != ['A', 'B', 'S'] || !seen.ends_with('S') {
        return Err(bad("needs `{A}`, `{B}` and then `{S}`, each exactly once"));
    }
    if template.ends_with(' ') {
        return Err(bad("trailing space"));
    }
    Ok(pieces)
}

fn render(
    tokenizer: &Tokenizer,
    pieces: &[Piece<'_>],
    first: &str,
    second: &str,
    repeated: &str,
    io_first: bool,
) -> Result<(crate::model::TokenSequence, std::collections::BTreeMap<String, usize>)> {
    let (first_label, second_label) = if io_first { ("IO", "S1") } else { ("S1", "IO") };
    let mut builder = PromptBuilder::new(tokenizer);
    for piece in pieces {
        match piece {
            Piece::Text(t) => {
                builder.push(t);
            }
            Piece::Slot('A') => {
                builder.mark(first_label, &format!(" {first}"))?;
            }
            Piece::Slot('B') => {
                builder.mark(second_label, &format!(" {second}"))?;
            }
            Piece::Slot(_) => {
                builder.mark("S2", &format!(" {repeated}"))?;
            }
        }
    }
    builder.finish()
}

/// One IOI pair from an explicit template and names.
///
/// `x_new` repeats `io` instead of `s`, which flips the expected answer.
pub fn ioi_pair(tokenizer: &Tokenizer, template: &str, io: &str, s: &str, io_first: bool) -> Result<PromptPair> {
    let pieces = parse_template(template)?;
    let (first, second) = if io_first { (io, s) } else { (s, io) };
    let (x_original, annotations) = render(tokenizer, &pieces, first, second, s, io_first)?;
    let (x_new, _) = render(tokenizer, &pieces, first, second, io, io_first)?;
    let pair = PromptPair {
        task: Task::Ioi,
        x_original,
        x_new,
        y_original: tokenizer.single_token(&format!(" {io}"))?,
        y_new: tokenizer.single_token(&format!(" {s}"))?,
        annotations,
        distractor_answers: vec![tokenizer.single_token(&format!(" {s}"))?],
    };
    pair.validate()?;
    Ok(pair)
}

/// Generates `spec.n_examples` IOI pairs, half with the indirect object named
/// first and half with the subject first.
pub fn gen_ioi(spec: &DatasetSpec, tokenizer: &Tokenizer) -> Result<Vec<PromptPair>> {
    if spec.n_examples == 0 {
        return Err(Error::Dataset("n_examples must be positive".into()));
    }
    let templates: Vec<&str> = if spec.template_bank.is_empty() {
        DEFAULT_TEMPLATES.to_vec()
    } else {
        spec.template_bank.iter().map(String::as_str).collect()
    };
    for t in &templates {
        parse_template(t)?;
    }
    for name in DEFAULT_NAMES {
        tokenizer.single_token(&format!(" {name}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut orders: Vec<bool> = (0..spec.n_examples).map(|i| i % 2 == 0).collect();
    orders.shuffle(&mut rng);
    orders
        .into_iter()
        .map(|io_first| {
            let template = templates.choose(&mut rng).expect("nonempty bank");
            let names: Vec<&&str> = DEFAULT_NAMES.choose_multiple(&mut rng, 2).collect();
            ioi_pair(tokenizer, template, names[0], names[1], io_first)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_parse() {
        for t in DEFAULT_TEMPLATES {
            parse_template(t).unwrap();
        }
        assert!(parse_template("{A} and {B} then {S}").is_err());
        assert!(parse_template("Then, {A} and {B}. {A} gave it to").is_err());
        assert!(parse_template("Then, {A} and {B}. {S} gave it to ").is_err());
        assert!(parse_template("Then, {A} and {C}. {S} gave it to").is_err());
    }
}
