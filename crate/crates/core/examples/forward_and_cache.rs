// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run a prompt, inspect cached activations and evaluate task accuracy.
//!
//! Uses the weights in `CIRCUIT_PROBE_MODEL_DIR` when set, otherwise a
//! randomly initialised toy model.

use circuit_probe::model::{HeadRef, Model, Site, SiteKey};
use circuit_probe::tasks::{eval_accuracy, DatasetSpec, Task};

fn load_model() -> circuit_probe::Result<Model> {
    match std::env::var_os("CIRCUIT_PROBE_MODEL_DIR") {
        Some(dir) => Model::load_dir(dir),
        None => Model::toy_gpt2(0),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model()?;
    let cfg = model.config();
    println!("{} layers x {} heads, d_model {}", cfg.n_layers, cfg.n_heads, cfg.d_model);

    let tokens = model.encode("When Mary and John went to the store, John gave a drink to")?;
    let (logits, cache) = model.run_with_cache(&tokens)?;
    let next = logits.argmax_at(logits.last_position(), None)?;
    println!("prompt: {:?}", tokens.text);
    println!("greedy next token: {:?}", model.decode(&[next])?);
    println!("cached sites: {}", cache.len());

    let head = HeadRef::new(cfg.n_layers - 1, 0);
    let pattern = cache.pattern(head.layer, head.head).expect("full cache");
    let end = tokens.len() - 1;
    let top =
        pattern.row(end).iter().enumerate().fold((0, f32::MIN), |best, (i, &w)| if w > best.1 { (i, w) } else { best });
    println!(
        "head {head} attends most from the last token to {:?} ({:.3})",
        model.decode(&tokens.ids[top.0..=top.0])?,
        top.1
    );
    let resid = cache.site(&SiteKey::new(Site::ResidPost, cfg.n_layers - 1, None)).expect("full cache");
    println!("final residual shape: {:?}", resid.dim());

    let dataset = DatasetSpec::new(Task::ColoredObjects, 40, 1).generate(model.tokenizer()?)?;
    let free = eval_accuracy(&model, &dataset, None)?;
    println!("colored objects accuracy: {:.3} (in-choice {:.3})", free.accuracy, free.in_choice_rate);
    if let Some(by_slot) = free.per_position_accuracy {
        println!("accuracy by queried slot: {by_slot:?}");
    }
    Ok(())
}
