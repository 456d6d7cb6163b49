// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decompose the logit difference into per-component terms and trace it
//! cumulatively through the residual stream.

use circuit_probe::analysis::{cumulative_logit_attribution, decompose, Contrast};
use circuit_probe::model::Model;
use circuit_probe::tasks::{DatasetSpec, Task};

fn load_model() -> circuit_probe::Result<Model> {
    match std::env::var_os("CIRCUIT_PROBE_MODEL_DIR") {
        Some(dir) => Model::load_dir(dir),
        None => Model::toy_gpt2(0),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model()?;
    let dataset = DatasetSpec::new(Task::Ioi, 20, 5).generate(model.tokenizer()?)?;
    let pair = &dataset[0];

    let (logits, cache) = model.run_with_cache(&pair.x_original)?;
    let actual = logits.last()[pair.y_original as usize] - logits.last()[pair.y_new as usize];
    let mut terms = decompose(&model, &cache, pair.y_original, pair.y_new)?;
    let total: f32 = terms.iter().map(|t| t.value).sum();
    println!("logit difference {actual:.4}, sum of {} terms {total:.4}", terms.len());
    terms.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
    for t in terms.iter().take(6) {
        println!("  {:>14} {:+.4}", t.label, t.value);
    }

    let curve = cumulative_logit_attribution(&model, &dataset, Contrast::Counterfactual)?;
    println!("\nmean cumulative logit difference over {} prompts:", dataset.len());
    for (label, v) in curve.labels.iter().zip(&curve.mean) {
        println!("  {label:>8} {v:+.4}");
    }
    Ok(())
}
