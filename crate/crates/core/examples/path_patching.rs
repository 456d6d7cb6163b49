// SPDX-License-Identifier: MIT OR Apache-2.0

//! Path-patch single heads, then sweep every head towards the logits and
//! towards the queries of downstream heads.

use circuit_probe::model::{HeadRef, Model, Site};
use circuit_probe::patching::{path_patch_dataset, sweep_heads, PatchSpec, Positions, Receivers, SweepConfig};
use circuit_probe::tasks::{DatasetSpec, Task};

fn load_model() -> circuit_probe::Result<Model> {
    match std::env::var_os("CIRCUIT_PROBE_MODEL_DIR") {
        Some(dir) => Model::load_dir(dir),
        None => Model::toy_gpt2(0),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model()?;
    let cfg = model.config().clone();
    let medium = cfg.n_layers == 24 && cfg.n_heads == 16;
    let sample_n = if medium { 50 } else { 8 };
    let dataset = DatasetSpec::new(Task::ColoredObjects, sample_n, 0).generate(model.tokenizer()?)?;

    let probe = if medium { HeadRef::new(19, 1) } else { HeadRef::new(cfg.n_layers - 1, 1) };
    let spec = PatchSpec::heads(&[probe], Receivers::Logits).at(Positions::end());
    let one = path_patch_dataset(&model, &dataset, &spec)?;
    println!(
        "{probe} -> logits: baseline {:.3}, patched {:.3}, {:+.2}%",
        one.baseline_ld, one.patched_ld, one.percent_change
    );

    let to_logits = sweep_heads(&model, &dataset, &SweepConfig::to_logits(sample_n))?;
    println!("\nmost important heads towards the logits:");
    for (head, score) in to_logits.ranked().into_iter().take(5) {
        println!("  {head:>6}  {score:+8.2}%");
    }

    let movers: Vec<HeadRef> = if medium {
        ["15.14", "16.15", "17.4", "18.5", "19.15"].iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    } else {
        vec![HeadRef::new(cfg.n_layers - 1, 1), HeadRef::new(cfg.n_layers - 1, 2)]
    };
    let to_queries = sweep_heads(
        &model,
        &dataset,
        &SweepConfig {
            receivers: Receivers::head_inputs(Site::HeadQ, &movers),
            sender_positions: Positions::end(),
            receiver_positions: Positions::end(),
            sample_n,
            stage_label: "to-mover-queries".into(),
        },
    )?;
    println!("\nmost important heads towards the mover queries:");
    for (head, score) in to_queries.ranked().into_iter().take(5) {
        println!("  {head:>6}  {score:+8.2}%");
    }
    Ok(())
}
