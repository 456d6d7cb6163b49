// SPDX-License-Identifier: MIT OR Apache-2.0

//! Build circuits for two tasks from path-patching sweeps and measure how
//! many heads they share.

use std::collections::BTreeSet;

use circuit_probe::circuit::{overlap, CircuitGraph};
use circuit_probe::model::{HeadRef, Model};
use circuit_probe::patching::{sweep_heads, SweepConfig};
use circuit_probe::tasks::{DatasetSpec, Task};

fn load_model() -> circuit_probe::Result<Model> {
    match std::env::var_os("CIRCUIT_PROBE_MODEL_DIR") {
        Some(dir) => Model::load_dir(dir),
        None => Model::toy_gpt2(0),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model()?;
    let medium = model.config().n_layers == 24;
    let sample_n = if medium { 100 } else { 8 };
    let mut graphs = Vec::new();
    for task in [Task::Ioi, Task::ColoredObjects] {
        let dataset = DatasetSpec::new(task, sample_n, 0).generate(model.tokenizer()?)?;
        let grid = sweep_heads(&model, &dataset, &SweepConfig::to_logits(sample_n))?;
        graphs.push(CircuitGraph::new(task.to_string(), vec![grid])?);
    }
    let fraction = if medium { 0.02 } else { 0.25 };
    let report = overlap(&graphs[0], &graphs[1], fraction)?;
    let show = |v: &BTreeSet<HeadRef>| v.iter().map(HeadRef::to_string).collect::<Vec<_>>().join(" ");
    println!("top {:.0}% per stage", fraction * 100.0);
    println!("  ioi:             {}", show(&report.set_a));
    println!("  colored objects: {}", show(&report.set_b));
    println!("  shared:          {}", show(&report.shared));
    println!("overlap {:.3} of {} heads", report.overlap, report.union_size());
    Ok(())
}
