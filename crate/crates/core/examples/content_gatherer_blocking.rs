// SPDX-License-Identifier: MIT OR Apache-2.0

//! Block content gatherer heads from reading the second object or the
//! question's color word and report the accuracy after each block.

use circuit_probe::intervention::{block_content_gatherers_with, BlockTarget, CONTENT_GATHERERS};
use circuit_probe::model::{HeadRef, Model};
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
    let heads: Vec<HeadRef> =
        if medium { CONTENT_GATHERERS.to_vec() } else { vec![HeadRef::new(1, 1), HeadRef::new(2, 2)] };
    let n = if medium { 1000 } else { 30 };
    let dataset = DatasetSpec::new(Task::ColoredObjects, n, 2).generate(model.tokenizer()?)?;
    for target in [BlockTarget::None, BlockTarget::Obj2, BlockTarget::ColorWord, BlockTarget::Both] {
        let acc = block_content_gatherers_with(&model, &dataset, target, &heads)?;
        println!("block {target:?}: accuracy {acc:.3}");
    }
    Ok(())
}
