// SPDX-License-Identifier: MIT OR Apache-2.0

//! Score every head for duplicate-token and induction behaviour on
//! repeated random token sequences.

use circuit_probe::analysis::detect_heads;
use circuit_probe::model::{HeadRef, Model};

fn load_model() -> circuit_probe::Result<Model> {
    match std::env::var_os("CIRCUIT_PROBE_MODEL_DIR") {
        Some(dir) => Model::load_dir(dir),
        None => Model::toy_gpt2(0),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model()?;
    let cfg = model.config().clone();
    let scores = detect_heads(&model, 0, 50, 64)?;
    for (name, grid) in [("duplicate", &scores.duplicate), ("induction", &scores.induction)] {
        let mut heads: Vec<(HeadRef, f64)> = HeadRef::all(&cfg).map(|h| (h, grid[(h.layer, h.head)])).collect();
        heads.sort_by(|a, b| b.1.total_cmp(&a.1));
        println!("top {name} heads:");
        for (h, s) in heads.iter().take(5) {
            println!("  {h:>6} {s:.3}");
        }
    }
    Ok(())
}
