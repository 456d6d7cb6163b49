// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run a TOML experiment recipe end to end and list the run directory.
//!
//! ```text
//! cargo run --example experiment_recipe -- [recipe.toml]
//! ```

use std::path::PathBuf;

use circuit_probe::model::Model;
use circuit_probe::report::{run_recipe, sha256_file, ExperimentRecipe};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/recipes/toy.toml").into());
    let (recipe, hash) = ExperimentRecipe::load(path.as_ref())?;
    let dir: Option<PathBuf> =
        recipe.model_dir.clone().or_else(|| std::env::var_os("CIRCUIT_PROBE_MODEL_DIR").map(Into::into));
    let (model, weights) = match dir {
        Some(dir) => (Model::load_dir(&dir)?, Some(sha256_file(&dir.join("model.safetensors"))?)),
        None => (Model::toy_gpt2(0)?, None),
    };
    let (root, manifest) = run_recipe(&recipe, &hash, &model, weights)?;
    println!("run directory {}", root.display());
    println!("{} outputs in {:.1}s", manifest.outputs.len(), manifest.wall_clock_seconds);
    for o in &manifest.outputs {
        println!("  {:<22} {}", o.operation, o.path);
    }
    Ok(())
}
