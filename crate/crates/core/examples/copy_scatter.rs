// SPDX-License-Identifier: MIT OR Apache-2.0

//! Compare a head's attention to each color with how much its output
//! promotes that color, and render the scatter as SVG.

use circuit_probe::analysis::{attention_stats, copy_scatter, TokenGroup};
use circuit_probe::model::{HeadRef, Model};
use circuit_probe::report::plot;
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
    let head = if cfg.n_layers == 24 { HeadRef::new(15, 14) } else { HeadRef::new(cfg.n_layers - 1, 1) };
    let dataset = DatasetSpec::new(Task::ColoredObjects, 40, 3).generate(model.tokenizer()?)?;

    let groups = [
        TokenGroup::new("correct", &["answer_col"]),
        TokenGroup::new("wrong", &["wrong_col1", "wrong_col2"]),
        TokenGroup::rest("other"),
    ];
    for (name, mass) in attention_stats(&model, &dataset, head, "end", &groups)? {
        println!("{head} attention to {name}: {mass:.3}");
    }

    let scatter = copy_scatter(&model, &dataset, head, &["col1", "col2", "col3"])?;
    println!("{} points, pearson r = {:.3}", scatter.points.len(), scatter.correlation()?);
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/copy_scatter.svg".into());
    let points: Vec<(f64, f64, String)> =
        scatter.points.iter().map(|p| (p.attention, p.projection, p.label.clone())).collect();
    plot::scatter(out.as_ref(), &format!("{head} copying"), "attention", "unembedding projection", &points)?;
    println!("wrote {out}");
    Ok(())
}
