// SPDX-License-Identifier: MIT OR Apache-2.0

//! Force inhibition and negative mover heads to attend to the wrong colors
//! and measure how accuracy, mover attention and attribution move.

use circuit_probe::intervention::{repair_experiment_with, RepairConfig, RepairVariant};
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
    let cfg = model.config().clone();
    let medium = cfg.n_layers == 24 && cfg.n_heads == 16;
    let n = if medium { 1000 } else { 24 };
    let dataset = DatasetSpec::new(Task::ColoredObjects, n, 0).generate(model.tokenizer()?)?;

    let mut config = if medium {
        RepairConfig::gpt2_medium()
    } else {
        RepairConfig {
            inhibition: vec![HeadRef::new(1, 0), HeadRef::new(2, 3)],
            negative_movers: vec![HeadRef::new(3, 0)],
            movers: vec![HeadRef::new(3, 1), HeadRef::new(3, 2)],
            ..RepairConfig::default()
        }
    };
    config.to_logits = Some(sweep_heads(&model, &dataset, &SweepConfig::to_logits(n.min(100)))?);

    for variant in RepairVariant::ALL {
        let report = repair_experiment_with(&model, &dataset, variant, &config)?;
        println!("== {variant}: intervened {:?}", report.intervened.iter().map(|h| h.to_string()).collect::<Vec<_>>());
        println!(
            "accuracy {:.3} -> {:.3}, {} new mistakes, {} fixed",
            report.accuracy_before, report.accuracy_after, report.new_mistakes, report.fixed
        );
        let (correct, wrong) = report.mean_mover_attention_delta();
        println!("mean mover attention change: correct {correct:+.3}, wrong {wrong:+.3}");
        if let (Some(rho), Some(p)) = (report.spearman_rho, report.spearman_p) {
            println!("spearman(attribution change, importance) = {rho:.3} (p = {p:.2e})");
        }
        println!();
    }
    Ok(())
}
