// SPDX-License-Identifier: MIT OR Apache-2.0

//! Generate IOI and Colored Objects prompt pairs and write them as JSONL.
//!
//! ```text
//! cargo run --example generate_datasets -- [out_dir]
//! ```

use circuit_probe::model::Tokenizer;
use circuit_probe::tasks::{write_dataset, DatasetSpec, Task};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/datasets".into());
    std::fs::create_dir_all(&out)?;
    let tokenizer = Tokenizer::bundled_gpt2()?;
    for task in [Task::Ioi, Task::ColoredObjects] {
        let pairs = DatasetSpec::new(task, 1000, 7).generate(&tokenizer)?;
        let first = &pairs[0];
        println!("== {task}: {} pairs", pairs.len());
        println!("original: {:?}", first.x_original.text);
        println!("new:      {:?}", first.x_new.text);
        println!("answers:  {:?} / {:?}", tokenizer.decode(&[first.y_original]), tokenizer.decode(&[first.y_new]));
        println!("annotations: {:?}", first.annotations);
        let path = format!("{out}/{task}.jsonl");
        write_dataset(&path, &pairs, &tokenizer)?;
        println!("wrote {path}\n");
    }
    Ok(())
}
