// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use circuit_probe::cli::{execute, main_with_args, Cli};
use circuit_probe::model::Tokenizer;
use circuit_probe::patching::ImportanceMatrix;
use circuit_probe::report::RunManifest;
use circuit_probe::tasks::{read_dataset, write_dataset};
use clap::Parser;

fn run(args: &[&str]) -> PathBuf {
    let cli = Cli::try_parse_from(std::iter::once("circuit-probe").chain(args.iter().copied())).unwrap();
    execute(&cli).unwrap()
}

fn manifest(root: &Path) -> RunManifest {
    RunManifest::read(&root.join("manifest.json")).unwrap()
}

const RECIPE: &str = r#"
name = "toy-colored-objects"
task = "colored-objects"
seed = 3
n_examples = 6
sample_n = 2
eval = true
cumulative = true

[[stages]]
label = "to-logits"
receivers = "logits"

[[stages]]
label = "to-mover-queries"
receivers = "q:3.1,3.2"

[[interventions]]
name = "both"
variant = "both"
inhibition = ["1.0", "2.3"]
negative_movers = ["3.0"]
movers = ["3.1", "3.2"]
to_logits_stage = "to-logits"
cumulative = true

[blocks]
targets = ["obj2", "color-word", "none"]
heads = ["1.1", "2.2"]

[[scatters]]
head = "3.1"
positions = ["col1", "col2", "col3"]

[detect]
n_seqs = 3
seq_len = 16
"#;

#[test]
fn generate_writes_a_readable_dataset() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let root = run(&["generate", "--task", "ioi", "--n", "12", "--seed", "4", "--out", o]);
    let m = manifest(&root);
    assert_eq!(m.seed, 4);
    let pairs = read_dataset(root.join("data/dataset.jsonl"), &Tokenizer::bundled_gpt2().unwrap()).unwrap();
    assert_eq!(pairs.len(), 12);
}

#[test]
fn identity_pairs_give_an_all_zero_grid() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    let tok = Tokenizer::bundled_gpt2().unwrap();
    let root = run(&["generate", "--task", "colored-objects", "--n", "3", "--out", o]);
    let mut pairs = read_dataset(root.join("data/dataset.jsonl"), &tok).unwrap();
    for p in &mut pairs {
        p.x_new = p.x_original.clone();
    }
    let ds = out.path().join("identity.jsonl");
    write_dataset(&ds, &pairs, &tok).unwrap();
    let root = run(&["patch", "--toy", "--dataset", ds.to_str().unwrap(), "--sample-n", "3", "--out", o]);
    let grid =
        ImportanceMatrix::from_csv(&std::fs::read_to_string(root.join("data/to-logits.csv")).unwrap(), "g").unwrap();
    assert_eq!(grid.scores.dim(), (4, 4));
    assert!(grid.scores.iter().all(|&v| v == 0.0), "{:?}", grid.scores);
    assert!(root.join("figures/to-logits.svg").exists());
}

#[test]
fn identical_recipes_reproduce_identical_outputs() {
    let out = tempfile::tempdir().unwrap();
    let recipe = out.path().join("recipe.toml");
    let text = format!("output_dir = {:?}\n{RECIPE}", out.path().join("runs"));
    std::fs::write(&recipe, &text).unwrap();
    let a = run(&["report", "--toy", "--recipe", recipe.to_str().unwrap()]);
    let b = run(&["report", "--toy", "--recipe", recipe.to_str().unwrap()]);
    assert_ne!(a, b);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.recipe_sha256, mb.recipe_sha256);
    assert_eq!(ma.weights_sha256, mb.weights_sha256);
    assert!(ma.data_hashes().len() >= 8);
    assert_eq!(ma.data_hashes(), mb.data_hashes());
    for o in &ma.outputs {
        assert!(a.join(&o.path).exists(), "{}", o.path);
    }
    for f in [
        "eval.json",
        "to-mover-queries.csv",
        "intervention-both.json",
        "block.csv",
        "cumulative-both.json",
        "detect-induction.csv",
    ] {
        assert!(a.join("data").join(f).exists(), "{f}");
    }
}

#[test]
fn compare_reports_overlap() {
    let out = tempfile::tempdir().unwrap();
    let a = out.path().join("a.csv");
    let b = out.path().join("b.csv");
    std::fs::write(&a, "layer,head,score\n0,0,-5\n0,1,0\n1,0,0\n1,1,-1\n").unwrap();
    std::fs::write(&b, "layer,head,score\n0,0,-4\n0,1,-9\n1,0,0\n1,1,0\n").unwrap();
    let root = run(&[
        "compare",
        "--a",
        a.to_str().unwrap(),
        "--b",
        b.to_str().unwrap(),
        "--threshold",
        "0.5",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("data/overlap.json")).unwrap()).unwrap();
    assert!((report["overlap"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn errors_exit_nonzero() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    assert_eq!(main_with_args(["circuit-probe", "eval", "--model-dir", "/nonexistent", "--out", o]), ExitCode::FAILURE);
    assert_eq!(
        main_with_args(["circuit-probe", "intervene", "--toy", "--variant", "all", "--n", "2", "--out", o]),
        ExitCode::FAILURE
    );
    assert_ne!(main_with_args(["circuit-probe", "frobnicate"]), ExitCode::SUCCESS);
}
