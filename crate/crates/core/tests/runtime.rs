// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass and tokenizer checked against fixtures produced by the
//! `transformers` reference implementation (see `scripts/make_fixtures.py`).

use std::path::{Path, PathBuf};

use circuit_probe::model::{logit_diff, ComponentRef, EditRule, Model, Site, Tokenizer};
use serde::Deserialize;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn tiny_reference_model() -> Model {
    let dir = fixtures().join("tiny_gpt2");
    let cfg = circuit_probe::model::ModelConfig::from_file(dir.join("config.json")).unwrap();
    let w = circuit_probe::model::Gpt2Weights::from_safetensors(dir.join("model.safetensors"), &cfg).unwrap();
    Model::new(cfg, w).unwrap()
}

#[derive(Deserialize)]
struct ReferencePrompt {
    ids: Vec<u32>,
    greedy: u32,
    top_ids: Vec<u32>,
    top_logits: Vec<f64>,
    first_row: Vec<f64>,
}

#[test]
fn greedy_decoding_matches_reference_implementation() {
    let model = tiny_reference_model();
    let text = std::fs::read_to_string(fixtures().join("tiny_gpt2/reference.json")).unwrap();
    let prompts: Vec<ReferencePrompt> = serde_json::from_str(&text).unwrap();
    assert!(prompts.len() >= 50);
    let mut max_err = 0f64;
    for p in &prompts {
        let (logits, _) = model.run_with_cache(&p.ids).unwrap();
        let last = logits.last();
        assert_eq!(logits.argmax_at(p.ids.len() - 1, None).unwrap(), p.greedy);
        for (&id, &expected) in p.top_ids.iter().zip(&p.top_logits) {
            max_err = max_err.max((last[id as usize] as f64 - expected).abs());
        }
        let first = logits.at(0).unwrap();
        for (i, &expected) in p.first_row.iter().enumerate() {
            max_err = max_err.max((first[i] as f64 - expected).abs());
        }
    }
    assert!(max_err < 1e-4, "max logit error {max_err}");
}

#[test]
fn loading_is_repeatable_and_bit_identical() {
    let a = tiny_reference_model();
    let b = tiny_reference_model();
    assert_eq!(a.weights(), b.weights());
    let ids = [5u32, 17, 900, 3];
    let (la, ca) = a.run_with_cache(ids).unwrap();
    let (lb, cb) = b.run_with_cache(ids).unwrap();
    assert_eq!(la, lb);
    for key in ca.keys() {
        assert_eq!(ca.site(key), cb.site(key));
    }
}

#[derive(Deserialize)]
struct TokenCase {
    text: String,
    ids: Vec<u32>,
}

#[test]
fn tokenizer_matches_reference_ids() {
    let tok = Tokenizer::bundled_gpt2().unwrap();
    assert_eq!(tok.vocab_size(), 50257);
    assert_eq!(tok.end_of_text(), Some(50256));
    let text = std::fs::read_to_string(fixtures().join("tokenizer_reference.json")).unwrap();
    let cases: Vec<TokenCase> = serde_json::from_str(&text).unwrap();
    for case in cases {
        let enc = tok.encode(&case.text);
        assert_eq!(enc.ids, case.ids, "text {:?}", case.text);
        assert_eq!(tok.decode(&enc.ids), case.text);
    }
    assert_ne!(tok.encode(" Blue").ids, tok.encode("Blue").ids);
    assert_eq!(tok.single_token(" Blue").unwrap(), 4518);
}

#[test]
fn unembedding_reproduces_logit_difference() {
    let model = tiny_reference_model();
    let ids = [1u32, 2, 3, 4, 5, 6];
    let (logits, cache) = model.run_with_cache(ids).unwrap();
    let last = ids.len() - 1;
    let resid = cache.row(&ComponentRef::layer_site(Site::ResidPost, 1).key(), last).unwrap().to_owned();
    let scale = model.final_ln_scale(resid.view());
    let normed = model.fold_final_ln(resid.view(), scale) + &model.weights().lnf_b;
    let (y_a, y_b) = (10u32, 400u32);
    let dir = &model.unembed_direction(y_a).unwrap() - &model.unembed_direction(y_b).unwrap();
    let via_direction = normed.dot(&dir);
    let direct = logit_diff(&logits, y_a, y_b, last).unwrap();
    assert!((via_direction - direct).abs() < 1e-3);
    let zero = ndarray::Array1::<f32>::zeros(model.config().d_model);
    assert_eq!(zero.dot(&dir), 0.0);
}

#[test]
fn identity_patches_leave_logits_unchanged_for_every_site() {
    let model = tiny_reference_model();
    let ids = [9u32, 8, 7, 6, 5];
    let (logits, cache) = model.run_with_cache(ids).unwrap();
    let cache = std::sync::Arc::new(cache);
    for key in cache.keys().filter(|k| k.site != Site::Logits) {
        let edits = [EditRule::freeze(key.all(), cache.clone())];
        let (patched, _) = model.run_with_edits(ids, &edits).unwrap();
        assert_eq!(patched, logits, "{key:?}");
        let value = cache.get(&key.at(2)).unwrap().to_owned();
        let (patched, _) = model.run_with_edits(ids, &[EditRule::replace(key.at(2), value)]).unwrap();
        assert_eq!(patched, logits, "{key:?}");
    }
    let (again, _) = model.run_with_edits(ids, &[]).unwrap();
    assert_eq!(again, logits);
}
