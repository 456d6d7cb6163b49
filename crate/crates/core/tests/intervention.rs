// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use circuit_probe::intervention::{
    apply_intervention, block_content_gatherers_with, repair_experiment_with, BlockTarget, InterventionSpec,
    RepairConfig, RepairVariant,
};
use circuit_probe::model::{HeadRef, Model, ModelConfig};
use circuit_probe::patching::ImportanceMatrix;
use circuit_probe::tasks::{eval_accuracy, PromptPair};
use common::{raw_pair, toy_model, Node, Oracle, Overrides};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: u32 = 40;

/// A Colored-Objects-shaped prompt: three "color" slots, a queried object
/// slot and the color word, all at random positions of random tokens.
fn shaped_pair(rng: &mut ChaCha8Rng) -> PromptPair {
    let n = rng.gen_range(10..16);
    let mut slots: Vec<usize> = (0..n - 1).collect();
    slots.shuffle(rng);
    let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(0..VOCAB)).collect();
    let mut answers: Vec<u32> = (0..VOCAB).collect();
    answers.shuffle(rng);
    let mut pair = raw_pair(ids.clone(), ids, answers[0], answers[1]);
    pair.distractor_answers = vec![answers[1], answers[2]];
    for (name, &pos) in ["answer_col", "wrong_col1", "wrong_col2", "obj2", "question_color_word"].iter().zip(&slots) {
        pair.annotations.insert(name.to_string(), pos);
    }
    pair
}

fn shaped_dataset(seed: u64, n: usize) -> Vec<PromptPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| shaped_pair(&mut rng)).collect()
}

fn wide_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        n_layers: 3,
        n_heads: 3,
        d_model: 24,
        d_head: 8,
        vocab_size: VOCAB as usize,
        max_context: 16,
        layer_norm_epsilon: 1e-5,
        d_mlp: None,
    };
    Model::random(cfg, seed).unwrap()
}

#[test]
fn forced_rows_match_targets_exactly() {
    let model = toy_model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = HeadRef::new(1, 0);
    for _ in 0..10 {
        let pair = shaped_pair(&mut rng);
        let spec = InterventionSpec::split_evenly(&[head], "end", &["wrong_col1", "wrong_col2"]);
        let (_, cache) = apply_intervention(&model, &pair, &spec).unwrap();
        let row = cache.pattern(1, 0).unwrap().row(pair.end()).to_owned();
        let (a, b) = (pair.position("wrong_col1").unwrap(), pair.position("wrong_col2").unwrap());
        for (p, &v) in row.iter().enumerate() {
            let want = if p == a || p == b { 0.5 } else { 0.0 };
            assert_eq!(v, want, "position {p}");
        }
    }
}

#[test]
fn empty_spec_is_a_plain_forward() {
    let model = toy_model(5);
    let pair = shaped_pair(&mut ChaCha8Rng::seed_from_u64(2));
    let (plain, _) = model.run_with_cache(&pair.x_original).unwrap();
    let (edited, _) = apply_intervention(&model, &pair, &InterventionSpec::default()).unwrap();
    assert_eq!(plain.values(), edited.values());
}

#[test]
fn blocked_rows_renormalize_the_rest() {
    let model = toy_model(6);
    let pair = shaped_pair(&mut ChaCha8Rng::seed_from_u64(3));
    let head = HeadRef::new(1, 1);
    let (_, clean) = model.run_with_cache(&pair.x_original).unwrap();
    let spec = InterventionSpec::block_from(&[head], "end", &["obj2", "question_color_word"]);
    let (_, cache) = apply_intervention(&model, &pair, &spec).unwrap();
    let end = pair.end();
    let before = clean.pattern(1, 1).unwrap().row(end).to_owned();
    let after = cache.pattern(1, 1).unwrap().row(end).to_owned();
    let blocked = [pair.position("obj2").unwrap(), pair.position("question_color_word").unwrap()];
    let kept: f32 = (0..before.len()).filter(|p| !blocked.contains(p)).map(|p| before[p]).sum();
    assert!((after.sum() - 1.0).abs() < 1e-6);
    for p in 0..before.len() {
        if blocked.contains(&p) {
            assert_eq!(after[p], 0.0);
        } else {
            assert!((after[p] - before[p] / kept).abs() < 1e-6);
        }
    }
}

#[test]
fn zeroed_head_matches_oracle_with_silent_head() {
    let model = toy_model(7);
    let oracle = Oracle::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let pair = shaped_pair(&mut rng);
        let (l, h) = (rng.gen_range(0..2), rng.gen_range(0..2));
        let spec = InterventionSpec { zeroed: vec![HeadRef::new(l, h)], ..Default::default() };
        let (logits, cache) = apply_intervention(&model, &pair, &spec).unwrap();
        assert!(cache.z(l, h).unwrap().iter().all(|&v| v == 0.0));
        let n = pair.x_original.len();
        let mut ov = Overrides::new();
        ov.insert(Node::Z(l, h), (0..n).map(|r| (r, vec![0.0; 8])).collect());
        let want = oracle.forward(&pair.x_original.ids, &ov);
        for (p, row) in want.logits.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                assert!((logits.values()[(p, t)] as f64 - v).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn missing_annotation_is_reported() {
    let model = toy_model(8);
    let mut pair = shaped_pair(&mut ChaCha8Rng::seed_from_u64(5));
    pair.annotations.remove("wrong_col2");
    let spec = InterventionSpec::split_evenly(&[HeadRef::new(0, 0)], "end", &["wrong_col1", "wrong_col2"]);
    let err = apply_intervention(&model, &pair, &spec).unwrap_err();
    assert!(err.to_string().contains("wrong_col2"), "{err}");
}

fn toy_repair(to_logits: Option<ImportanceMatrix>) -> RepairConfig {
    RepairConfig {
        inhibition: vec![HeadRef::new(1, 0)],
        negative_movers: vec![HeadRef::new(2, 1)],
        movers: vec![HeadRef::new(2, 1), HeadRef::new(2, 2)],
        to_logits,
        ..RepairConfig::gpt2_medium()
    }
}

#[test]
fn repair_report_bookkeeping() {
    let model = wide_model(9);
    let dataset = shaped_dataset(10, 60);
    let grid =
        ImportanceMatrix::new(ndarray::Array2::from_shape_fn((3, 3), |(l, h)| -((l * 3 + h) as f64)), "to-logits");
    let report = repair_experiment_with(&model, &dataset, RepairVariant::Both, &toy_repair(Some(grid))).unwrap();
    let baseline = eval_accuracy(&model, &dataset, None).unwrap();
    assert_eq!(report.n, 60);
    assert_eq!(report.accuracy_before, baseline.accuracy);
    assert_eq!(report.n_originally_correct, baseline.correct(&dataset).iter().filter(|&&c| c).count());
    let after = report.accuracy_before - report.new_mistakes as f64 / 60.0 + report.fixed as f64 / 60.0;
    assert!((report.accuracy_after - after).abs() < 1e-12);
    assert_eq!(report.intervened, vec![HeadRef::new(1, 0), HeadRef::new(2, 1)]);
    assert_eq!(report.per_head_attribution_delta.len(), 9);

    assert!(report.per_head_attribution_delta.iter().all(|d| d.delta.is_finite()));
    // an intervened mover ends up fully on the wrong colors
    if report.n_originally_correct > 0 {
        let kept: Vec<&PromptPair> =
            dataset.iter().zip(baseline.correct(&dataset)).filter_map(|(p, c)| c.then_some(p)).collect();
        let mut wrong_before = 0.0;
        let mut correct_before = 0.0;
        for pair in &kept {
            let (_, cache) = model.run_with_cache(&pair.x_original).unwrap();
            let row = cache.pattern(2, 1).unwrap().row(pair.end()).to_owned();
            wrong_before +=
                (row[pair.position("wrong_col1").unwrap()] + row[pair.position("wrong_col2").unwrap()]) as f64;
            correct_before += row[pair.position("answer_col").unwrap()] as f64;
        }
        let k = kept.len() as f64;
        let d = report.attention_delta(HeadRef::new(2, 1)).unwrap();
        assert!((d.wrong_color - (1.0 - wrong_before / k)).abs() < 1e-5);
        assert!((d.correct_color + correct_before / k).abs() < 1e-5);
        let rho = report.spearman_rho.unwrap();
        assert!((-1.0..=1.0).contains(&rho));
    }
}

#[test]
fn repair_without_sweep_skips_correlation() {
    let model = wide_model(11);
    let dataset = shaped_dataset(12, 12);
    for v in RepairVariant::ALL {
        let r = repair_experiment_with(&model, &dataset, v, &toy_repair(None)).unwrap();
        assert!(r.spearman_rho.is_none());
        assert_eq!(r.variant, v.to_string());
    }
}

#[test]
fn blocking_nothing_keeps_baseline_accuracy() {
    let model = wide_model(13);
    let dataset = shaped_dataset(14, 40);
    let heads = [HeadRef::new(1, 1), HeadRef::new(2, 0)];
    let base = eval_accuracy(&model, &dataset, None).unwrap().accuracy;
    assert_eq!(block_content_gatherers_with(&model, &dataset, BlockTarget::None, &heads).unwrap(), base);
    for t in [BlockTarget::Obj2, BlockTarget::ColorWord, BlockTarget::Both] {
        let acc = block_content_gatherers_with(&model, &dataset, t, &heads).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}
