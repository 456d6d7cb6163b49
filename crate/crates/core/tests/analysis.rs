// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeMap;

use circuit_probe::analysis::{
    attention_profile, attention_stats, copy_scatter, cumulative_logit_attribution, decompose,
    direct_logit_attribution, head_attributions, score_heads, Contrast, HeadScores, TokenGroup,
};
use circuit_probe::model::{logit_diff, ComponentRef, HeadRef, Site};
use circuit_probe::tasks::PromptPair;
use common::induction::{distinct_repeats, induction_model, VOCAB};
use common::{raw_pair, toy_config, toy_model};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn annotated(ids: Vec<u32>, names: &[(&str, usize)]) -> PromptPair {
    let mut pair = raw_pair(ids.clone(), ids, 1, 2);
    for &(n, p) in names {
        pair.annotations.insert(n.to_string(), p);
    }
    pair
}

fn random_pairs(seed: u64, n: usize) -> Vec<PromptPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = toy_config().vocab_size as u32;
    (0..n)
        .map(|_| {
            let ids: Vec<u32> = (0..8).map(|_| rng.gen_range(0..vocab)).collect();
            let mut pair = annotated(ids, &[("a", 2), ("b", 5), ("c", 6)]);
            pair.y_original = rng.gen_range(0..vocab);
            pair.y_new = (pair.y_original + 1) % vocab;
            pair.distractor_answers = vec![pair.y_new, (pair.y_original + 2) % vocab];
            pair
        })
        .collect()
}

#[test]
fn constructed_induction_head_is_detected() {
    let model = induction_model();
    let scores = score_heads(&model, &distinct_repeats(0, 20)).unwrap();
    let head = HeadRef::new(1, 0);
    let s = scores.get(head);
    assert!(s.induction_score >= 0.9, "induction score {}", s.induction_score);
    assert_eq!(HeadScores::rank(&scores.induction, head), 1);
    // the previous-token head attends one step back, which is the duplicate
    // position only by coincidence
    assert!(scores.get(HeadRef::new(0, 0)).duplicate_score < 0.2);
}

#[test]
fn detector_scores_ignore_token_relabelling() {
    let model = induction_model();
    let seqs = distinct_repeats(3, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut perm: Vec<u32> = (0..VOCAB as u32).collect();
    perm.shuffle(&mut rng);
    let relabelled: Vec<Vec<u32>> = seqs.iter().map(|s| s.iter().map(|&t| perm[t as usize]).collect()).collect();
    let a = score_heads(&model, &seqs).unwrap();
    let b = score_heads(&model, &relabelled).unwrap();
    for (x, y) in a.induction.iter().zip(b.induction.iter()).chain(a.duplicate.iter().zip(b.duplicate.iter())) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn attention_groups_partitioning_the_row_sum_to_one() {
    let model = toy_model(2);
    let data = random_pairs(1, 6);
    let head = HeadRef::new(1, 1);
    let groups = [TokenGroup::new("ab", &["a", "b"]), TokenGroup::new("c", &["c"]), TokenGroup::rest("other")];
    let stats = attention_stats(&model, &data, head, "end", &groups).unwrap();
    let total: f64 = stats.values().sum();
    assert!((total - 1.0).abs() < 1e-5, "{stats:?}");

    let single = attention_stats(&model, &data[..1], head, "end", &[TokenGroup::new("c", &["c"])]).unwrap();
    let (_, cache) = model.run_with_cache(&data[0].x_original).unwrap();
    let raw = cache.pattern(1, 1).unwrap()[(data[0].end(), 6)] as f64;
    assert!((single["c"] - raw).abs() < 1e-7);

    let profile = attention_profile(&model, &data, head, "end").unwrap();
    assert!((profile.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    let missing = attention_stats(&model, &data, head, "end", &[TokenGroup::new("x", &["nope"])]);
    assert!(missing.is_err());
}

#[test]
fn silent_head_copies_nothing() {
    let model = induction_model();
    let ids: Vec<u32> = vec![3, 4, 5, 6, 3];
    let pair = annotated(ids, &[("first", 0), ("second", 1)]);
    let scatter = copy_scatter(&model, &[pair], HeadRef::new(0, 1), &["first", "second"]).unwrap();
    assert_eq!(scatter.points.len(), 2);
    assert!(scatter.points.iter().all(|p| p.projection == 0.0));
    assert!(scatter.points.iter().all(|p| (0.0..=1.0).contains(&p.attention)));
}

#[test]
fn attributions_telescope_to_the_logit_difference() {
    let model = toy_model(5);
    for pair in random_pairs(7, 10) {
        let (logits, cache) = model.run_with_cache(&pair.x_original).unwrap();
        let ld = logit_diff(&logits, pair.y_original, pair.y_new, pair.end()).unwrap();
        let terms = decompose(&model, &cache, pair.y_original, pair.y_new).unwrap();
        let total: f32 = terms.iter().map(|t| t.value).sum();
        assert!((total - ld).abs() < 1e-3, "{total} vs {ld}");

        let heads = head_attributions(&model, &cache, pair.y_original, pair.y_new).unwrap();
        let by_label: BTreeMap<&str, f32> = terms.iter().map(|t| (t.label.as_str(), t.value)).collect();
        for (h, v) in heads {
            assert_eq!(by_label[h.to_string().as_str()], v);
        }
        let attn = direct_logit_attribution(
            &model,
            &cache,
            &ComponentRef::layer_site(Site::AttnOut, 1),
            pair.y_original,
            pair.y_new,
        )
        .unwrap();
        let parts = by_label["1.0"] + by_label["1.1"] + by_label["attn-bias 1"];
        assert!((attn - parts).abs() < 1e-4);
        assert_eq!(direct_logit_attribution(&model, &cache, &ComponentRef::embed(), 3, 3).unwrap(), 0.0);
    }
}

#[test]
fn cumulative_curve_has_one_point_per_sublayer_and_ends_at_the_logit_difference() {
    let model = toy_model(6);
    let data = random_pairs(8, 5);
    for contrast in [Contrast::Counterfactual, Contrast::BestDistractor] {
        let curve = cumulative_logit_attribution(&model, &data, contrast).unwrap();
        let n = 2 * toy_config().n_layers + 1;
        assert_eq!(curve.labels.len(), n);
        assert_eq!(curve.mean.len(), n);
        for (pair, points) in data.iter().zip(&curve.per_example) {
            assert_eq!(points.len(), n);
            let (logits, _) = model.run_with_cache(&pair.x_original).unwrap();
            let (pos, neg) = contrast.answers(pair, &logits).unwrap();
            let ld = logit_diff(&logits, pos, neg, pair.end()).unwrap() as f64;
            assert!((points[n - 1] - ld).abs() < 1e-3);
        }
    }
}
