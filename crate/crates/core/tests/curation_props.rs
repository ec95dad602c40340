use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsc_core::curation::*;

fn record(priority: f64, tag: u64) -> PromptRecord {
    PromptRecord {
        prompt: format!("prompt {tag}"),
        answer: format!("answer {tag}"),
        priority,
        provenance: if priority < 0.0 { Provenance::NonDeliberated } else { Provenance::Deliberated },
        ids: RecordIds {
            scenario: "s".into(),
            intersection: (tag % 7) as u32,
            tick: tag,
        },
    }
}

fn argmax(map: &BTreeMap<String, f64>) -> &str {
    let mut best: Option<(&String, f64)> = None;
    for (k, &v) in map {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.unwrap().0
}

fn random_maps(rng: &mut ChaCha8Rng) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let n = rng.gen_range(2..=8);
    let q = (0..n).map(|i| (format!("a{i}"), rng.gen_range(-50.0..50.0))).collect();
    let r = (0..n).map(|i| (format!("a{i}"), rng.gen_range(0.0..1.0))).collect();
    (q, r)
}

#[test]
fn alpha_one_follows_critic_and_alpha_zero_follows_panel() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (q, r) = random_maps(&mut rng);
        let rl = PriorityConfig { alpha: 1.0, ..PriorityConfig::default() };
        let llm = PriorityConfig { alpha: 0.0, ..PriorityConfig::default() };
        assert_eq!(argmax(&fuse_priority(&q, &r, &rl).unwrap()), argmax(&q));
        assert_eq!(argmax(&fuse_priority(&q, &r, &llm).unwrap()), argmax(&r));
    }
}

#[test]
fn balanced_fusion_of_opposed_scores_ties() {
    let q = BTreeMap::from([("a".to_string(), 0.0), ("b".to_string(), 10.0)]);
    let r = BTreeMap::from([("a".to_string(), 1.0), ("b".to_string(), 0.0)]);
    let s = fuse_priority(&q, &r, &PriorityConfig { alpha: 0.5, ..PriorityConfig::default() }).unwrap();
    assert!((s["a"] - 0.5).abs() <= 1e-12);
    assert!((s["b"] - 0.5).abs() <= 1e-12);
}

#[test]
fn fusion_reports_missing_scores() {
    let q = BTreeMap::from([("a".to_string(), 0.0), ("b".to_string(), 1.0)]);
    let r = BTreeMap::from([("a".to_string(), 1.0), ("c".to_string(), 0.0)]);
    assert!(matches!(
        fuse_priority(&q, &r, &PriorityConfig::default()),
        Err(tsc_core::error::CurationError::MissingScore(id)) if id == "b"
    ));
}

#[test]
fn weighted_loss_hand_example() {
    let batch = CurationBatch {
        plus: vec![record(1.0, 0), record(3.0, 1)],
        minus: vec![record(-1.0, 2)],
        weights: vec![1.0, 3.0],
        lambda_neg: 0.5,
    };
    assert_eq!(evaluate_curation_loss(&batch, &[2.0, 4.0], &[1.0]).unwrap(), 4.0);
}

#[test]
fn labels_outside_the_deliberated_set_are_negative_one() {
    let fused = BTreeMap::from([("p1_d10".to_string(), 0.7)]);
    assert_eq!(label_record("p1_d10", &fused), (0.7, Provenance::Deliberated));
    assert_eq!(label_record("p2_d10", &fused), (-1.0, Provenance::NonDeliberated));
}

#[test]
fn export_import_round_trips_random_records() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet: Vec<char> = "ab \n\t\"\\{}é漢🚦,:".chars().collect();
    let text = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.gen_range(0..40);
        (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
    };
    let records: Vec<PromptRecord> = (0..1000)
        .map(|i| {
            let priority = if rng.gen_bool(0.2) { -1.0 } else { rng.gen::<f64>() };
            PromptRecord {
                prompt: text(&mut rng),
                answer: text(&mut rng),
                ..record(priority, i)
            }
        })
        .collect();
    let rows = rows_from_records(&records);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.jsonl");
    export_dataset(&rows, &path).unwrap();
    let back = import_dataset(&path).unwrap();
    assert_eq!(back, rows);
    let plus = back.iter().filter(|r| r.split == Split::Plus).count();
    let minus = back.iter().filter(|r| r.split == Split::Minus).count();
    assert_eq!(plus + minus, records.len());
    let batch = partition_and_weight(&records, &PriorityConfig::default());
    assert_eq!(batch.plus.len(), plus);
    assert_eq!(batch.minus.len(), minus);
}

#[test]
fn empty_dataset_is_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    export_dataset(&[], &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
    assert!(import_dataset(&path).unwrap().is_empty());
}

#[test]
fn large_temperature_samples_uniformly() {
    let records: Vec<PromptRecord> = (0..4).map(|i| record(i as f64 / 3.0, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hits = [0usize; 4];
    let draws = 20_000;
    for _ in 0..draws {
        let picked = score_sample(&records, 1, 1e9, &mut rng);
        hits[picked[0].ids.tick as usize] += 1;
    }
    for h in hits {
        let share = h as f64 / draws as f64;
        assert!((share - 0.25).abs() < 0.02, "share {share}");
    }
}

#[test]
fn small_temperature_prefers_high_priority() {
    let records: Vec<PromptRecord> = (0..10).map(|i| record(i as f64 / 9.0, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let picked = score_sample(&records, 3, 1e-3, &mut rng);
    let ticks: Vec<u64> = picked.iter().map(|r| r.ids.tick).collect();
    assert_eq!(ticks, vec![7, 8, 9]);
}

proptest! {
    #[test]
    fn uniform_weights_without_negatives_give_mean_ce(
        w in 0.01f64..5.0,
        ce in prop::collection::vec(0.0f64..20.0, 1..30),
        lambda in 0.0f64..3.0,
    ) {
        let batch = CurationBatch {
            plus: (0..ce.len() as u64).map(|i| record(w, i)).collect(),
            minus: vec![],
            weights: vec![w; ce.len()],
            lambda_neg: lambda,
        };
        let mean = ce.iter().sum::<f64>() / ce.len() as f64;
        let loss = evaluate_curation_loss(&batch, &ce, &[]).unwrap();
        prop_assert!((loss - mean).abs() <= 1e-12);
    }

    #[test]
    fn zero_lambda_ignores_negatives(
        weights in prop::collection::vec(0.01f64..1.0, 1..20),
        ul in prop::collection::vec(0.0f64..50.0, 0..20),
        ul_other in prop::collection::vec(0.0f64..50.0, 0..20),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ce: Vec<f64> = weights.iter().map(|_| rng.gen_range(0.0..10.0)).collect();
        let plus: Vec<PromptRecord> = weights.iter().enumerate().map(|(i, &w)| record(w, i as u64)).collect();
        let batch = |n: usize| CurationBatch {
            plus: plus.clone(),
            minus: (0..n as u64).map(|i| record(-1.0, 100 + i)).collect(),
            weights: weights.clone(),
            lambda_neg: 0.0,
        };
        let base = evaluate_curation_loss(&batch(0), &ce, &[]).unwrap();
        prop_assert_eq!(evaluate_curation_loss(&batch(ul.len()), &ce, &ul).unwrap(), base);
        prop_assert_eq!(evaluate_curation_loss(&batch(ul_other.len()), &ce, &ul_other).unwrap(), base);
    }

    #[test]
    fn threshold_filter_is_monotone(
        ps in prop::collection::vec(-1.0f64..1.0, 0..50),
        k1 in -1.0f64..1.0,
        k2 in -1.0f64..1.0,
    ) {
        let records: Vec<PromptRecord> = ps.iter().enumerate().map(|(i, &p)| record(p, i as u64)).collect();
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let wide = threshold_filter(&records, lo);
        let narrow = threshold_filter(&records, hi);
        prop_assert!(narrow.len() <= wide.len());
        prop_assert!(narrow.iter().all(|r| wide.contains(r)));
        prop_assert!(narrow.iter().all(|r| r.priority >= hi));
    }

    #[test]
    fn fused_priorities_stay_in_unit_interval(
        seed in any::<u64>(),
        alpha in 0.0f64..=1.0,
        zsig in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, r) = random_maps(&mut rng);
        let norm = if zsig { Normalizer::ZSigmoid } else { Normalizer::MinMax };
        let cfg = PriorityConfig { alpha, f: norm, g: norm, ..PriorityConfig::default() };
        for v in fuse_priority(&q, &r, &cfg).unwrap().values() {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}
