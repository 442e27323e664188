use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;

use dtsl::checkpoint::{load_checkpoint, save_checkpoint};
use dtsl::data::{batches, designate_labeled, encode_all, load_corpus, load_embeddings, write_corpus, Label, TweetRecord};
use dtsl::eval::{loeo_folds, predict_samples, run_loeo, MetricsReport};
use dtsl::network::{Architecture, FilterPlan};
use dtsl::synthetic::{generate, SyntheticConfig};
use dtsl::train::{train, TrainConfig};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        t_ramp: 4.0,
        batch_size: 10,
        labeled_ratio: 1.0,
        seed: 3,
        ..TrainConfig::new(Architecture::new(8, 8, 2).with_filters(FilterPlan::narrowed(16)))
    }
}

#[test]
fn files_roundtrip_into_identical_predictions() {
    let corpus = generate(&SyntheticConfig::separable(&["a", "b"], 20, 8, 11));
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    let vectors_path = dir.path().join("vectors.txt");
    write_corpus(&corpus_path, &corpus.records).unwrap();
    fs::write(&vectors_path, corpus.embeddings.to_text()).unwrap();

    let loaded = load_corpus(&corpus_path).unwrap();
    assert!(loaded.malformed_lines.is_empty());
    assert_eq!(loaded.records, corpus.records);
    let table = load_embeddings(&vectors_path).unwrap();
    assert_eq!(table.to_text(), corpus.embeddings.to_text());

    let config = small_config();
    let samples = encode_all(&loaded.records, &table, 8).unwrap();
    let split = designate_labeled(samples.clone(), 1.0, 0).unwrap();
    let state = train(&split, &config).unwrap();
    let ck_path = dir.path().join("model.ckpt");
    save_checkpoint(&ck_path, &state.to_checkpoint()).unwrap();
    let restored = load_checkpoint(&ck_path).unwrap();
    assert_eq!(restored.epoch, 12);
    assert_eq!(
        predict_samples(&state.params, &samples, 7).unwrap(),
        predict_samples(&restored.params, &samples, 64).unwrap()
    );
}

#[test]
fn separable_events_are_classified_across_events() {
    let corpus = generate(&SyntheticConfig::separable(&["north", "south"], 40, 8, 5));
    let config = TrainConfig {
        epochs: 30,
        ..small_config()
    };
    let report = run_loeo(&corpus.records, &corpus.embeddings, &config).unwrap();
    assert_eq!(report.per_event.len(), 2);
    assert_eq!(report.pooled_confusion.total(), 80);
    assert!(report.pooled.macro_f >= 0.9, "macro-F {}", report.pooled.macro_f);
}

#[test]
fn loeo_is_deterministic_and_serializable() {
    let corpus = generate(&SyntheticConfig {
        shared_vocab: 10,
        class_tokens: 3,
        signal: 1.0,
        ..SyntheticConfig::separable(&["x", "y", "z"], 12, 8, 2)
    });
    let config = TrainConfig {
        epochs: 3,
        labeled_ratio: 0.5,
        ..small_config()
    };
    let a = run_loeo(&corpus.records, &corpus.embeddings, &config).unwrap();
    let b = run_loeo(&corpus.records, &corpus.embeddings, &config).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(MetricsReport::from_json(&a.to_json()).unwrap().to_json(), a.to_json());
    assert!(a.per_event.iter().all(|e| e.labeled_train == 12));
}

#[test]
fn mismatched_embedding_width_is_rejected() {
    let corpus = generate(&SyntheticConfig::separable(&["a", "b"], 4, 6, 0));
    let err = run_loeo(&corpus.records, &corpus.embeddings, &small_config()).unwrap_err();
    assert!(err.to_string().contains("dimension"), "{err}");
}

fn records_from(events: &[u8]) -> Vec<TweetRecord> {
    events
        .iter()
        .enumerate()
        .map(|(i, e)| TweetRecord {
            id: format!("r{i}"),
            event: format!("e{e}"),
            text: "fake0 true1".into(),
            label: Some(if i % 3 == 0 { Label::Fake } else { Label::True }),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_the_corpus(events in prop::collection::vec(0u8..5, 2..60)) {
        let records = records_from(&events);
        let distinct: BTreeSet<_> = events.iter().collect();
        prop_assume!(distinct.len() >= 2);
        let folds = loeo_folds(&records).unwrap();
        prop_assert_eq!(folds.len(), distinct.len());
        let mut tested = vec![0; records.len()];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.test.len(), records.len());
            prop_assert!(f.test.iter().all(|&i| records[i].event == f.held_out));
            prop_assert!(f.train.iter().all(|&i| records[i].event != f.held_out));
            for &i in &f.test {
                tested[i] += 1;
            }
        }
        prop_assert!(tested.iter().all(|&t| t == 1));
    }

    #[test]
    fn designation_keeps_the_requested_count(n in 1usize..80, ratio in 0.01f64..=1.0, seed: u64) {
        let corpus = generate(&SyntheticConfig::separable(&["a"], n, 4, 1));
        let samples = encode_all(&corpus.records, &corpus.embeddings, 8).unwrap();
        let expected = (ratio * n as f64).round() as usize;
        match designate_labeled(samples, ratio, seed) {
            Ok(split) => {
                prop_assert_eq!(split.labeled_count(), expected);
                let visible = split.samples().iter().filter(|s| s.label.is_some()).count();
                prop_assert_eq!(visible, expected);
                prop_assert!(split.ground_truth().iter().all(Option::is_some));
            }
            Err(_) => prop_assert_eq!(expected, 0),
        }
    }

    #[test]
    fn batches_cover_every_sample_once(n in 1usize..60, batch_size in 1usize..30, epoch in 0u64..50) {
        let corpus = generate(&SyntheticConfig::separable(&["a"], n, 4, 2));
        let samples = encode_all(&corpus.records, &corpus.embeddings, 8).unwrap();
        let split = designate_labeled(samples, 1.0, 0).unwrap();
        let bs = batches(&split, batch_size, 9, epoch).unwrap();
        let mut seen: Vec<usize> = bs.iter().flat_map(|b| b.indices.clone()).collect();
        prop_assert!(bs[..bs.len() - 1].iter().all(|b| b.indices.len() == batch_size));
        prop_assert_eq!(bs[0].inputs.shape(), &[bs[0].indices.len(), 1, 8, 4][..]);
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}
