mod common;

use common::{bleu_oracle, instance, small_model, toks};
use proptest::prelude::*;
use tabletext::baselines::TemplateStore;
use tabletext::eval::{
    attention_csv, bleu4, evaluate, export_attention, unseen_attributes, DecodeConfig, NeuralGenerator,
};
use tabletext::{ModelConfig, Vocabulary};

#[test]
fn buckets_follow_unseen_attribute_counts() {
    let train_attrs = Vocabulary::from_words(["caption", "name", "team"]);
    let test = vec![
        instance(&["name", "team"], &["a", "b"], "cap", "a b"),
        instance(&["name"], &["a"], "", "a"),
        instance(&["name", "goals"], &["a", "3"], "", "a 3"),
        instance(&["x", "y", "z", "name"], &["a", "b", "c", "d"], "", "a b c d"),
    ];
    let counts: Vec<usize> = test.iter().map(|i| unseen_attributes(i, &train_attrs)).collect();
    assert_eq!(counts, vec![0, 0, 1, 3]);

    let store = TemplateStore::induce(&test);
    let (report, generations) = evaluate(&store, &test, &train_attrs).unwrap();
    let sizes: Vec<usize> = report.buckets.iter().map(|b| b.count).collect();
    assert_eq!(sizes, vec![2, 1, 0, 1]);
    assert_eq!(sizes.iter().sum::<usize>(), report.size);
    assert_eq!(report.buckets[2].bleu, None);
    assert_eq!(report.bleu, 1.0);
    assert_eq!(report.fallback_count, 0);
    assert_eq!(generations.len(), 4);

    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"fallback_count\":0"));
}

#[test]
fn attention_export_columns_are_distributions() {
    let m = small_model(ModelConfig::small(4, 4, 6), &["won"], &["name", "team"], 3);
    let generator = NeuralGenerator::new(&m, DecodeConfig { beam: 2, max_len: 5 });
    let inst = instance(&["name", "team"], &["alice", "reds"], "", "alice won");
    let (_, gens) = evaluate(&generator, std::slice::from_ref(&inst), &m.attributes).unwrap();
    let record = gens[0].attention.clone().unwrap();
    assert_eq!(record.states, vec!["alice[name]", "reds[team]"]);
    assert_eq!(record.weights.len(), record.tokens.len());
    for step in &record.weights {
        assert!((step.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("att.csv");
    export_attention(&record, &path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().len(), record.tokens.len() + 1);
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    for col in 0..record.tokens.len() {
        let total: f64 = rows.iter().map(|r| r[col]).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn single_column_attention_is_all_ones() {
    let m = small_model(ModelConfig::small(4, 4, 6), &["won"], &["name"], 4);
    let generator = NeuralGenerator::new(&m, DecodeConfig { beam: 1, max_len: 4 });
    let inst = instance(&["name"], &["alice"], "", "alice won");
    let (_, gens) = evaluate(&generator, &[inst], &m.attributes).unwrap();
    let csv = attention_csv(gens[0].attention.as_ref().unwrap()).unwrap();
    for line in csv.lines().skip(1) {
        for v in line.split(',').skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 1.0);
        }
    }
}

#[test]
fn beam_one_evaluation_matches_greedy() {
    let m = small_model(ModelConfig::small(4, 4, 6), &["won", "the"], &["name", "team"], 5);
    let test = vec![
        instance(&["name", "team"], &["alice", "reds"], "", "alice won"),
        instance(&["name"], &["bob"], "", "bob won the cup"),
    ];
    let greedy = NeuralGenerator::new(&m, DecodeConfig { beam: 1, max_len: 6 });
    let (_, a) = evaluate(&greedy, &test, &m.attributes).unwrap();
    for (inst, g) in test.iter().zip(&a) {
        let session = tabletext::model::DecodeSession::new(&m, &inst.row).unwrap();
        let b = tabletext::model::beam_search(&session, 1, 6).unwrap();
        let tokens: Vec<String> = b[0].output().iter().map(|&t| session.surface(t).to_owned()).collect();
        assert_eq!(tokens, g.tokens);
    }
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e"]), 0..9)
        .prop_map(|v| v.into_iter().map(str::to_owned).collect())
}

proptest! {
    #[test]
    fn bleu_matches_oracle_and_is_bounded(pairs in proptest::collection::vec((sentence(), sentence()), 1..6)) {
        let (hyps, refs): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let score = bleu4(&hyps, &refs).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
        prop_assert!((score - bleu_oracle(&hyps, &refs)).abs() < 1e-12);

        let (rh, rr): (Vec<_>, Vec<_>) = pairs.iter().rev().cloned().unzip();
        prop_assert!((bleu4(&rh, &rr).unwrap() - score).abs() < 1e-12);
    }

    #[test]
    fn bleu_of_identity_is_one(h in proptest::collection::vec(sentence(), 1..5)) {
        prop_assume!(h.iter().any(|s| !s.is_empty()));
        prop_assert_eq!(bleu4(&h, &h).unwrap(), 1.0);
    }
}

#[test]
fn clipped_repetition_scores_zero() {
    assert_eq!(bleu4(&[toks("the the the the the")], &[toks("the cat sat on the mat")]).unwrap(), 0.0);
}
