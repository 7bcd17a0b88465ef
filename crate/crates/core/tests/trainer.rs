mod common;

use common::{fd_check_model, instance, small_model};
use tabletext::autodiff::ParamGrads;
use tabletext::model::ParamIds;
use tabletext::synthetic;
use tabletext::train::{
    clip_gradients, corpus_loss, instance_loss, loss_and_gradients, train, train_model, Adadelta, TrainConfig,
};
use tabletext::vocab::EOS_ID;
use tabletext::{Error, Model, ModelConfig, ModelFlags};

fn zero(model: &mut Model, pick: fn(&ParamIds) -> tabletext::autodiff::ParamId) {
    let id = pick(&model.ids);
    model.params.tensor_mut(id).values_mut().fill(0.0);
}

#[test]
fn certain_targets_cost_nothing() {
    let flags = ModelFlags {
        copy: false,
        ..ModelFlags::default()
    };
    let mut m = small_model(ModelConfig::small(4, 4, 5).with_flags(flags), &["a"], &["x"], 1);
    zero(&mut m, |i| i.out_wo);
    m.params.tensor_mut(m.ids.out_bo).values_mut()[EOS_ID] = 1000.0;
    // "<eos>" is an ordinary vocabulary id, so every target is EOS
    let inst = instance(&["x"], &["a"], "", "<eos>");
    let loss = instance_loss(&m, &inst).unwrap();
    assert_eq!(loss.targets, vec![EOS_ID, EOS_ID]);
    assert_eq!(loss.value(), 0.0);
}

#[test]
fn uniform_generation_costs_ln_v_per_token() {
    let flags = ModelFlags {
        copy: false,
        ..ModelFlags::default()
    };
    let mut m = small_model(ModelConfig::small(4, 4, 5).with_flags(flags), &["a", "b", "c"], &["x"], 2);
    assert_eq!(m.vocab.len(), 8);
    zero(&mut m, |i| i.out_wo);
    zero(&mut m, |i| i.out_bo);
    // two words plus EOS; "zzz" is out of vocabulary and supervised as <unk>
    let inst = instance(&["x"], &["zzz"], "", "a zzz");
    let loss = instance_loss(&m, &inst).unwrap();
    assert_eq!(loss.targets.len(), 3);
    assert!((loss.value() - 3.0 * 8f64.ln()).abs() < 1e-12);
    assert_eq!(loss.floor_hits(), 0);

    let two = [inst.clone(), instance(&["x"], &["a"], "", "b")];
    let mean = corpus_loss(&m, &two).unwrap();
    assert!((mean - (3.0 + 2.0) * 8f64.ln() / 2.0).abs() < 1e-12);
}

fn gradient_model(flags: ModelFlags) -> Model {
    let words: Vec<String> = (0..15).map(|i| format!("w{i}")).collect();
    let words: Vec<&str> = words.iter().map(String::as_str).collect();
    small_model(ModelConfig::small(8, 8, 12).with_flags(flags), &words, &["name", "team"], 3)
}

#[test]
fn model_gradients_match_finite_differences_for_each_variant() {
    let inst = instance(&["name", "team"], &["w1", "oov"], "", "w1 oov w2");
    for flags in [
        ModelFlags { plusplus: true, ..ModelFlags::default() },
        ModelFlags { copy: false, ..ModelFlags::default() },
        ModelFlags { global: false, local: false, ..ModelFlags::default() },
        ModelFlags::tc_nlm(),
    ] {
        let (err, worst) = fd_check_model(&gradient_model(flags), &inst);
        assert!(err < 1e-4, "{flags:?}: {err} at {worst}");
    }
}

#[test]
fn one_small_step_lowers_the_instance_loss() {
    let inst = instance(&["name", "team"], &["w1", "oov"], "", "w1 plays for oov");
    for seed in 0..5 {
        let mut m = gradient_model(ModelFlags::default());
        m = Model::new(m.config, m.vocab.clone(), m.attributes.clone(), seed).unwrap();
        let (before, mut grads) = loss_and_gradients(&m, &inst).unwrap();
        clip_gradients(&mut grads, 5.0);
        let mut decreased = false;
        let mut scale = 1e-3;
        for _ in 0..4 {
            let mut probe = m.clone();
            let mut opt = Adadelta::new(&probe.params, 0.95, 1e-6);
            opt.step(&mut probe.params, &grads, scale);
            if instance_loss(&probe, &inst).unwrap().value() < before {
                decreased = true;
                break;
            }
            scale *= 0.1;
        }
        assert!(decreased, "seed {seed}");
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::small(8, 8, 12),
        max_epochs: 3,
        max_decode_len: 12,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn seeded_training_is_deterministic() {
    let corpus = synthetic::generate(6, 3, 1).unwrap().instances;
    let run = || train(&corpus, &corpus[..2], &tiny_config(), |_| true).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    for r in &a.history {
        assert!(r.train_loss.is_finite());
        assert!(r.dev_bleu.is_some());
    }
}

#[test]
fn no_dev_set_keeps_the_scale_and_last_model() {
    let corpus = synthetic::generate(4, 2, 2).unwrap().instances;
    let out = train(&corpus, &[], &tiny_config(), |_| true).unwrap();
    assert_eq!(out.history.len(), 3);
    assert!(out.history.iter().all(|r| r.dev_bleu.is_none() && r.scale == 1.0));
    assert_eq!(out.best_epoch, 3);
}

#[test]
fn callback_stops_training() {
    let corpus = synthetic::generate(4, 2, 3).unwrap().instances;
    let out = train(&corpus, &[], &tiny_config(), |r| r.epoch < 2).unwrap();
    assert_eq!(out.history.len(), 2);
}

#[test]
fn training_lowers_the_loss() {
    let corpus = synthetic::generate(8, 2, 4).unwrap().instances;
    let config = TrainConfig {
        max_epochs: 8,
        ..tiny_config()
    };
    let out = train(&corpus, &[], &config, |_| true).unwrap();
    assert!(out.history.last().unwrap().train_loss < out.history[0].train_loss);
}

#[test]
fn non_finite_loss_names_the_instance() {
    let corpus = synthetic::generate(5, 2, 6).unwrap().instances;
    let config = tiny_config();
    let vocab = tabletext::Vocabulary::build(&corpus, config.vocab_limit);
    let attrs = tabletext::Vocabulary::attributes(&corpus);
    let mut m = Model::new(config.model, vocab, attrs, 1).unwrap();
    // poison the embedding of a cell word that only instance 3 contains
    let word = corpus[3]
        .row
        .cell_words()
        .find(|w| corpus.iter().enumerate().all(|(i, inst)| i == 3 || !inst.row.words().any(|x| x == *w)))
        .unwrap()
        .to_owned();
    let row = m.vocab.get(&word).unwrap();
    let dw = m.config.word_dim;
    m.params.tensor_mut(m.ids.cell_embed).values_mut()[row * dw] = f64::NAN;
    match train_model(m, &corpus, &[], &config, |_| true) {
        Err(Error::NonFiniteLoss { index }) => assert_eq!(index, 3),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let corpus = synthetic::generate(2, 1, 7).unwrap().instances;
    for bad in [
        TrainConfig { patience: 0, ..tiny_config() },
        TrainConfig { batch_size: 0, ..tiny_config() },
        TrainConfig { rho: 1.0, ..tiny_config() },
        TrainConfig { clip_norm: -1.0, ..tiny_config() },
    ] {
        assert!(matches!(train(&corpus, &[], &bad, |_| true), Err(Error::Validation(_))));
    }
    assert!(train(&[], &[], &tiny_config(), |_| true).is_err());
}

#[test]
fn batched_updates_stay_finite() {
    let corpus = synthetic::generate(4, 2, 8).unwrap().instances;
    let config = TrainConfig {
        batch_size: 4,
        max_epochs: 1,
        ..tiny_config()
    };
    let out = train(&corpus, &[], &config, |_| true).unwrap();
    assert!(out.history[0].train_loss.is_finite());
    let mut g = ParamGrads::zeros_like(&out.model.params);
    for inst in &corpus {
        let (_, gi) = loss_and_gradients(&out.model, inst).unwrap();
        g.add_scaled(&gi, 0.25);
    }
    assert!(g.all_finite());
}
