//! Teacher-forced training with Adadelta, dev-driven step halving and
//! checkpointing.

pub mod checkpoint;
pub mod loss;
pub mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamGrads;
use crate::error::{Error, Result};
use crate::eval::{bleu4, DecodeConfig, NeuralGenerator};
use crate::model::{Model, ModelConfig};
use crate::table::Instance;
use crate::vocab::Vocabulary;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{corpus_loss, instance_loss, loss_and_gradients, InstanceLoss, LOG_FLOOR};
pub use optim::{clip_gradients, Adadelta, PatienceSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub vocab_limit: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub rho: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub patience: usize,
    /// Beam size used when decoding with the trained model.
    pub beam: usize,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            vocab_limit: 20_000,
            batch_size: 1,
            max_epochs: 30,
            rho: 0.95,
            eps: 1e-6,
            clip_norm: 5.0,
            patience: 6,
            beam: 5,
            max_decode_len: 40,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let counts = [
            ("vocab_limit", self.vocab_limit),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("beam", self.beam),
            ("max_decode_len", self.max_decode_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be at least 1")));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Validation("rho must lie in (0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Validation("eps and clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            max_len: self.max_decode_len,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there is no dev set.
    pub dev_bleu: Option<f64>,
    /// Step scale in effect after this epoch's schedule update.
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best dev BLEU, or the last epoch's without a dev set.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Build vocabularies from `train`, initialize a model and train it.
pub fn train(
    train: &[Instance],
    dev: &[Instance],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let vocab = Vocabulary::build(train, config.vocab_limit);
    let attributes = Vocabulary::attributes(train);
    let model = Model::new(config.model, vocab, attributes, config.seed)?;
    train_model(model, train, dev, config, on_epoch)
}

/// Greedy dev BLEU-4.
pub fn dev_bleu(model: &Model, dev: &[Instance], max_len: usize) -> Result<f64> {
    let gen = NeuralGenerator::new(model, DecodeConfig { beam: 1, max_len });
    let hyps = dev
        .iter()
        .map(|inst| gen.decode_row(inst).map(|g| g.tokens))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<String>> = dev.iter().map(|i| i.reference.clone()).collect();
    bleu4(&hyps, &refs)
}

/// Train an existing model. `on_epoch` sees every log record and stops
/// training by returning false.
pub fn train_model(
    mut model: Model,
    train: &[Instance],
    dev: &[Instance],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut optimizer = Adadelta::new(&model.params, config.rho, config.eps);
    let mut schedule = PatienceSchedule::new(config.patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Model, usize)> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = ParamGrads::zeros_like(&model.params);
            for &index in batch {
                let (loss, g) = loss_and_gradients(&model, &train[index])?;
                if !loss.is_finite() || !g.all_finite() {
                    return Err(Error::NonFiniteLoss { index });
                }
                total_loss += loss;
                grads.add_scaled(&g, 1.0 / batch.len() as f64);
            }
            clip_gradients(&mut grads, config.clip_norm);
            optimizer.step(&mut model.params, &grads, schedule.scale);
        }

        let dev_bleu = if dev.is_empty() {
            None
        } else {
            let bleu = dev_bleu(&model, dev, config.max_decode_len)?;
            if schedule.observe(bleu) {
                best = Some((model.clone(), epoch));
            }
            Some(bleu)
        };
        let record = EpochRecord {
            epoch,
            train_loss: total_loss / train.len() as f64,
            dev_bleu,
            scale: schedule.scale,
        };
        history.push(record.clone());
        if !on_epoch(&record) {
            break;
        }
    }

    let last_epoch = history.len();
    let (model, best_epoch) = best.unwrap_or((model, last_epoch));
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
