//! Table-to-sequence network: parameters, encoder, decoder and search.

pub mod decoder;
pub mod encoder;
pub mod search;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::table::TableRow;
use crate::vocab::Vocabulary;

pub use decoder::{DecodeSession, DecodeState, DecoderStep, OutputSpace, Slot, SlotKind};
pub use encoder::{EncodedRow, EncodedValues};
pub use search::{beam_search, greedy_search, Hypothesis, SearchModel};

/// Component switches. The defaults are the full copy model without
/// attribute copying.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    pub copy: bool,
    pub global: bool,
    pub local: bool,
    pub caption: bool,
    /// Attribute embeddings become attendable, copyable states.
    pub plusplus: bool,
    pub attention: bool,
}

impl Default for ModelFlags {
    fn default() -> Self {
        ModelFlags {
            copy: true,
            global: true,
            local: true,
            caption: true,
            plusplus: false,
            attention: true,
        }
    }
}

impl ModelFlags {
    /// Table-conditioned RNN language model: no attention, no copying,
    /// global and local factors kept.
    pub fn tc_nlm() -> Self {
        ModelFlags {
            copy: false,
            attention: false,
            ..Self::default()
        }
    }

    pub fn is_tc_nlm(&self) -> bool {
        !self.copy && !self.attention && !self.plusplus
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub attr_dim: usize,
    pub hidden_dim: usize,
    pub init_std: f64,
    pub flags: ModelFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            attr_dim: 300,
            hidden_dim: 500,
            init_std: 0.08,
            flags: ModelFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn small(word_dim: usize, attr_dim: usize, hidden_dim: usize) -> Self {
        ModelConfig {
            word_dim,
            attr_dim,
            hidden_dim,
            ..Self::default()
        }
    }

    pub fn with_flags(mut self, flags: ModelFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.attr_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Validation("model dimensions must be positive".into()));
        }
        if (self.flags.copy || self.flags.plusplus) && !self.flags.attention {
            return Err(Error::Validation("copying requires attention".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Validation("init_std must be positive".into()));
        }
        Ok(())
    }

    /// Width of `[embed(y); s_t; c_t; s_0; l]`, the output-layer and gate input.
    pub fn readout_dim(&self) -> usize {
        self.word_dim + 3 * self.hidden_dim + self.attr_dim
    }
}

/// Handles of every learnable array, grouped by component.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamIds {
    // encoder
    pub cell_embed: ParamId,
    pub attr_embed: ParamId,
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    // Table2Seq++ attribute states
    pub attr_state_w: ParamId,
    pub attr_state_b: ParamId,
    // attention scorer
    pub att_state: ParamId,
    pub att_column: ParamId,
    pub att_coverage: ParamId,
    pub att_bias: ParamId,
    pub att_v: ParamId,
    // decoder GRU, input = [embed(y); c_t]
    pub word_embed: ParamId,
    pub gru_wz: ParamId,
    pub gru_uz: ParamId,
    pub gru_bz: ParamId,
    pub gru_wr: ParamId,
    pub gru_ur: ParamId,
    pub gru_br: ParamId,
    pub gru_wn: ParamId,
    pub gru_un: ParamId,
    pub gru_bn: ParamId,
    // readout
    pub out_wm: ParamId,
    pub out_bm: ParamId,
    pub out_wo: ParamId,
    pub out_bo: ParamId,
    // copy gate
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

/// Name and shape of every parameter, in store order.
pub fn param_layout(config: &ModelConfig, vocab_size: usize, attr_vocab_size: usize) -> Vec<(&'static str, Vec<usize>)> {
    let (dw, da, dh) = (config.word_dim, config.attr_dim, config.hidden_dim);
    let gru_in = dw + dh;
    let readout = config.readout_dim();
    vec![
        ("encoder.cell_embed", vec![vocab_size, dw]),
        ("encoder.attr_embed", vec![attr_vocab_size, da]),
        ("encoder.w", vec![dw + da, dh]),
        ("encoder.b", vec![dh]),
        ("attr_state.w", vec![da, dh]),
        ("attr_state.b", vec![dh]),
        ("attention.w_state", vec![dh, dh]),
        ("attention.w_column", vec![dh, dh]),
        ("attention.w_coverage", vec![dh, dh]),
        ("attention.b", vec![dh]),
        ("attention.v", vec![dh]),
        ("decoder.word_embed", vec![vocab_size, dw]),
        ("gru.w_z", vec![gru_in, dh]),
        ("gru.u_z", vec![dh, dh]),
        ("gru.b_z", vec![dh]),
        ("gru.w_r", vec![gru_in, dh]),
        ("gru.u_r", vec![dh, dh]),
        ("gru.b_r", vec![dh]),
        ("gru.w_n", vec![gru_in, dh]),
        ("gru.u_n", vec![dh, dh]),
        ("gru.b_n", vec![dh]),
        ("readout.w_m", vec![readout, dh]),
        ("readout.b_m", vec![dh]),
        ("readout.w_o", vec![dh, vocab_size]),
        ("readout.b_o", vec![vocab_size]),
        ("gate.w", vec![readout, 1]),
        ("gate.b", vec![1]),
    ]
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.contains(".b_")
}

impl ParamIds {
    fn from_order(ids: &[ParamId]) -> ParamIds {
        let id = |i: usize| ids[i];
        ParamIds {
            cell_embed: id(0),
            attr_embed: id(1),
            enc_w: id(2),
            enc_b: id(3),
            attr_state_w: id(4),
            attr_state_b: id(5),
            att_state: id(6),
            att_column: id(7),
            att_coverage: id(8),
            att_bias: id(9),
            att_v: id(10),
            word_embed: id(11),
            gru_wz: id(12),
            gru_uz: id(13),
            gru_bz: id(14),
            gru_wr: id(15),
            gru_ur: id(16),
            gru_br: id(17),
            gru_wn: id(18),
            gru_un: id(19),
            gru_bn: id(20),
            out_wm: id(21),
            out_bm: id(22),
            out_wo: id(23),
            out_bo: id(24),
            gate_w: id(25),
            gate_b: id(26),
        }
    }
}

/// Learnable parameters together with the vocabularies that index them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub attributes: Vocabulary,
    pub params: ParamStore,
    pub ids: ParamIds,
}

impl Model {
    /// Gaussian-initialized weights and embeddings; zero biases.
    pub fn new(config: ModelConfig, vocab: Vocabulary, attributes: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_std)
            .map_err(|e| Error::Validation(format!("bad init_std: {e}")))?;
        let tensors = param_layout(&config, vocab.len(), attributes.len())
            .into_iter()
            .map(|(name, shape)| {
                let numel: usize = shape.iter().product();
                let values = if is_bias(name) {
                    vec![0.0; numel]
                } else {
                    (0..numel).map(|_| normal.sample(&mut rng)).collect()
                };
                Ok((name, Tensor::new(shape, values)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_tensors(config, vocab, attributes, tensors))
    }

    pub(crate) fn from_tensors(
        config: ModelConfig,
        vocab: Vocabulary,
        attributes: Vocabulary,
        tensors: Vec<(&str, Tensor)>,
    ) -> Self {
        let mut params = ParamStore::new();
        let order: Vec<ParamId> = tensors
            .into_iter()
            .map(|(name, t)| params.add(name, t))
            .collect();
        Model {
            config,
            vocab,
            attributes,
            params,
            ids: ParamIds::from_order(&order),
        }
    }

    /// Same parameters, different component switches.
    pub fn with_flags(&self, flags: ModelFlags) -> Model {
        let mut m = self.clone();
        m.config.flags = flags;
        m
    }

    pub fn flags(&self) -> ModelFlags {
        self.config.flags
    }

    /// The row as the model sees it (caption columns dropped when the
    /// caption switch is off).
    pub fn input_row(&self, row: &TableRow) -> Result<TableRow> {
        let row = if self.config.flags.caption {
            row.clone()
        } else {
            row.without_caption()
        };
        if row.is_empty() {
            return Err(Error::Domain("row has no columns to encode".into()));
        }
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_ids() {
        let cfg = ModelConfig::small(4, 3, 5);
        let m = Model::new(cfg, Vocabulary::from_words(["a"]), Vocabulary::from_words(["x"]), 1).unwrap();
        assert_eq!(m.params.len(), 27);
        assert_eq!(m.params.get(m.ids.gate_b).name, "gate.b");
        assert_eq!(m.params.tensor(m.ids.out_wo).shape(), &[5, 6]);
        assert_eq!(m.params.tensor(m.ids.gate_w).shape(), &[4 + 15 + 3, 1]);
        assert!(m.params.tensor(m.ids.enc_b).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let mk = |seed| {
            Model::new(ModelConfig::small(4, 4, 4), Vocabulary::from_words(["a"]), Vocabulary::from_words(["x"]), seed).unwrap()
        };
        assert_eq!(mk(3), mk(3));
        assert_ne!(mk(3).params, mk(4).params);
    }
}
