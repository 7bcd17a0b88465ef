//! Order-free row encoder: one state per column, mean-pooled into `s_0`.

use super::Model;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::table::TableRow;

/// Encoder output on a tape.
#[derive(Clone, Debug)]
pub struct EncodedRow {
    pub column_states: Vec<Var>,
    pub initial_state: Var,
    /// Attribute id of each column in the attribute vocabulary.
    pub attribute_ids: Vec<usize>,
}

/// Encoder output detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedValues {
    pub column_states: Vec<Vec<f64>>,
    pub initial_state: Vec<f64>,
    pub attribute_ids: Vec<usize>,
}

/// Attribute embedding row; unseen attributes share the `<unk_a>` row.
pub fn attribute_lookup(tape: &mut Tape, model: &Model, attribute: &str) -> Result<Var> {
    attribute_embedding(tape, model, model.attributes.attribute_id(attribute))
}

pub(crate) fn attribute_embedding(tape: &mut Tape, model: &Model, attribute_id: usize) -> Result<Var> {
    let table = tape.param(model.ids.attr_embed);
    tape.row(table, attribute_id)
}

/// `h_i = tanh(W_e [e_c; e_a] + b_e)` per column, `s_0 = mean_i h_i`.
///
/// The row is encoded as given; callers apply the caption switch through
/// [`Model::input_row`].
pub fn encode_row(tape: &mut Tape, model: &Model, row: &TableRow) -> Result<EncodedRow> {
    if row.is_empty() {
        return Err(Error::Domain("cannot encode an empty row".into()));
    }
    let ids = &model.ids;
    let cell_table = tape.param(ids.cell_embed);
    let w = tape.param(ids.enc_w);
    let b = tape.param(ids.enc_b);

    let mut column_states = Vec::with_capacity(row.len());
    let mut attribute_ids = Vec::with_capacity(row.len());
    for col in &row.columns {
        let cell = tape.row(cell_table, model.vocab.id(&col.word))?;
        let attr_id = model.attributes.attribute_id(&col.attribute);
        let attr = attribute_embedding(tape, model, attr_id)?;
        let joined = tape.concat(&[cell, attr])?;
        let pre = tape.matmul(joined, w)?;
        let pre = tape.add(pre, b)?;
        column_states.push(tape.tanh(pre));
        attribute_ids.push(attr_id);
    }
    let initial_state = tape.mean(&column_states)?;
    Ok(EncodedRow {
        column_states,
        initial_state,
        attribute_ids,
    })
}

impl Model {
    /// Encode a row (after the caption switch) to plain vectors.
    pub fn encode(&self, row: &TableRow) -> Result<EncodedValues> {
        let row = self.input_row(row)?;
        let mut tape = Tape::new(&self.params);
        let enc = encode_row(&mut tape, self, &row)?;
        Ok(EncodedValues {
            column_states: enc
                .column_states
                .iter()
                .map(|&v| tape.value(v).to_vec())
                .collect(),
            initial_state: tape.value(enc.initial_state).to_vec(),
            attribute_ids: enc.attribute_ids,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::table::{RawTable, normalize_row};
    use crate::vocab::{Vocabulary, UNK_ATTR_ID};

    fn model(seed: u64) -> Model {
        Model::new(
            ModelConfig::small(4, 3, 6),
            Vocabulary::from_words(["x", "y", "z"]),
            Vocabulary::from_words(["a", "b", "c"]),
            seed,
        )
        .unwrap()
    }

    fn row(attrs: &[&str], cells: &[&str]) -> TableRow {
        let raw = RawTable::single_row(
            attrs.iter().map(|s| s.to_string()).collect(),
            cells.iter().map(|s| s.to_string()).collect(),
            String::new(),
        )
        .unwrap();
        normalize_row(&raw, 0).unwrap()
    }

    #[test]
    fn zero_projection_gives_zero_states() {
        let mut m = model(1);
        m.params.tensor_mut(m.ids.enc_w).values_mut().fill(0.0);
        let enc = m.encode(&row(&["a", "b"], &["x", "y"])).unwrap();
        assert!(enc.column_states.iter().flatten().all(|&v| v == 0.0));
        assert!(enc.initial_state.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_column_initial_state_is_that_column() {
        let enc = model(2).encode(&row(&["a"], &["x"])).unwrap();
        assert_eq!(enc.initial_state, enc.column_states[0]);
    }

    #[test]
    fn swapping_columns_permutes_states() {
        let m = model(3);
        let e1 = m.encode(&row(&["a", "b"], &["x", "y"])).unwrap();
        let e2 = m.encode(&row(&["b", "a"], &["y", "x"])).unwrap();
        assert_eq!(e1.column_states[0], e2.column_states[1]);
        assert_eq!(e1.column_states[1], e2.column_states[0]);
        for (a, b) in e1.initial_state.iter().zip(&e2.initial_state) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn states_lie_in_tanh_range() {
        let enc = model(4).encode(&row(&["a", "b", "zzz"], &["x y", "q", "z"])).unwrap();
        assert!(enc.column_states.iter().flatten().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn unseen_attributes_share_the_unk_row() {
        let m = model(5);
        let mut tape = Tape::new(&m.params);
        let seen = attribute_lookup(&mut tape, &m, "a").unwrap();
        let u1 = attribute_lookup(&mut tape, &m, "zzz").unwrap();
        let u2 = attribute_lookup(&mut tape, &m, "qqq").unwrap();
        let table = m.params.tensor(m.ids.attr_embed).values();
        let d = m.config.attr_dim;
        let a_id = m.attributes.attribute_id("a");
        assert_eq!(tape.value(seen), &table[a_id * d..(a_id + 1) * d]);
        assert_eq!(tape.value(u1), &table[UNK_ATTR_ID * d..(UNK_ATTR_ID + 1) * d]);
        assert_eq!(tape.value(u1), tape.value(u2));
    }

    #[test]
    fn empty_row_is_rejected() {
        let m = model(6);
        let mut tape = Tape::new(&m.params);
        assert!(encode_row(&mut tape, &m, &TableRow { columns: vec![] }).is_err());
    }
}
