//! Table-aware GRU decoder.
//!
//! One step, given the previous token `y`, previous state `s` and previous
//! attention `a_prev` over the attendable states `H`:
//!
//! ```text
//! alpha = softmax_i( v . tanh(W_s s + W_h H_i + W_cov (a_prev . H) + b) )
//! c     = alpha . H
//! s'    = GRU([embed(y); c], s)
//! r     = [embed(y); s'; c; s_0; l]          (s_0 / l zeroed when switched off)
//! beta  = softmax(W_o tanh(W_m r + b_m) + b_o)
//! g     = sigmoid(w_g . r + b_g)
//! p(w)  = (1 - g) beta(w) + g * sum_{i: surface(H_i) = w} alpha_i
//! ```
//!
//! `l` is the attribute embedding of the column `y` was taken from, or
//! `<unk_a>` when `y` is not a table word. The query uses the previous state
//! because the new state itself depends on the context.

use super::encoder::{attribute_embedding, EncodedRow, EncodedValues};
use super::search::SearchModel;
use super::Model;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::table::TableRow;
use crate::vocab::{Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK_ATTR_ID, UNK_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    Cell,
    Attribute,
}

/// One attendable state and the word copying it emits.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    pub surface: String,
    /// Index of the column in the (caption-filtered) row.
    pub column: usize,
    pub attribute: String,
    pub attribute_id: usize,
    pub kind: SlotKind,
}

impl Slot {
    /// `word[attribute]` for cell states, `[attribute]` for attribute states.
    pub fn label(&self) -> String {
        match self.kind {
            SlotKind::Cell => format!("{}[{}]", self.surface, self.attribute),
            SlotKind::Attribute => format!("[{}]", self.attribute),
        }
    }
}

/// Copy surface of an attribute; multi-word attributes are joined with `_`
/// so that the copied token has no whitespace.
pub fn attribute_surface(attribute: &str) -> String {
    attribute.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Attendable slots: one per column, then one per column attribute when
/// `plusplus` is on.
pub fn build_slots(model: &Model, row: &TableRow, plusplus: bool) -> Vec<Slot> {
    let mut slots: Vec<Slot> = row
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| Slot {
            surface: c.word.clone(),
            column: i,
            attribute: c.attribute.clone(),
            attribute_id: model.attributes.attribute_id(&c.attribute),
            kind: SlotKind::Cell,
        })
        .collect();
    if plusplus {
        let attr_slots: Vec<Slot> = slots
            .iter()
            .map(|s| Slot {
                surface: attribute_surface(&s.attribute),
                kind: SlotKind::Attribute,
                ..s.clone()
            })
            .collect();
        slots.extend(attr_slots);
    }
    slots
}

/// Per-instance output ids: the vocabulary followed by table words that are
/// not in it.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpace {
    vocab_size: usize,
    extended: Vec<String>,
    slot_ids: Vec<usize>,
}

impl OutputSpace {
    pub fn new(vocab: &Vocabulary, slots: &[Slot]) -> Self {
        let mut extended: Vec<String> = Vec::new();
        let slot_ids = slots
            .iter()
            .map(|s| match vocab.get(&s.surface) {
                Some(id) => id,
                None => {
                    let pos = extended.iter().position(|w| *w == s.surface).unwrap_or_else(|| {
                        extended.push(s.surface.clone());
                        extended.len() - 1
                    });
                    vocab.len() + pos
                }
            })
            .collect();
        OutputSpace {
            vocab_size: vocab.len(),
            extended,
            slot_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.vocab_size + self.extended.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Output id emitted by copying each slot.
    pub fn slot_ids(&self) -> &[usize] {
        &self.slot_ids
    }

    pub fn slots_of(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.slot_ids
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s == id)
            .map(|(i, _)| i)
    }

    /// Supervision id of a reference word: its vocabulary id, else its
    /// table id when copying is on, else `<unk>`.
    pub fn target_id(&self, vocab: &Vocabulary, word: &str, copy: bool) -> usize {
        if let Some(id) = vocab.get(word) {
            return id;
        }
        if copy {
            if let Some(pos) = self.extended.iter().position(|w| w == word) {
                return self.vocab_size + pos;
            }
        }
        UNK_ID
    }

    /// Row of the target embedding used when `id` is fed back as input.
    pub fn embed_id(&self, id: usize) -> usize {
        if id < self.vocab_size {
            id
        } else {
            UNK_ID
        }
    }

    pub fn surface<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> &'a str {
        if id < self.vocab_size {
            vocab.word(id).unwrap_or("<unk>")
        } else {
            &self.extended[id - self.vocab_size]
        }
    }

    pub fn is_table_word(&self, id: usize) -> bool {
        self.slot_ids.contains(&id)
    }
}

/// Attribute id fed as local information after emitting `token`: the
/// attribute of the matching slot with the highest previous attention,
/// or `<unk_a>` when the token is not a table word.
pub fn resolve_local(token: usize, alpha: Option<&[f64]>, space: &OutputSpace, slots: &[Slot]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for i in space.slots_of(token) {
        let weight = alpha.map_or(0.0, |a| a[i]);
        if best.is_none_or(|(_, w)| weight > w) {
            best = Some((i, weight));
        }
    }
    best.map_or(UNK_ATTR_ID, |(i, _)| slots[i].attribute_id)
}

/// Attendable states stacked as a matrix, with the column projection of the
/// attention scorer precomputed.
#[derive(Clone, Copy, Debug)]
pub struct Attendable {
    pub states: Var,
    pub projected: Var,
    pub len: usize,
}

/// Column states, followed by projected attribute embeddings when
/// `plusplus` is on.
pub fn extend_attendable(tape: &mut Tape, model: &Model, encoded: &EncodedRow, plusplus: bool) -> Result<Vec<Var>> {
    let mut states = encoded.column_states.clone();
    if plusplus {
        let w = tape.param(model.ids.attr_state_w);
        let b = tape.param(model.ids.attr_state_b);
        for &attr_id in &encoded.attribute_ids {
            let e = attribute_embedding(tape, model, attr_id)?;
            let proj = tape.matmul(e, w)?;
            states.push(tape.add(proj, b)?);
        }
    }
    Ok(states)
}

pub fn attendable(tape: &mut Tape, model: &Model, states: &[Var]) -> Result<Attendable> {
    if states.is_empty() {
        return Err(Error::Domain("no attendable states".into()));
    }
    let matrix = tape.stack(states)?;
    let w = tape.param(model.ids.att_column);
    let projected = tape.matmul(matrix, w)?;
    Ok(Attendable {
        states: matrix,
        projected,
        len: states.len(),
    })
}

/// Coverage-aware attention weights. `prev_alpha = None` is the all-zero
/// previous attention of the first step.
pub fn attention_step(
    tape: &mut Tape,
    model: &Model,
    att: &Attendable,
    query: Var,
    prev_alpha: Option<Var>,
) -> Result<Var> {
    let ids = &model.ids;
    let ws = tape.param(ids.att_state);
    let b = tape.param(ids.att_bias);
    let v = tape.param(ids.att_v);
    let q = tape.matmul(query, ws)?;
    let mut shared = tape.add(q, b)?;
    if let Some(prev) = prev_alpha {
        let wc = tape.param(ids.att_coverage);
        let covered = context(tape, prev, att)?;
        let cov = tape.matmul(covered, wc)?;
        shared = tape.add(shared, cov)?;
    }
    let hidden = tape.add_row(att.projected, shared)?;
    let hidden = tape.tanh(hidden);
    let scores = tape.matmul(hidden, v)?;
    tape.softmax(scores)
}

/// `c = sum_i alpha_i H_i`
pub fn context(tape: &mut Tape, alpha: Var, att: &Attendable) -> Result<Var> {
    tape.matmul(alpha, att.states)
}

/// GRU transition on input `x`:
/// `z = sig(x W_z + s U_z + b_z)`, `r = sig(x W_r + s U_r + b_r)`,
/// `n = tanh(x W_n + (r * s) U_n + b_n)`, `s' = (1 - z) * s + z * n`.
pub fn gru_step(tape: &mut Tape, model: &Model, x: Var, prev: Var) -> Result<Var> {
    let ids = &model.ids;
    let gate = |tape: &mut Tape, w, u, b, h: Var| -> Result<Var> {
        let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let sum = tape.add(xw, hu)?;
        tape.add(sum, b)
    };
    let z = gate(tape, ids.gru_wz, ids.gru_uz, ids.gru_bz, prev)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, ids.gru_wr, ids.gru_ur, ids.gru_br, prev)?;
    let r = tape.sigmoid(r);
    let reset = tape.mul(r, prev)?;
    let n = gate(tape, ids.gru_wn, ids.gru_un, ids.gru_bn, reset)?;
    let n = tape.tanh(n);
    let keep = tape.one_minus(z);
    let carried = tape.mul(keep, prev)?;
    let fresh = tape.mul(z, n)?;
    tape.add(carried, fresh)
}

/// Inputs of the output layer and the copy gate.
#[derive(Clone, Copy, Debug)]
pub struct Readout {
    pub prev_embed: Var,
    pub state: Var,
    pub context: Var,
    pub initial_state: Var,
    pub local: Var,
}

fn readout_features(tape: &mut Tape, model: &Model, r: &Readout) -> Result<Var> {
    let flags = model.config.flags;
    let global = if flags.global {
        r.initial_state
    } else {
        tape.zeros(model.config.hidden_dim)?
    };
    let local = if flags.local {
        r.local
    } else {
        tape.zeros(model.config.attr_dim)?
    };
    tape.concat(&[r.prev_embed, r.state, r.context, global, local])
}

/// Vocabulary distribution `beta`.
pub fn generate_distribution(tape: &mut Tape, model: &Model, readout: &Readout) -> Result<Var> {
    let features = readout_features(tape, model, readout)?;
    generate_from_features(tape, model, features)
}

fn generate_from_features(tape: &mut Tape, model: &Model, features: Var) -> Result<Var> {
    let ids = &model.ids;
    let (wm, bm) = (tape.param(ids.out_wm), tape.param(ids.out_bm));
    let (wo, bo) = (tape.param(ids.out_wo), tape.param(ids.out_bo));
    let hidden = tape.matmul(features, wm)?;
    let hidden = tape.add(hidden, bm)?;
    let hidden = tape.tanh(hidden);
    let logits = tape.matmul(hidden, wo)?;
    let logits = tape.add(logits, bo)?;
    tape.softmax(logits)
}

/// Scalar copy gate `g` in (0, 1).
pub fn copy_gate(tape: &mut Tape, model: &Model, readout: &Readout) -> Result<Var> {
    let features = readout_features(tape, model, readout)?;
    gate_from_features(tape, model, features)
}

fn gate_from_features(tape: &mut Tape, model: &Model, features: Var) -> Result<Var> {
    let (w, b) = (tape.param(model.ids.gate_w), tape.param(model.ids.gate_b));
    let pre = tape.matmul(features, w)?;
    let pre = tape.add(pre, b)?;
    Ok(tape.sigmoid(pre))
}

/// `p(w) = (1 - g) beta(w) + g * sum of alpha over slots emitting w`,
/// over the whole output space.
pub fn mixture_distribution(gate: f64, alpha: &[f64], beta: &[f64], space: &OutputSpace) -> Vec<f64> {
    let mut p = vec![0.0; space.len()];
    for (dst, b) in p.iter_mut().zip(beta) {
        *dst = (1.0 - gate) * b;
    }
    for (slot, &a) in alpha.iter().enumerate() {
        p[space.slot_ids()[slot]] += gate * a;
    }
    p
}

/// Tape-side inputs of one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct StepInput {
    /// Target-embedding row of the previous token.
    pub prev_embed_id: usize,
    pub prev_state: Var,
    pub prev_alpha: Option<Var>,
    pub local_attr_id: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct StepGraph {
    /// `None` when attention is switched off.
    pub alpha: Option<Var>,
    pub context: Var,
    pub state: Var,
    pub beta: Var,
    /// `None` when copying is switched off.
    pub gate: Option<Var>,
}

pub fn step_graph(
    tape: &mut Tape,
    model: &Model,
    att: &Attendable,
    initial_state: Var,
    input: &StepInput,
) -> Result<StepGraph> {
    let flags = model.config.flags;
    let (alpha, ctx) = if flags.attention {
        let alpha = attention_step(tape, model, att, input.prev_state, input.prev_alpha)?;
        (Some(alpha), context(tape, alpha, att)?)
    } else {
        (None, tape.zeros(model.config.hidden_dim)?)
    };
    let embed_table = tape.param(model.ids.word_embed);
    let prev_embed = tape.row(embed_table, input.prev_embed_id)?;
    let x = tape.concat(&[prev_embed, ctx])?;
    let state = gru_step(tape, model, x, input.prev_state)?;
    let local = attribute_embedding(tape, model, input.local_attr_id)?;
    let readout = Readout {
        prev_embed,
        state,
        context: ctx,
        initial_state,
        local,
    };
    let features = readout_features(tape, model, &readout)?;
    let beta = generate_from_features(tape, model, features)?;
    let gate = if flags.copy {
        Some(gate_from_features(tape, model, features)?)
    } else {
        None
    };
    Ok(StepGraph {
        alpha,
        context: ctx,
        state,
        beta,
        gate,
    })
}

/// Probability of `target` at this step, on the tape.
pub fn target_probability(tape: &mut Tape, step: &StepGraph, target: usize, space: &OutputSpace) -> Result<Var> {
    let Some(gate) = step.gate else {
        return tape.pick(step.beta, target);
    };
    let alpha = step.alpha.ok_or_else(|| Error::Domain("copying requires attention".into()))?;
    let slots: Vec<usize> = space.slots_of(target).collect();
    let mut p = if target < space.vocab_size() {
        let keep = tape.one_minus(gate);
        let b = tape.pick(step.beta, target)?;
        Some(tape.mul(keep, b)?)
    } else {
        None
    };
    if !slots.is_empty() {
        let a = tape.pick_sum(alpha, &slots)?;
        let copied = tape.mul(gate, a)?;
        p = Some(match p {
            Some(gen) => tape.add(gen, copied)?,
            None => copied,
        });
    }
    match p {
        Some(p) => Ok(p),
        None => Ok(tape.scalar(0.0)),
    }
}

/// Decoder state carried between inference steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeState {
    /// Index of the next step, starting at 1.
    pub t: usize,
    pub state: Vec<f64>,
    pub prev_alpha: Option<Vec<f64>>,
    pub prev_token: usize,
    pub local_attr_id: usize,
    /// Sum of the attention of all completed steps.
    pub cumulative: Vec<f64>,
}

/// Everything computed at one inference step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStep {
    pub t: usize,
    pub state: Vec<f64>,
    /// Attention over the attendable states (uniform when attention is off).
    pub alpha: Vec<f64>,
    /// Attention summed over steps 1..=t.
    pub cumulative: Vec<f64>,
    pub context: Vec<f64>,
    /// Copy gate; `None` when copying is off.
    pub gate: Option<f64>,
    pub beta: Vec<f64>,
    /// Final distribution over the output space.
    pub p: Vec<f64>,
}

/// Inference over one row.
pub struct DecodeSession<'m> {
    model: &'m Model,
    encoded: EncodedValues,
    slots: Vec<Slot>,
    space: OutputSpace,
}

impl<'m> DecodeSession<'m> {
    pub fn new(model: &'m Model, row: &TableRow) -> Result<Self> {
        let row = model.input_row(row)?;
        let encoded = model.encode(&row)?;
        let slots = build_slots(model, &row, model.config.flags.plusplus);
        let space = OutputSpace::new(&model.vocab, &slots);
        Ok(DecodeSession {
            model,
            encoded,
            slots,
            space,
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn space(&self) -> &OutputSpace {
        &self.space
    }

    pub fn encoded(&self) -> &EncodedValues {
        &self.encoded
    }

    pub fn surface(&self, id: usize) -> &str {
        self.space.surface(&self.model.vocab, id)
    }

    pub fn initial(&self) -> DecodeState {
        DecodeState {
            t: 1,
            state: self.encoded.initial_state.clone(),
            prev_alpha: None,
            prev_token: BOS_ID,
            local_attr_id: UNK_ATTR_ID,
            cumulative: vec![0.0; self.slots.len()],
        }
    }

    pub fn step(&self, state: &DecodeState) -> Result<DecoderStep> {
        let model = self.model;
        let mut tape = Tape::new(&model.params);
        let columns = self
            .encoded
            .column_states
            .iter()
            .map(|c| tape.vector(c.clone()))
            .collect::<Result<Vec<_>>>()?;
        let initial_state = tape.vector(self.encoded.initial_state.clone())?;
        let encoded = EncodedRow {
            column_states: columns,
            initial_state,
            attribute_ids: self.encoded.attribute_ids.clone(),
        };
        let states = extend_attendable(&mut tape, model, &encoded, model.config.flags.plusplus)?;
        let att = attendable(&mut tape, model, &states)?;
        let prev_state = tape.vector(state.state.clone())?;
        let prev_alpha = match &state.prev_alpha {
            Some(a) => Some(tape.vector(a.clone())?),
            None => None,
        };
        let input = StepInput {
            prev_embed_id: self.space.embed_id(state.prev_token),
            prev_state,
            prev_alpha,
            local_attr_id: state.local_attr_id,
        };
        let graph = step_graph(&mut tape, model, &att, initial_state, &input)?;

        let alpha = match graph.alpha {
            Some(a) => tape.value(a).to_vec(),
            None => vec![1.0 / att.len as f64; att.len],
        };
        let beta = tape.value(graph.beta).to_vec();
        let gate = graph.gate.map(|g| tape.scalar_value(g));
        let p = match gate {
            Some(g) => mixture_distribution(g, &alpha, &beta, &self.space),
            None => {
                let mut p = beta.clone();
                p.resize(self.space.len(), 0.0);
                p
            }
        };
        let cumulative = state.cumulative.iter().zip(&alpha).map(|(c, a)| c + a).collect();
        Ok(DecoderStep {
            t: state.t,
            state: tape.value(graph.state).to_vec(),
            alpha,
            cumulative,
            context: tape.value(graph.context).to_vec(),
            gate,
            beta,
            p,
        })
    }

    pub fn advance(&self, state: &DecodeState, step: &DecoderStep, token: usize) -> DecodeState {
        let attention = self.model.config.flags.attention;
        let alpha = attention.then_some(step.alpha.as_slice());
        DecodeState {
            t: state.t + 1,
            state: step.state.clone(),
            prev_alpha: alpha.map(<[f64]>::to_vec),
            prev_token: token,
            local_attr_id: resolve_local(token, alpha, &self.space, &self.slots),
            cumulative: step.cumulative.clone(),
        }
    }
}

impl SearchModel for DecodeSession<'_> {
    type State = DecodeState;
    type Record = DecoderStep;

    fn initial(&self) -> DecodeState {
        DecodeSession::initial(self)
    }

    fn eos(&self) -> usize {
        EOS_ID
    }

    fn is_candidate(&self, token: usize) -> bool {
        !matches!(token, PAD_ID | BOS_ID | UNK_ATTR_ID)
    }

    fn step(&self, state: &DecodeState) -> Result<(Vec<f64>, DecoderStep)> {
        let step = DecodeSession::step(self, state)?;
        Ok((step.p.clone(), step))
    }

    fn advance(&self, state: &DecodeState, record: &DecoderStep, token: usize) -> DecodeState {
        DecodeSession::advance(self, state, record, token)
    }
}
