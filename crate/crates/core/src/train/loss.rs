//! Teacher-forced negative log-likelihood of a reference sentence.

use crate::autodiff::{ParamGrads, Tape, Var};
use crate::error::{Error, Result};
use crate::model::decoder::{
    attendable, build_slots, extend_attendable, resolve_local, step_graph, target_probability, OutputSpace, StepInput,
};
use crate::model::encoder::encode_row;
use crate::model::Model;
use crate::table::Instance;
use crate::vocab::{BOS_ID, EOS_ID, UNK_ATTR_ID};

/// Probabilities below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Loss graph of one instance.
pub struct InstanceLoss<'p> {
    pub tape: Tape<'p>,
    pub loss: Var,
    /// Output-space ids of the supervised targets (reference words then EOS).
    pub targets: Vec<usize>,
    /// `ln p(target)` of each step, floored.
    pub log_probs: Vec<f64>,
}

impl InstanceLoss<'_> {
    pub fn value(&self) -> f64 {
        self.tape.scalar_value(self.loss)
    }

    /// Number of steps whose probability fell below [`LOG_FLOOR`].
    pub fn floor_hits(&self) -> usize {
        self.tape.floor_hits()
    }
}

/// Build `-sum_t ln p(y_t | y_<t, row)` on a fresh tape. The targets are the
/// reference followed by EOS; out-of-vocabulary words are supervised through
/// their table id when copying is on and as `<unk>` otherwise.
pub fn instance_loss<'p>(model: &'p Model, instance: &Instance) -> Result<InstanceLoss<'p>> {
    let flags = model.config.flags;
    let row = model.input_row(&instance.row)?;
    let mut tape = Tape::new(&model.params);
    let encoded = encode_row(&mut tape, model, &row)?;
    let states = extend_attendable(&mut tape, model, &encoded, flags.plusplus)?;
    let att = attendable(&mut tape, model, &states)?;
    let slots = build_slots(model, &row, flags.plusplus);
    let space = OutputSpace::new(&model.vocab, &slots);

    let mut targets: Vec<usize> = instance
        .reference
        .iter()
        .map(|w| space.target_id(&model.vocab, w, flags.copy))
        .collect();
    targets.push(EOS_ID);

    let mut prev_token = BOS_ID;
    let mut prev_state = encoded.initial_state;
    let mut prev_alpha: Option<Var> = None;
    let mut local_attr_id = UNK_ATTR_ID;
    let mut terms = Vec::with_capacity(targets.len());
    let mut log_probs = Vec::with_capacity(targets.len());
    for &target in &targets {
        let input = StepInput {
            prev_embed_id: space.embed_id(prev_token),
            prev_state,
            prev_alpha,
            local_attr_id,
        };
        let step = step_graph(&mut tape, model, &att, encoded.initial_state, &input)?;
        let p = target_probability(&mut tape, &step, target, &space)?;
        let lp = tape.ln_floored(p, LOG_FLOOR);
        log_probs.push(tape.scalar_value(lp));
        terms.push(lp);

        let alpha_values = step.alpha.map(|a| tape.value(a).to_vec());
        local_attr_id = resolve_local(target, alpha_values.as_deref(), &space, &slots);
        prev_token = target;
        prev_state = step.state;
        prev_alpha = step.alpha;
    }
    let total = tape.sum_scalars(&terms)?;
    let loss = tape.affine(total, -1.0, 0.0);
    Ok(InstanceLoss {
        tape,
        loss,
        targets,
        log_probs,
    })
}

/// Loss value and parameter gradients of one instance.
pub fn loss_and_gradients(model: &Model, instance: &Instance) -> Result<(f64, ParamGrads)> {
    let graph = instance_loss(model, instance)?;
    let value = graph.value();
    let grads = graph.tape.backward(graph.loss)?;
    Ok((value, graph.tape.param_grads(&grads)))
}

/// Mean per-instance loss over a corpus.
pub fn corpus_loss(model: &Model, instances: &[Instance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Domain("loss of an empty corpus".into()));
    }
    let mut total = 0.0;
    for inst in instances {
        total += instance_loss(model, inst)?.value();
    }
    Ok(total / instances.len() as f64)
}
