//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use tabletext::autodiff::{Tape, Tensor, Var};
use tabletext::model::SearchModel;
use tabletext::table::tokenize;
use tabletext::train::loss_and_gradients;
use tabletext::{Instance, Model, ModelConfig, RawTable, Vocabulary};

pub const FD_STEP: f64 = 1e-5;

/// Error of an analytic gradient against a central difference, relative to
/// `max(1, |analytic|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Largest gradient error over every entry of every input of a scalar
/// function built on a tape from input leaves.
pub fn fd_check_inputs(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let store = tabletext::autodiff::ParamStore::new();
    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let root = build(&mut tape, &vars);
        (tape.scalar_value(root), tape, vars, root)
    };
    let (_, tape, vars, root) = eval(inputs);
    let grads = tape.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[k] -= FD_STEP;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][k], numeric));
        }
    }
    worst
}

/// Largest gradient error of the instance loss over every model parameter,
/// with the name of the worst parameter.
pub fn fd_check_model(model: &Model, instance: &Instance) -> (f64, String) {
    let (_, grads) = loss_and_gradients(model, instance).unwrap();
    let mut probe = model.clone();
    let mut worst = (0.0f64, String::new());
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for k in 0..model.params.tensor(id).len() {
            let orig = probe.params.tensor(id).values()[k];
            probe.params.tensor_mut(id).values_mut()[k] = orig + FD_STEP;
            let plus = loss_and_gradients(&probe, instance).unwrap().0;
            probe.params.tensor_mut(id).values_mut()[k] = orig - FD_STEP;
            let minus = loss_and_gradients(&probe, instance).unwrap().0;
            probe.params.tensor_mut(id).values_mut()[k] = orig;
            let err = rel_err(grads.get(id)[k], (plus - minus) / (2.0 * FD_STEP));
            if err > worst.0 {
                worst = (err, format!("{}[{k}]", model.params.get(id).name));
            }
        }
    }
    worst
}

/// Corpus BLEU-4 recomputed from scratch with list-based n-gram counting.
pub fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
        (0..tokens.len().saturating_sub(n - 1))
            .map(|i| tokens[i..i + n].to_vec())
            .collect()
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=4 {
        let (mut m, mut t) = (0usize, 0usize);
        for (h, r) in hyps.iter().zip(refs) {
            let hg = grams(h, n);
            let mut rg = grams(r, n);
            t += hg.len();
            for g in hg {
                if let Some(pos) = rg.iter().position(|x| *x == g) {
                    rg.remove(pos);
                    m += 1;
                }
            }
        }
        if t == 0 {
            continue;
        }
        if m == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
        orders += 1;
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    if c == 0 {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / orders as f64).exp()
}

/// Best sequence over all candidate-token sequences of at most `max_len`
/// tokens: finished ones (ending in EOS) and unfinished ones of full length.
pub fn exhaustive_best<M: SearchModel>(model: &M, max_len: usize) -> (Vec<usize>, f64) {
    fn go<M: SearchModel>(
        model: &M,
        state: &M::State,
        prefix: &mut Vec<usize>,
        logp: f64,
        left: usize,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if left == 0 {
            if best.as_ref().is_none_or(|(_, b)| logp > *b) {
                *best = Some((prefix.clone(), logp));
            }
            return;
        }
        let (probs, record) = model.step(state).unwrap();
        for (tok, &p) in probs.iter().enumerate() {
            if p <= 0.0 || !model.is_candidate(tok) {
                continue;
            }
            let lp = logp + p.ln();
            prefix.push(tok);
            if tok == model.eos() {
                if best.as_ref().is_none_or(|(_, b)| lp > *b) {
                    *best = Some((prefix.clone(), lp));
                }
            } else {
                let next = model.advance(state, &record, tok);
                go(model, &next, prefix, lp, left - 1, best);
            }
            prefix.pop();
        }
    }
    let mut best = None;
    go(model, &model.initial(), &mut Vec::new(), 0.0, max_len, &mut best);
    best.expect("at least one candidate sequence")
}

pub fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}

pub fn instance(attrs: &[&str], cells: &[&str], caption: &str, sentence: &str) -> Instance {
    let table = RawTable::single_row(
        attrs.iter().map(|s| s.to_string()).collect(),
        cells.iter().map(|s| s.to_string()).collect(),
        caption.to_owned(),
    )
    .unwrap();
    Instance::new(table, tokenize(sentence)).unwrap()
}

/// Model with the given dims whose vocabularies come from `words`/`attrs`.
pub fn small_model(config: ModelConfig, words: &[&str], attrs: &[&str], seed: u64) -> Model {
    Model::new(
        config,
        Vocabulary::from_words(words.iter().copied()),
        Vocabulary::from_words(attrs.iter().copied()),
        seed,
    )
    .unwrap()
}
