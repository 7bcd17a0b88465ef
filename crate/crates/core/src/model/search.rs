//! Greedy and beam search over any step-wise scorer.

use crate::error::{Error, Result};

/// A left-to-right generator that can be searched.
pub trait SearchModel {
    type State: Clone;
    /// Per-step information kept with each hypothesis (e.g. attention).
    type Record: Clone;

    fn initial(&self) -> Self::State;
    fn eos(&self) -> usize;
    /// Whether `token` may be emitted at all.
    fn is_candidate(&self, token: usize) -> bool;
    /// Probabilities of the next token.
    fn step(&self, state: &Self::State) -> Result<(Vec<f64>, Self::Record)>;
    fn advance(&self, state: &Self::State, record: &Self::Record, token: usize) -> Self::State;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<R> {
    /// Emitted tokens; ends with EOS when `finished`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub records: Vec<R>,
    pub finished: bool,
}

impl<R> Hypothesis<R> {
    /// Tokens without the trailing EOS.
    pub fn output(&self) -> &[usize] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_search<M: SearchModel>(model: &M, max_len: usize) -> Result<Hypothesis<M::Record>> {
    if max_len == 0 {
        return Err(Error::Domain("max length must be at least 1".into()));
    }
    let mut state = model.initial();
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        records: Vec::new(),
        finished: false,
    };
    for _ in 0..max_len {
        let (probs, record) = model.step(&state)?;
        let mut best: Option<(usize, f64)> = None;
        for (token, &p) in probs.iter().enumerate() {
            if p > 0.0 && model.is_candidate(token) && best.is_none_or(|(_, bp)| p > bp) {
                best = Some((token, p));
            }
        }
        let Some((token, p)) = best else { break };
        hyp.tokens.push(token);
        hyp.log_prob += p.ln();
        state = model.advance(&state, &record, token);
        hyp.records.push(record);
        if token == model.eos() {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

struct Live<S, R> {
    hyp: Hypothesis<R>,
    state: S,
}

/// Beam search ranked by total log-probability (no length normalization).
///
/// Each step keeps the `beam` best expansions of the live hypotheses;
/// expansions ending in EOS leave the beam as finished results. Search stops
/// once `beam` results are finished, nothing is live, or `max_len` tokens
/// were emitted, in which case live hypotheses are returned unfinished.
/// Returns at most `beam` hypotheses, best first.
pub fn beam_search<M: SearchModel>(model: &M, beam: usize, max_len: usize) -> Result<Vec<Hypothesis<M::Record>>> {
    if beam == 0 || max_len == 0 {
        return Err(Error::Domain("beam size and max length must be at least 1".into()));
    }
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            records: Vec::new(),
            finished: false,
        },
        state: model.initial(),
    }];
    let mut finished: Vec<Hypothesis<M::Record>> = Vec::new();

    for _ in 0..max_len {
        let mut expansions: Vec<(usize, usize, f64, M::Record)> = Vec::new();
        for (h, l) in live.iter().enumerate() {
            let (probs, record) = model.step(&l.state)?;
            for (token, &p) in probs.iter().enumerate() {
                if p > 0.0 && model.is_candidate(token) {
                    expansions.push((h, token, l.hyp.log_prob + p.ln(), record.clone()));
                }
            }
        }
        // stable: ties keep hypothesis order, then token order
        expansions.sort_by(|a, b| b.2.total_cmp(&a.2));
        expansions.truncate(beam);

        let mut next = Vec::with_capacity(expansions.len());
        for (h, token, score, record) in expansions {
            let parent = &live[h];
            let mut hyp = Hypothesis {
                tokens: parent.hyp.tokens.clone(),
                log_prob: score,
                records: parent.hyp.records.clone(),
                finished: token == model.eos(),
            };
            hyp.tokens.push(token);
            if hyp.finished {
                hyp.records.push(record);
                finished.push(hyp);
            } else {
                let state = model.advance(&parent.state, &record, token);
                hyp.records.push(record);
                next.push(Live { hyp, state });
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= beam {
            break;
        }
    }

    finished.extend(live.into_iter().map(|l| l.hyp));
    finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
    finished.truncate(beam);
    Ok(finished)
}
