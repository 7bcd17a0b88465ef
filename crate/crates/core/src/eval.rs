//! BLEU-4, evaluation runs, unseen-attribute buckets and attention export.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{beam_search, greedy_search, DecodeSession, Hypothesis, Model};
use crate::table::Instance;
use crate::vocab::Vocabulary;

pub const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram totals for orders 1..=4.
fn ngram_stats(hyp: &[String], reference: &[String]) -> [(usize, usize); MAX_ORDER] {
    let mut out = [(0, 0); MAX_ORDER];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let ref_counts = ngram_counts(reference, n);
        let matched = ngram_counts(hyp, n)
            .into_iter()
            .map(|(g, c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        *slot = (matched, hyp.len().saturating_sub(n - 1));
    }
    out
}

/// Corpus-level BLEU-4 with one reference per hypothesis: geometric mean of
/// clipped 1..4-gram precisions times the brevity penalty. Unsmoothed, so any
/// zero precision gives 0. Orders for which the hypotheses contain no n-gram
/// at all (every hypothesis shorter than n) are left out of the mean instead
/// of counting as 0/0.
pub fn bleu4(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Domain(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Domain("BLEU of an empty corpus".into()));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        for (n, (m, t)) in ngram_stats(h, r).into_iter().enumerate() {
            matched[n] += m;
            total[n] += t;
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let orders: Vec<(usize, usize)> = matched
        .into_iter()
        .zip(total)
        .filter(|&(_, t)| t > 0)
        .collect();
    if orders.iter().any(|&(m, _)| m == 0) {
        return Ok(0.0);
    }
    let log_precision: f64 = orders
        .iter()
        .map(|&(m, t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / orders.len() as f64;
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(brevity * log_precision.exp())
}

/// Sentence BLEU-4 with add-one smoothing on orders 2..4. Diagnostic only.
pub fn sentence_bleu_smoothed(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() {
        return 0.0;
    }
    let stats = ngram_stats(hyp, reference);
    if stats[0].0 == 0 {
        return 0.0;
    }
    let log_p: f64 = stats
        .iter()
        .enumerate()
        .map(|(n, &(m, t))| {
            if n == 0 {
                (m as f64 / t as f64).ln()
            } else {
                ((m + 1) as f64 / (t + 1) as f64).ln()
            }
        })
        .sum::<f64>()
        / MAX_ORDER as f64;
    let bp = if hyp.len() > reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / hyp.len() as f64).exp()
    };
    bp * log_p.exp()
}

/// Attention weights of one decode, one column per generated token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub states: Vec<String>,
    pub tokens: Vec<String>,
    /// `weights[step][state]`
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<String>,
    /// Output produced by a fallback path (template baseline on an unseen schema).
    pub fallback: bool,
    pub attention: Option<AttentionRecord>,
}

impl Generation {
    pub fn plain(tokens: Vec<String>) -> Self {
        Generation {
            tokens,
            fallback: false,
            attention: None,
        }
    }
}

/// Anything that turns an instance's row into a sentence.
pub trait Generator {
    /// `index` is the position of the instance in the evaluated corpus.
    fn generate(&self, index: usize, instance: &Instance) -> Result<Generation>;
}

/// Decoding settings for the neural model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Beam size; 1 decodes greedily.
    pub beam: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 5, max_len: 40 }
    }
}

pub struct NeuralGenerator<'m> {
    pub model: &'m Model,
    pub decode: DecodeConfig,
}

impl<'m> NeuralGenerator<'m> {
    pub fn new(model: &'m Model, decode: DecodeConfig) -> Self {
        NeuralGenerator { model, decode }
    }

    /// Best hypothesis for a row, with its surface tokens and attention.
    pub fn decode_row(&self, instance: &Instance) -> Result<Generation> {
        let session = DecodeSession::new(self.model, &instance.row)?;
        let best = if self.decode.beam == 1 {
            greedy_search(&session, self.decode.max_len)?
        } else {
            beam_search(&session, self.decode.beam, self.decode.max_len)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Domain("beam search returned no hypothesis".into()))?
        };
        Ok(render(&session, &best))
    }
}

fn render(session: &DecodeSession, hyp: &Hypothesis<crate::model::DecoderStep>) -> Generation {
    let tokens: Vec<String> = hyp.output().iter().map(|&t| session.surface(t).to_owned()).collect();
    let attention = AttentionRecord {
        states: session.slots().iter().map(|s| s.label()).collect(),
        tokens: hyp.tokens.iter().map(|&t| session.surface(t).to_owned()).collect(),
        weights: hyp.records.iter().map(|r| r.alpha.clone()).collect(),
    };
    Generation {
        tokens,
        fallback: false,
        attention: Some(attention),
    }
}

impl Generator for NeuralGenerator<'_> {
    fn generate(&self, _index: usize, instance: &Instance) -> Result<Generation> {
        self.decode_row(instance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// "0", "1", "2" or ">=3" unseen attributes.
    pub unseen: String,
    pub count: usize,
    /// `None` for an empty bucket.
    pub bleu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub size: usize,
    pub bleu: f64,
    pub buckets: Vec<BucketReport>,
    pub fallback_count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sentence_bleu_mean: Option<f64>,
}

pub const BUCKET_LABELS: [&str; 4] = ["0", "1", "2", ">=3"];

/// Number of distinct row attributes missing from the training attributes.
pub fn unseen_attributes(instance: &Instance, training: &Vocabulary) -> usize {
    instance
        .attributes()
        .iter()
        .filter(|a| !training.contains(a))
        .collect::<BTreeSet<_>>()
        .len()
}

pub fn bucket_of(unseen: usize) -> usize {
    unseen.min(3)
}

/// Decode every instance and score the corpus and each unseen-attribute bucket.
pub fn evaluate<G: Generator + ?Sized>(
    generator: &G,
    instances: &[Instance],
    training_attributes: &Vocabulary,
) -> Result<(EvalReport, Vec<Generation>)> {
    let generations = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| generator.generate(i, inst))
        .collect::<Result<Vec<_>>>()?;
    let report = score(instances, &generations, training_attributes)?;
    Ok((report, generations))
}

pub fn score(instances: &[Instance], generations: &[Generation], training_attributes: &Vocabulary) -> Result<EvalReport> {
    let hyps: Vec<Vec<String>> = generations.iter().map(|g| g.tokens.clone()).collect();
    let refs: Vec<Vec<String>> = instances.iter().map(|i| i.reference.clone()).collect();
    let bleu = bleu4(&hyps, &refs)?;

    let mut bucket_members: [Vec<usize>; 4] = Default::default();
    for (i, inst) in instances.iter().enumerate() {
        bucket_members[bucket_of(unseen_attributes(inst, training_attributes))].push(i);
    }
    let buckets = bucket_members
        .iter()
        .zip(BUCKET_LABELS)
        .map(|(members, label)| {
            let bleu = if members.is_empty() {
                None
            } else {
                let h: Vec<_> = members.iter().map(|&i| hyps[i].clone()).collect();
                let r: Vec<_> = members.iter().map(|&i| refs[i].clone()).collect();
                Some(bleu4(&h, &r)?)
            };
            Ok(BucketReport {
                unseen: label.to_owned(),
                count: members.len(),
                bleu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        size: instances.len(),
        bleu,
        buckets,
        fallback_count: generations.iter().filter(|g| g.fallback).count(),
        sentence_bleu_mean: None,
    })
}

/// Mean smoothed sentence BLEU, for diagnostics.
pub fn mean_sentence_bleu(instances: &[Instance], generations: &[Generation]) -> f64 {
    let total: f64 = instances
        .iter()
        .zip(generations)
        .map(|(i, g)| sentence_bleu_smoothed(&g.tokens, &i.reference))
        .sum();
    total / instances.len().max(1) as f64
}

/// Attention matrix as CSV: one row per attendable state, one column per
/// generated token.
pub fn attention_csv(record: &AttentionRecord) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["state".to_owned()];
    header.extend(record.tokens.iter().cloned());
    w.write_record(&header)?;
    for (s, label) in record.states.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend(record.weights.iter().map(|step| format!("{:.17e}", step[s])));
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn export_attention(record: &AttentionRecord, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), attention_csv(record)?.as_bytes())
}
