//! Non-copying baselines: induced templates, random cell copying for `<unk>`,
//! and the table-conditioned language model configuration.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Generation, Generator, NeuralGenerator};
use crate::io::write_atomic;
use crate::model::{ModelConfig, ModelFlags};
use crate::table::{tokenize, Instance, TableRow, CAPTION_ATTRIBUTE};
use crate::vocab::UNK;

/// Table scheme: ordered attributes and whether a caption is present.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemaKey {
    pub attributes: Vec<String>,
    pub has_caption: bool,
}

impl SchemaKey {
    pub fn of(instance: &Instance) -> Self {
        SchemaKey {
            attributes: instance.attributes().to_vec(),
            has_caption: !tokenize(&instance.table.caption).is_empty(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateToken {
    Word(String),
    /// `column` is `None` for the caption.
    Slot { attribute: String, column: Option<usize> },
}

impl fmt::Display for TemplateToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateToken::Word(w) => f.write_str(w),
            TemplateToken::Slot { attribute, .. } => write!(f, "<{attribute}>"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub tokens: Vec<TemplateToken>,
    pub frequency: usize,
}

impl Template {
    pub fn render(&self) -> String {
        self.tokens.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaTemplates {
    pub schema: SchemaKey,
    /// Highest frequency first; equal frequencies keep first-seen order.
    pub templates: Vec<Template>,
}

/// Ranked templates per schema.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateStore {
    pub schemas: Vec<SchemaTemplates>,
}

/// Cell word sequences to look for in a sentence, with the slot each maps to.
fn slot_candidates(instance: &Instance) -> Vec<(Vec<String>, TemplateToken)> {
    let mut cands: Vec<(Vec<String>, TemplateToken)> = instance
        .cells()
        .iter()
        .zip(instance.attributes())
        .enumerate()
        .map(|(i, (cell, attr))| {
            (
                tokenize(cell),
                TemplateToken::Slot {
                    attribute: attr.clone(),
                    column: Some(i),
                },
            )
        })
        .collect();
    cands.push((
        tokenize(&instance.table.caption),
        TemplateToken::Slot {
            attribute: CAPTION_ATTRIBUTE.to_owned(),
            column: None,
        },
    ));
    cands.retain(|(words, _)| !words.is_empty());
    // longest first; stable, so equal lengths keep column order
    cands.sort_by_key(|c| std::cmp::Reverse(c.0.len()));
    cands
}

/// Replace whole-cell occurrences in the reference by slots, longest match
/// first at each position.
pub fn derive_template(instance: &Instance) -> Vec<TemplateToken> {
    let cands = slot_candidates(instance);
    let sentence = &instance.reference;
    let mut out = Vec::new();
    let mut i = 0;
    while i < sentence.len() {
        match cands.iter().find(|(words, _)| sentence[i..].starts_with(words)) {
            Some((words, slot)) => {
                out.push(slot.clone());
                i += words.len();
            }
            None => {
                out.push(TemplateToken::Word(sentence[i].clone()));
                i += 1;
            }
        }
    }
    out
}

impl TemplateStore {
    pub fn induce(instances: &[Instance]) -> Self {
        let mut index: HashMap<SchemaKey, usize> = HashMap::new();
        let mut schemas: Vec<SchemaTemplates> = Vec::new();
        for inst in instances {
            let key = SchemaKey::of(inst);
            let slot = *index.entry(key.clone()).or_insert_with(|| {
                schemas.push(SchemaTemplates {
                    schema: key,
                    templates: Vec::new(),
                });
                schemas.len() - 1
            });
            let tokens = derive_template(inst);
            let templates = &mut schemas[slot].templates;
            match templates.iter_mut().find(|t| t.tokens == tokens) {
                Some(t) => t.frequency += 1,
                None => templates.push(Template { tokens, frequency: 1 }),
            }
        }
        for s in &mut schemas {
            s.templates.sort_by_key(|t| std::cmp::Reverse(t.frequency));
        }
        TemplateStore { schemas }
    }

    pub fn templates(&self, schema: &SchemaKey) -> Option<&[Template]> {
        self.schemas
            .iter()
            .find(|s| &s.schema == schema)
            .map(|s| s.templates.as_slice())
    }

    /// Fill the best template of the row's schema; unseen schemas fall back to
    /// the cells joined in column order.
    pub fn generate(&self, instance: &Instance) -> Generation {
        let best = self
            .templates(&SchemaKey::of(instance))
            .and_then(|t| t.first());
        let Some(template) = best else {
            let tokens = instance.cells().iter().flat_map(|c| tokenize(c)).collect();
            return Generation {
                tokens,
                fallback: true,
                attention: None,
            };
        };
        let tokens = template
            .tokens
            .iter()
            .flat_map(|t| match t {
                TemplateToken::Word(w) => vec![w.clone()],
                TemplateToken::Slot { column: Some(c), .. } => tokenize(&instance.cells()[*c]),
                TemplateToken::Slot { column: None, .. } => tokenize(&instance.table.caption),
            })
            .collect();
        Generation::plain(tokens)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("template store: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }
}

impl Generator for TemplateStore {
    fn generate(&self, _index: usize, instance: &Instance) -> Result<Generation> {
        Ok(TemplateStore::generate(self, instance))
    }
}

/// Replace each `<unk>` by a uniformly drawn cell word of the row. Rows
/// without cell words leave `<unk>` in place.
pub fn random_copy_postprocess(tokens: &[String], row: &TableRow, seed: u64) -> Vec<String> {
    let words: Vec<&str> = row.cell_words().collect();
    if words.is_empty() {
        return tokens.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tokens
        .iter()
        .map(|t| {
            if t == UNK {
                words[rng.random_range(0..words.len())].to_owned()
            } else {
                t.clone()
            }
        })
        .collect()
}

/// A copy-free neural model whose `<unk>` outputs are replaced by random cells.
/// Instance `i` uses seed `seed + i`.
pub struct RandomCopyGenerator<'m> {
    pub inner: NeuralGenerator<'m>,
    pub seed: u64,
}

impl Generator for RandomCopyGenerator<'_> {
    fn generate(&self, index: usize, instance: &Instance) -> Result<Generation> {
        if self.inner.model.flags().copy {
            return Err(Error::Validation("random copying needs a model trained without copying".into()));
        }
        let mut g = self.inner.decode_row(instance)?;
        g.tokens = random_copy_postprocess(&g.tokens, &instance.row, self.seed.wrapping_add(index as u64));
        Ok(g)
    }
}

/// The table-conditioned language model: no attention, no copying, global
/// and local factors kept. Other settings come from `base`.
pub fn tc_nlm_config(base: ModelConfig) -> ModelConfig {
    base.with_flags(ModelFlags::tc_nlm())
}
