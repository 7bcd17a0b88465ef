//! Seeded toy corpora whose sentences are filled-in patterns over random
//! tables. Cell values are fresh random words, so any word outside the
//! pattern text can only be produced by copying from the row.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::table::{tokenize, Instance, RawTable};

/// A sentence pattern over named attributes; `{attr}` marks a cell and
/// `{caption}` the caption.
#[derive(Clone, Debug)]
pub struct Schema {
    pub attributes: &'static [&'static str],
    pub pattern: &'static str,
    pub captioned: bool,
}

pub const SCHEMAS: &[Schema] = &[
    Schema {
        attributes: &["player", "team", "goals"],
        pattern: "{player} scored {goals} goals for {team} .",
        captioned: false,
    },
    Schema {
        attributes: &["actor", "role", "film"],
        pattern: "{actor} played {role} in {film} .",
        captioned: false,
    },
    Schema {
        attributes: &["club", "city", "stadium"],
        pattern: "{club} plays at {stadium} in {city} .",
        captioned: false,
    },
    Schema {
        attributes: &["winner", "year"],
        pattern: "{winner} won the {caption} in {year} .",
        captioned: true,
    },
    Schema {
        attributes: &["name", "country", "office"],
        pattern: "{name} served as {office} of {country} .",
        captioned: false,
    },
];

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub instances: Vec<Instance>,
    /// Pattern words and attribute names: everything that is not a cell or
    /// caption value.
    pub structural_words: BTreeSet<String>,
}

fn random_word(rng: &mut impl Rng) -> String {
    let len = rng.random_range(5..=8);
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

/// `n` instances drawn from the first `schemas` schemas with shuffled column
/// order. Each cell has one or two random words.
pub fn generate(n: usize, schemas: usize, seed: u64) -> Result<SyntheticCorpus> {
    generate_with(n, schemas, seed, true)
}

/// As [`generate`]; with `shuffle_columns` off every row of a schema keeps
/// the schema's attribute order.
pub fn generate_with(n: usize, schemas: usize, seed: u64, shuffle_columns: bool) -> Result<SyntheticCorpus> {
    let pool = &SCHEMAS[..schemas.clamp(1, SCHEMAS.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut structural = BTreeSet::new();
    for s in pool {
        structural.extend(s.attributes.iter().map(|a| a.to_string()));
        for word in s.pattern.split_whitespace() {
            if !word.starts_with('{') {
                structural.insert(word.to_owned());
            }
        }
    }
    let mut instances = Vec::with_capacity(n);
    for _ in 0..n {
        let schema = &pool[rng.random_range(0..pool.len())];
        let values: Vec<String> = schema
            .attributes
            .iter()
            .map(|_| {
                let words = if rng.random_bool(0.25) { 2 } else { 1 };
                (0..words).map(|_| random_word(&mut rng)).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let caption = if schema.captioned {
            format!("{} cup", random_word(&mut rng))
        } else {
            String::new()
        };
        let mut sentence = schema.pattern.replace("{caption}", &caption);
        for (attr, value) in schema.attributes.iter().zip(&values) {
            sentence = sentence.replace(&format!("{{{attr}}}"), value);
        }
        let mut order: Vec<usize> = (0..schema.attributes.len()).collect();
        if shuffle_columns {
            order.shuffle(&mut rng);
        }
        let table = RawTable::single_row(
            order.iter().map(|&i| schema.attributes[i].to_owned()).collect(),
            order.iter().map(|&i| values[i].clone()).collect(),
            caption,
        )?;
        instances.push(Instance::new(table, tokenize(&sentence))?);
    }
    if pool.iter().any(|s| s.captioned) {
        structural.insert("cup".to_owned());
    }
    Ok(SyntheticCorpus {
        instances,
        structural_words: structural,
    })
}
