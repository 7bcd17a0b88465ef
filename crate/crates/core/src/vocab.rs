use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::table::{tokenize, Instance, CAPTION_ATTRIBUTE};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const UNK_ATTR: &str = "<unk_a>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const UNK_ATTR_ID: usize = 4;

const RESERVED: [&str; 5] = [PAD, BOS, EOS, UNK, UNK_ATTR];

/// Dense word/id map with the reserved tokens at ids 0..5.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_words(r.words.into_iter().skip(RESERVED.len()))
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr { words: v.words }
    }
}

impl Vocabulary {
    /// Reserved tokens followed by `words` (duplicates and reserved names skipped).
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in RESERVED.iter().map(|s| s.to_string()).chain(words.into_iter().map(Into::into)) {
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    /// Top-`limit` words by frequency over reference sentences, cell words,
    /// attribute words and caption words; ties go to the lexicographically
    /// smaller word.
    pub fn build(instances: &[Instance], limit: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut attr_tokens: Vec<String> = Vec::new();
        for inst in instances {
            for w in &inst.reference {
                *counts.entry(w).or_default() += 1;
            }
            for w in inst.row.words() {
                *counts.entry(w).or_default() += 1;
            }
            for a in inst.attributes() {
                attr_tokens.extend(tokenize(a));
            }
        }
        for w in &attr_tokens {
            *counts.entry(w).or_default() += 1;
        }
        Self::from_counts(counts, limit)
    }

    pub fn from_counts<'a>(counts: impl IntoIterator<Item = (&'a str, usize)>, limit: usize) -> Self {
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_words(ranked.into_iter().take(limit).map(|(w, _)| w.to_owned()))
    }

    /// Attribute vocabulary: every attribute string seen in `instances` plus
    /// the caption attribute, in first-seen order.
    pub fn attributes(instances: &[Instance]) -> Self {
        let attrs = std::iter::once(CAPTION_ATTRIBUTE.to_owned()).chain(
            instances
                .iter()
                .flat_map(|i| i.row.columns.iter().map(|c| c.attribute.clone())),
        );
        Self::from_words(attrs)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Id of `word`, or `<unk>`.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK_ID)
    }

    /// Id of an attribute, or `<unk_a>`.
    pub fn attribute_id(&self, attribute: &str) -> usize {
        self.get(attribute).unwrap_or(UNK_ATTR_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_limit() {
        let v = Vocabulary::from_counts([("a", 2), ("b", 1)], 1);
        assert_eq!(v.len(), 6);
        assert!(v.contains("a") && !v.contains("b"));
    }

    #[test]
    fn limit_above_unique_keeps_everything() {
        let v = Vocabulary::from_counts([("a", 2), ("b", 1)], 100);
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = Vocabulary::from_counts([("c", 2), ("b", 2), ("a", 1)], 1);
        assert!(v.contains("b"));
        assert!(!v.contains("c"));
    }

    #[test]
    fn reserved_ids_are_stable() {
        let v = Vocabulary::from_words(["x"]);
        assert_eq!(v.get(PAD), Some(PAD_ID));
        assert_eq!(v.get(BOS), Some(BOS_ID));
        assert_eq!(v.get(EOS), Some(EOS_ID));
        assert_eq!(v.get(UNK), Some(UNK_ID));
        assert_eq!(v.get(UNK_ATTR), Some(UNK_ATTR_ID));
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.attribute_id("zzz"), UNK_ATTR_ID);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::from_words(["b", "a"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }

    proptest! {
        #[test]
        fn word_id_round_trip(words in prop::collection::vec("[a-z]{1,4}", 0..30)) {
            let v = Vocabulary::from_words(words.clone());
            for w in &words {
                prop_assert_eq!(v.word(v.id(w)), Some(w.as_str()));
            }
            prop_assert_eq!(v.id("0-not-a-word"), UNK_ID);
        }
    }
}
