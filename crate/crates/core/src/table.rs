//! Tables, normalized rows, and row/sentence instances.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Virtual attribute assigned to caption words.
pub const CAPTION_ATTRIBUTE: &str = "caption";

/// Sentinel reference written for rows annotators could not describe.
pub const HARD_TO_ANNOTATE: &str = "it's-hard-to-annotate";

/// A regular table: every row has exactly one cell per attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTable {
    pub attributes: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub caption: String,
}

impl RawTable {
    pub fn new(attributes: Vec<String>, rows: Vec<Vec<String>>, caption: String) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != attributes.len() {
                return Err(Error::Validation(format!(
                    "row {i} has {} cells but the table has {} attributes",
                    row.len(),
                    attributes.len()
                )));
            }
        }
        Ok(RawTable {
            attributes,
            rows,
            caption,
        })
    }

    pub fn single_row(attributes: Vec<String>, cells: Vec<String>, caption: String) -> Result<Self> {
        Self::new(attributes, vec![cells], caption)
    }
}

/// One word of a normalized row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub word: String,
    pub attribute: String,
    /// Index of the source cell in the raw table; caption words use
    /// `attributes.len()`.
    pub origin_column: usize,
    pub is_caption: bool,
}

/// A table row with one word per column and the caption folded in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub columns: Vec<Column>,
}

impl TableRow {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn without_caption(&self) -> TableRow {
        TableRow {
            columns: self.columns.iter().filter(|c| !c.is_caption).cloned().collect(),
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.word.as_str())
    }

    /// Words of non-caption columns.
    pub fn cell_words(&self) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(|c| !c.is_caption)
            .map(|c| c.word.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Single-row source table, kept for baselines that work on whole cells.
    pub table: RawTable,
    pub row: TableRow,
    pub reference: Vec<String>,
}

impl Instance {
    pub fn new(table: RawTable, reference: Vec<String>) -> Result<Self> {
        let reference = tokenize_all(&reference);
        if reference.is_empty() {
            return Err(Error::Validation("empty reference sentence".into()));
        }
        let row = normalize_row(&table, 0)?;
        Ok(Instance {
            table,
            row,
            reference,
        })
    }

    pub fn cells(&self) -> &[String] {
        &self.table.rows[0]
    }

    /// Attributes of the row, excluding the virtual caption attribute.
    pub fn attributes(&self) -> &[String] {
        &self.table.attributes
    }

    pub fn to_record(&self) -> JsonlRecord {
        JsonlRecord {
            caption: self.table.caption.clone(),
            attributes: self.table.attributes.clone(),
            cells: self.table.rows[0].clone(),
            sentence: self.reference.clone(),
        }
    }
}

/// One line of the canonical JSON-lines corpus format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlRecord {
    #[serde(default)]
    pub caption: String,
    pub attributes: Vec<String>,
    pub cells: Vec<String>,
    pub sentence: Vec<String>,
}

impl JsonlRecord {
    /// `Ok(None)` for sentinel references that are dropped at load time.
    pub fn into_instance(self) -> Result<Option<Instance>> {
        if self.attributes.len() != self.cells.len() {
            return Err(Error::Validation(format!(
                "{} attributes but {} cells",
                self.attributes.len(),
                self.cells.len()
            )));
        }
        let reference = tokenize_all(&self.sentence);
        if reference.len() == 1 && reference[0] == HARD_TO_ANNOTATE {
            return Ok(None);
        }
        let attributes = self.attributes.iter().map(|a| normalize_text(a)).collect();
        let table = RawTable::single_row(attributes, self.cells, self.caption)?;
        Instance::new(table, reference).map(Some)
    }
}

/// Lower-case and collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    tokenize(text).join(" ")
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn tokenize_all(tokens: &[String]) -> Vec<String> {
    tokens.iter().flat_map(|t| tokenize(t)).collect()
}

/// Parse a JSON-lines corpus. Blank lines are skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let parsed = record.into_instance().map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.extend(parsed);
    }
    Ok(out)
}

/// Normalize row `row_index` of `raw`: each cell splits into one column per
/// word (sharing the cell's attribute and origin), empty cells vanish, and
/// caption words follow as columns under the `caption` attribute.
pub fn normalize_row(raw: &RawTable, row_index: usize) -> Result<TableRow> {
    let cells = raw.rows.get(row_index).ok_or_else(|| {
        Error::Validation(format!(
            "row index {row_index} out of range for a table with {} rows",
            raw.rows.len()
        ))
    })?;
    let mut columns = Vec::new();
    for (origin, (attribute, cell)) in raw.attributes.iter().zip(cells).enumerate() {
        let attribute = normalize_text(attribute);
        for word in tokenize(cell) {
            columns.push(Column {
                word,
                attribute: attribute.clone(),
                origin_column: origin,
                is_caption: false,
            });
        }
    }
    for word in tokenize(&raw.caption) {
        columns.push(Column {
            word,
            attribute: CAPTION_ATTRIBUTE.to_owned(),
            origin_column: raw.attributes.len(),
            is_caption: true,
        });
    }
    if columns.is_empty() {
        return Err(Error::Validation(format!(
            "row {row_index} has no non-empty cells"
        )));
    }
    Ok(TableRow { columns })
}

/// A knowledge-base fact as a one-row table: attributes `["subject", predicate]`.
pub fn convert_triple(subject: &str, predicate: &str, object: &str) -> Result<RawTable> {
    for (name, value) in [("subject", subject), ("predicate", predicate), ("object", object)] {
        if value.trim().is_empty() {
            return Err(Error::Validation(format!("empty {name} in triple")));
        }
    }
    RawTable::single_row(
        vec!["subject".to_owned(), normalize_text(predicate)],
        vec![subject.trim().to_owned(), object.trim().to_owned()],
        String::new(),
    )
}

/// Parse one `subject\tpredicate\tobject\tquestion` line.
pub fn parse_triple_line(line: &str) -> Result<JsonlRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(Error::Validation(format!(
            "expected 4 tab-separated fields, found {}",
            fields.len()
        )));
    }
    let table = convert_triple(fields[0], fields[1], fields[2])?;
    let sentence = tokenize(fields[3]);
    if sentence.is_empty() {
        return Err(Error::Validation("empty question".into()));
    }
    Ok(JsonlRecord {
        caption: table.caption,
        attributes: table.attributes,
        cells: table.rows.into_iter().next().unwrap_or_default(),
        sentence,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg: f64,
    pub min: usize,
    pub max: usize,
}

impl Summary {
    fn of(values: &[usize]) -> Summary {
        let total: usize = values.iter().sum();
        Summary {
            avg: total as f64 / values.len() as f64,
            min: values.iter().copied().min().unwrap_or(0),
            max: values.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub tables: usize,
    pub sentences: usize,
    pub sentences_per_table: f64,
    pub words_per_sentence: Summary,
    pub words_per_caption: Summary,
    pub cells_per_sentence: Summary,
    pub columns_per_table: Summary,
    pub rows_per_table: Summary,
}

/// Corpus statistics. Instances sharing caption and attributes count as rows
/// of one table; a cell is "used" when its full token sequence occurs in the
/// reference.
pub fn corpus_stats(instances: &[Instance]) -> Result<CorpusStats> {
    if instances.is_empty() {
        return Err(Error::Domain("statistics of an empty corpus".into()));
    }
    let mut table_index: HashMap<(String, Vec<String>), usize> = HashMap::new();
    let mut tables: Vec<(usize, usize, Vec<Vec<String>>)> = Vec::new();
    let mut words = Vec::with_capacity(instances.len());
    let mut cells_used = Vec::with_capacity(instances.len());

    for inst in instances {
        let key = (normalize_text(&inst.table.caption), inst.table.attributes.clone());
        let idx = *table_index.entry(key).or_insert_with(|| {
            tables.push((
                tokenize(&inst.table.caption).len(),
                inst.table.attributes.len(),
                Vec::new(),
            ));
            tables.len() - 1
        });
        let cells = inst.cells().to_vec();
        if !tables[idx].2.contains(&cells) {
            tables[idx].2.push(cells);
        }
        words.push(inst.reference.len());
        cells_used.push(
            inst.cells()
                .iter()
                .map(|c| tokenize(c))
                .filter(|toks| !toks.is_empty() && contains_subsequence(&inst.reference, toks))
                .count(),
        );
    }

    let captions: Vec<usize> = tables.iter().map(|t| t.0).collect();
    let columns: Vec<usize> = tables.iter().map(|t| t.1).collect();
    let rows: Vec<usize> = tables.iter().map(|t| t.2.len()).collect();
    Ok(CorpusStats {
        tables: tables.len(),
        sentences: instances.len(),
        sentences_per_table: instances.len() as f64 / tables.len() as f64,
        words_per_sentence: Summary::of(&words),
        words_per_caption: Summary::of(&captions),
        cells_per_sentence: Summary::of(&cells_used),
        columns_per_table: Summary::of(&columns),
        rows_per_table: Summary::of(&rows),
    })
}

pub(crate) fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
