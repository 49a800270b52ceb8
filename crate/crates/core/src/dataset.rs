//! Multiple-choice VideoQA rows, question types, answer pools and manifest I/O.
//!
//! A manifest is a UTF-8 JSON-lines file with one [`DatasetRow`] per line:
//!
//! ```text
//! {"row_id":"r1","clip_id":"c1","question":"what am I doing","candidates":["a","b","c","d","e"],"label":0,"qtype":"Act1st","split":"train","provenance":["original"]}
//! ```
//!
//! `provenance` may be omitted and defaults to `["original"]`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const NUM_CANDIDATES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionType {
    Act1st,
    Act3rd,
    Obj1st,
    Obj3rd,
    Who1st,
    Who3rd,
    Cnt,
    Col,
}

impl QuestionType {
    pub const ALL: [QuestionType; 8] = [
        QuestionType::Act1st,
        QuestionType::Act3rd,
        QuestionType::Obj1st,
        QuestionType::Obj3rd,
        QuestionType::Who1st,
        QuestionType::Who3rd,
        QuestionType::Cnt,
        QuestionType::Col,
    ];

    pub fn code(self) -> &'static str {
        match self {
            QuestionType::Act1st => "Act1st",
            QuestionType::Act3rd => "Act3rd",
            QuestionType::Obj1st => "Obj1st",
            QuestionType::Obj3rd => "Obj3rd",
            QuestionType::Who1st => "Who1st",
            QuestionType::Who3rd => "Who3rd",
            QuestionType::Cnt => "Cnt",
            QuestionType::Col => "Col",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            QuestionType::Act1st => "Action 1st",
            QuestionType::Act3rd => "Action 3rd",
            QuestionType::Obj1st => "Object 1st",
            QuestionType::Obj3rd => "Object 3rd",
            QuestionType::Who1st => "Who 1st",
            QuestionType::Who3rd => "Who 3rd",
            QuestionType::Cnt => "Count",
            QuestionType::Col => "Color",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuestionType::ALL
            .into_iter()
            .find(|q| q.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown question type `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Resampled,
    Mirrored,
    Hflipped,
}

fn default_provenance() -> Vec<Provenance> {
    vec![Provenance::Original]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub row_id: String,
    pub clip_id: String,
    pub question: String,
    pub candidates: Vec<String>,
    pub label: usize,
    pub qtype: QuestionType,
    pub split: Split,
    #[serde(default = "default_provenance")]
    pub provenance: Vec<Provenance>,
}

impl DatasetRow {
    pub fn correct_answer(&self) -> &str {
        &self.candidates[self.label]
    }

    pub fn is_original(&self) -> bool {
        self.provenance.iter().all(|p| *p == Provenance::Original)
    }

    /// Check the row invariants, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        if self.row_id.is_empty() {
            return Err(Error::invalid("", "row_id must be non-empty"));
        }
        if self.clip_id.is_empty() {
            return Err(Error::invalid(&self.row_id, "clip_id must be non-empty"));
        }
        if self.candidates.len() != NUM_CANDIDATES {
            return Err(Error::invalid(
                &self.row_id,
                format!(
                    "candidates must have length {NUM_CANDIDATES} (found {})",
                    self.candidates.len()
                ),
            ));
        }
        if let Some(i) = self.candidates.iter().position(|c| c.trim().is_empty()) {
            return Err(Error::invalid(
                &self.row_id,
                format!("candidate {i} must be non-empty"),
            ));
        }
        if self.label >= NUM_CANDIDATES {
            return Err(Error::invalid(
                &self.row_id,
                format!("label must be in [0,4] (found {})", self.label),
            ));
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.as_str()) {
                return Err(Error::invalid(
                    &self.row_id,
                    format!("candidates must be pairwise distinct (`{c}` repeated)"),
                ));
            }
        }
        if self.provenance.is_empty() {
            return Err(Error::invalid(&self.row_id, "provenance must be non-empty"));
        }
        Ok(())
    }
}

/// Validate a row list: per-row invariants plus unique row ids.
pub fn validate_rows(rows: &[DatasetRow]) -> Result<()> {
    let mut ids = HashSet::new();
    for row in rows {
        row.validate()?;
        if !ids.insert(row.row_id.as_str()) {
            return Err(Error::invalid(&row.row_id, "row_id must be unique"));
        }
    }
    Ok(())
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<Vec<DatasetRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    validate_rows(&rows)?;
    Ok(rows)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetRow>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DatasetRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        row.validate()?;
        rows.push(row);
    }
    validate_rows(&rows)?;
    Ok(rows)
}

pub fn manifest_to_string(rows: &[DatasetRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("rows serialize"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(path: impl AsRef<Path>, rows: &[DatasetRow]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Distinct answer texts seen among training rows of one question type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnswerPool {
    pub qtype: Option<QuestionType>,
    pub answers: BTreeSet<String>,
}

impl AnswerPool {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

pub type AnswerPools = BTreeMap<QuestionType, AnswerPool>;

/// One pool per question type, from train-split rows only. All 8 types are
/// present in the result; types without rows get an empty pool.
pub fn build_pools(rows: &[DatasetRow]) -> AnswerPools {
    let mut pools: AnswerPools = QuestionType::ALL
        .into_iter()
        .map(|q| {
            (
                q,
                AnswerPool {
                    qtype: Some(q),
                    answers: BTreeSet::new(),
                },
            )
        })
        .collect();
    for row in rows.iter().filter(|r| r.split == Split::Train) {
        let pool = pools.get_mut(&row.qtype).expect("all types present");
        pool.answers.extend(row.candidates.iter().cloned());
    }
    pools
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub qtype: QuestionType,
    pub counts: [usize; NUM_CANDIDATES],
    pub total: usize,
}

impl LabelHistogram {
    pub fn share(&self, position: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.counts[position] as f64 / self.total as f64
        }
    }
}

pub fn label_position_histogram(rows: &[DatasetRow], qtype: QuestionType) -> LabelHistogram {
    let mut counts = [0; NUM_CANDIDATES];
    for row in rows.iter().filter(|r| r.qtype == qtype) {
        counts[row.label] += 1;
    }
    LabelHistogram {
        qtype,
        counts,
        total: counts.iter().sum(),
    }
}

pub fn count_by_type(rows: &[DatasetRow]) -> BTreeMap<QuestionType, usize> {
    let mut counts: BTreeMap<QuestionType, usize> =
        QuestionType::ALL.into_iter().map(|q| (q, 0)).collect();
    for row in rows {
        *counts.get_mut(&row.qtype).expect("all types present") += 1;
    }
    counts
}

/// Externally supplied train/test partition of row ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.split_index > 2 {
            return Err(Error::Config(format!(
                "split_index must be 0, 1 or 2 (found {})",
                self.split_index
            )));
        }
        let train: HashSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        if let Some(id) = self.test_ids.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::invalid(
                id.as_str(),
                format!("appears in both train and test of split {}", self.split_index),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SplitSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Train and test rows of this split, with `split` set accordingly.
    /// Fails if an id is not in `rows`.
    pub fn apply(&self, rows: &[DatasetRow]) -> Result<(Vec<DatasetRow>, Vec<DatasetRow>)> {
        self.validate()?;
        let by_id: BTreeMap<&str, &DatasetRow> =
            rows.iter().map(|r| (r.row_id.as_str(), r)).collect();
        let pick = |ids: &[String], split: Split| -> Result<Vec<DatasetRow>> {
            ids.iter()
                .map(|id| {
                    let mut row = (*by_id.get(id.as_str()).ok_or_else(|| {
                        Error::invalid(id.as_str(), "split references an unknown row id")
                    })?)
                    .clone();
                    row.split = split;
                    Ok(row)
                })
                .collect()
        };
        Ok((pick(&self.train_ids, Split::Train)?, pick(&self.test_ids, Split::Test)?))
    }

    /// Seeded random partition of all `rows`, ignoring their `split` field;
    /// `floor(test_fraction * n)` rows go to test.
    pub fn random(split_index: usize, rows: &[DatasetRow], test_fraction: f64, seed: u64) -> Self {
        let mut ids: Vec<String> = rows.iter().map(|r| r.row_id.clone()).collect();
        ids.shuffle(&mut rng::stream_n(seed, "split", split_index as u64));
        let n_test = (ids.len() as f64 * test_fraction.clamp(0.0, 1.0)).floor() as usize;
        let train_ids = ids.split_off(n_test);
        SplitSpec {
            split_index,
            train_ids,
            test_ids: ids,
        }
    }

    /// Partition taken from each row's own `split` field.
    pub fn from_rows(split_index: usize, rows: &[DatasetRow]) -> Self {
        let ids = |s: Split| {
            rows.iter()
                .filter(|r| r.split == s)
                .map(|r| r.row_id.clone())
                .collect()
        };
        SplitSpec {
            split_index,
            train_ids: ids(Split::Train),
            test_ids: ids(Split::Test),
        }
    }
}
