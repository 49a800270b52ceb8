//! Training-set augmentation for multiple-choice VideoQA.
//!
//! Three techniques, applied in the order horizontal flip → resampling →
//! mirroring, each stage consuming every row produced so far:
//!
//! * **Horizontal flip** swaps left/right words in the question and all
//!   candidates and pairs the row with the flipped clip's features. The
//!   label position is kept.
//! * **Resampling** keeps the correct answer at its position and draws new
//!   wrong answers from the answer pool of the row's question type. A row is
//!   skipped when the pool cannot provide a 4-tuple of wrong answers other
//!   than the one the row already has; with a pool of exactly five answers
//!   (e.g. counting questions) nothing is generated.
//! * **Mirroring** reverses the candidate order and maps label `i` to `4 - i`.
//!
//! Each row's random stream is keyed by `(plan.seed, row_id)`, so output is
//! independent of thread count.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnswerPool, AnswerPools, DatasetRow, Provenance, Split, NUM_CANDIDATES};
use crate::error::{Error, Result};
use crate::features::{flipped_clip_id, ClipFeatures, FeatureStore};
use crate::rng;

pub fn default_lexicon() -> Vec<(String, String)> {
    vec![("left".to_string(), "right".to_string())]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PlanFile")]
pub struct AugmentationPlan {
    pub enable_hflip: bool,
    pub enable_resample: bool,
    pub resample_copies: usize,
    pub enable_mirror: bool,
    pub seed: u64,
    pub lr_lexicon: Vec<(String, String)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    #[serde(default)]
    enable_hflip: bool,
    #[serde(default)]
    enable_resample: bool,
    resample_copies: Option<usize>,
    #[serde(default)]
    enable_mirror: bool,
    #[serde(default)]
    seed: u64,
    lr_lexicon: Option<Vec<(String, String)>>,
}

impl TryFrom<PlanFile> for AugmentationPlan {
    type Error = Error;

    fn try_from(f: PlanFile) -> Result<Self> {
        let plan = AugmentationPlan {
            enable_hflip: f.enable_hflip,
            enable_resample: f.enable_resample,
            resample_copies: f
                .resample_copies
                .unwrap_or(if f.enable_resample { 1 } else { 0 }),
            enable_mirror: f.enable_mirror,
            seed: f.seed,
            lr_lexicon: f.lr_lexicon.unwrap_or_else(default_lexicon),
        };
        plan.validate()?;
        Ok(plan)
    }
}

impl Default for AugmentationPlan {
    fn default() -> Self {
        Self::none()
    }
}

impl AugmentationPlan {
    /// No augmentation.
    pub fn none() -> Self {
        Self {
            enable_hflip: false,
            enable_resample: false,
            resample_copies: 0,
            enable_mirror: false,
            seed: 0,
            lr_lexicon: default_lexicon(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_hflip(mut self) -> Self {
        self.enable_hflip = true;
        self
    }

    pub fn with_resample(mut self, copies: usize) -> Self {
        self.enable_resample = true;
        self.resample_copies = copies;
        self
    }

    pub fn with_mirror(mut self) -> Self {
        self.enable_mirror = true;
        self
    }

    pub fn is_identity(&self) -> bool {
        !self.enable_hflip && !(self.enable_resample && self.resample_copies > 0) && !self.enable_mirror
    }

    /// Short label such as `hflip+resample+mirror`, or `none`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.enable_hflip {
            parts.push("hflip");
        }
        if self.enable_resample {
            parts.push("resample");
        }
        if self.enable_mirror {
            parts.push("mirror");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resample_copies > 0 && !self.enable_resample {
            return Err(Error::Config(
                "resample_copies > 0 requires enable_resample".into(),
            ));
        }
        validate_lexicon(&self.lr_lexicon)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("augmentation plan: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }
}

pub fn validate_lexicon(lexicon: &[(String, String)]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (a, b) in lexicon {
        for t in [a, b] {
            if t.is_empty() || !t.chars().all(char::is_alphanumeric) {
                return Err(Error::Config(format!("lexicon token `{t}` must be a single word")));
            }
            if t.chars().any(char::is_uppercase) {
                return Err(Error::Config(format!("lexicon token `{t}` must be lowercase")));
            }
            if !seen.insert(t.clone()) {
                return Err(Error::Config(format!(
                    "lexicon token `{t}` appears in more than one position"
                )));
            }
        }
    }
    Ok(())
}

fn lexicon_map(lexicon: &[(String, String)]) -> HashMap<&str, &str> {
    let mut map = HashMap::new();
    for (a, b) in lexicon {
        map.insert(a.as_str(), b.as_str());
        map.insert(b.as_str(), a.as_str());
    }
    map
}

fn recase(word: &str, partner: &str) -> String {
    let mut chars = word.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let all_upper = word.chars().count() > 1 && word.chars().all(char::is_uppercase);
    if all_upper {
        partner.to_uppercase()
    } else if first_upper {
        let mut p = partner.chars();
        match p.next() {
            Some(c) => c.to_uppercase().chain(p).collect(),
            None => String::new(),
        }
    } else {
        partner.to_string()
    }
}

/// Swap every whole-word lexicon token for its partner, matching
/// case-insensitively and keeping the capitalization of the original word.
/// Words are maximal runs of alphanumeric characters; everything else is
/// copied unchanged.
///
/// With the default lexicon, "right" in the sense of "correct" is swapped
/// as well.
pub fn hflip_text(text: &str, lexicon: &[(String, String)]) -> String {
    let map = lexicon_map(lexicon);
    let mut out = String::with_capacity(text.len());
    let mut word_start: Option<usize> = None;
    let flush = |out: &mut String, word: &str| {
        let lower = word.to_lowercase();
        match map.get(lower.as_str()) {
            Some(partner) => out.push_str(&recase(word, partner)),
            None => out.push_str(word),
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
        } else {
            if let Some(s) = word_start.take() {
                flush(&mut out, &text[s..i]);
            }
            out.push(c);
        }
    }
    if let Some(s) = word_start {
        flush(&mut out, &text[s..]);
    }
    out
}

/// Flipped copy of `row` and the flipped clip's features.
pub fn hflip_row(
    row: &DatasetRow,
    store: &FeatureStore,
    lexicon: &[(String, String)],
) -> Result<(DatasetRow, ClipFeatures)> {
    let features = store.flipped_features(&row.clip_id)?;
    let mut out = row.clone();
    out.row_id = flipped_clip_id(&row.row_id);
    out.clip_id = features.clip_id.clone();
    out.question = hflip_text(&row.question, lexicon);
    out.candidates = row.candidates.iter().map(|c| hflip_text(c, lexicon)).collect();
    out.provenance.push(Provenance::Hflipped);
    out.validate()?;
    Ok((out, features))
}

/// Candidates reversed, label `i` mapped to `4 - i`.
pub fn mirror_row(row: &DatasetRow) -> DatasetRow {
    let mut out = row.clone();
    out.row_id = format!("{}__mir", row.row_id);
    out.candidates.reverse();
    out.label = NUM_CANDIDATES - 1 - row.label;
    out.provenance.push(Provenance::Mirrored);
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ResampleSkip {
    /// Fewer than 4 pool answers differ from the correct one.
    PoolTooSmall { eligible: usize },
    /// The only drawable wrong-answer tuple is the row's own.
    NoNovelTuple,
    /// Fewer distinct new tuples exist than copies requested.
    Partial { produced: usize, requested: usize },
}

impl ResampleSkip {
    pub fn kind(&self) -> &'static str {
        match self {
            ResampleSkip::PoolTooSmall { .. } => "pool_too_small",
            ResampleSkip::NoNovelTuple => "no_novel_tuple",
            ResampleSkip::Partial { .. } => "partial",
        }
    }
}

const WRONG: usize = NUM_CANDIDATES - 1;
const ENUMERATION_LIMIT: u64 = 4096;

fn choose(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Up to `copies` new rows with the same question, clip and correct answer
/// (at the same position) and wrong answers drawn without replacement from
/// `pool` minus the correct answer. Every produced wrong-answer set is
/// distinct from the source row's and from each other.
pub fn resample_row<R: Rng + ?Sized>(
    row: &DatasetRow,
    pool: &AnswerPool,
    copies: usize,
    rng: &mut R,
) -> (Vec<DatasetRow>, Option<ResampleSkip>) {
    if copies == 0 {
        return (Vec::new(), None);
    }
    let correct = row.correct_answer();
    let eligible: Vec<&str> = pool
        .answers
        .iter()
        .map(String::as_str)
        .filter(|a| *a != correct)
        .collect();
    if eligible.len() < WRONG {
        return (
            Vec::new(),
            Some(ResampleSkip::PoolTooSmall {
                eligible: eligible.len(),
            }),
        );
    }

    let original: BTreeSet<usize> = row
        .candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != row.label)
        .filter_map(|(_, c)| eligible.iter().position(|e| e == c))
        .collect();
    let original_drawable = original.len() == WRONG;
    let total = choose(eligible.len() as u64, WRONG as u64);
    let novel = total - u64::from(original_drawable);
    if novel == 0 {
        return (Vec::new(), Some(ResampleSkip::NoNovelTuple));
    }
    let target = (copies as u64).min(novel) as usize;

    let mut tuples: Vec<Vec<usize>> = Vec::with_capacity(target);
    if total <= ENUMERATION_LIMIT {
        let mut all: Vec<Vec<usize>> = combinations(eligible.len(), WRONG)
            .into_iter()
            .filter(|c| c.iter().copied().collect::<BTreeSet<_>>() != original)
            .collect();
        all.shuffle(rng);
        for mut t in all.into_iter().take(target) {
            t.shuffle(rng);
            tuples.push(t);
        }
    } else {
        let mut seen: BTreeSet<BTreeSet<usize>> = BTreeSet::new();
        seen.insert(original.clone());
        while tuples.len() < target {
            let t = index::sample(rng, eligible.len(), WRONG).into_vec();
            if seen.insert(t.iter().copied().collect()) {
                tuples.push(t);
            }
        }
    }

    let rows = tuples
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let mut wrong = t.iter().map(|&i| eligible[i].to_string());
            let mut out = row.clone();
            out.row_id = format!("{}__rs{}", row.row_id, j);
            out.candidates = (0..NUM_CANDIDATES)
                .map(|pos| {
                    if pos == row.label {
                        correct.to_string()
                    } else {
                        wrong.next().expect("four wrong answers")
                    }
                })
                .collect();
            out.provenance.push(Provenance::Resampled);
            out
        })
        .collect::<Vec<_>>();
    let skip = (rows.len() < copies).then_some(ResampleSkip::Partial {
        produced: rows.len(),
        requested: copies,
    });
    (rows, skip)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub row_id: String,
    #[serde(flatten)]
    pub skip: ResampleSkip,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub input_rows: usize,
    pub added_rows: usize,
    pub output_rows: usize,
    pub skip_counts: BTreeMap<String, usize>,
    pub skips: Vec<SkipEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub plan: AugmentationPlan,
    pub input_rows: usize,
    pub output_rows: usize,
    pub stages: Vec<StageReport>,
    /// Flipped clips whose features came from the column-permutation
    /// surrogate rather than a stored flipped entry.
    pub surrogate_flipped_clips: usize,
}

#[derive(Clone, Debug)]
pub struct Augmented {
    pub rows: Vec<DatasetRow>,
    /// Flipped clips not already present in the input store, by clip id.
    pub new_clips: Vec<ClipFeatures>,
    pub report: AugmentationReport,
}

/// Run the enabled stages over train rows. Test rows are rejected.
pub fn augment_split(
    rows: &[DatasetRow],
    pools: &AnswerPools,
    store: &FeatureStore,
    plan: &AugmentationPlan,
) -> Result<Augmented> {
    plan.validate()?;
    if let Some(r) = rows.iter().find(|r| r.split != Split::Train) {
        return Err(Error::invalid(
            &r.row_id,
            "test-split rows must not be augmented",
        ));
    }

    let mut current = rows.to_vec();
    let mut stages = Vec::new();
    let mut new_clips: BTreeMap<String, ClipFeatures> = BTreeMap::new();
    let mut surrogate = BTreeSet::new();

    if plan.enable_hflip {
        let input = current.len();
        let flipped: Vec<(DatasetRow, ClipFeatures)> = current
            .par_iter()
            .map(|r| hflip_row(r, store, &plan.lr_lexicon))
            .collect::<Result<_>>()?;
        for (row, cf) in flipped {
            if !store.contains(&cf.clip_id) {
                surrogate.insert(cf.clip_id.clone());
                new_clips.entry(cf.clip_id.clone()).or_insert(cf);
            }
            current.push(row);
        }
        stages.push(stage_report("hflip", input, current.len(), Vec::new()));
    }

    if plan.enable_resample && plan.resample_copies > 0 {
        let input = current.len();
        let empty = AnswerPool::default();
        let produced: Vec<(Vec<DatasetRow>, Option<ResampleSkip>)> = current
            .par_iter()
            .map(|r| {
                let pool = pools.get(&r.qtype).unwrap_or(&empty);
                let mut rng = rng::stream(plan.seed, &format!("resample/{}", r.row_id));
                resample_row(r, pool, plan.resample_copies, &mut rng)
            })
            .collect();
        let mut skips = Vec::new();
        let mut added = Vec::new();
        for (src, (new_rows, skip)) in current.iter().zip(produced) {
            if let Some(skip) = skip {
                skips.push(SkipEntry {
                    row_id: src.row_id.clone(),
                    skip,
                });
            }
            added.extend(new_rows);
        }
        current.extend(added);
        stages.push(stage_report("resample", input, current.len(), skips));
    }

    if plan.enable_mirror {
        let input = current.len();
        let mirrored: Vec<DatasetRow> = current.iter().map(mirror_row).collect();
        current.extend(mirrored);
        stages.push(stage_report("mirror", input, current.len(), Vec::new()));
    }

    crate::dataset::validate_rows(&current)?;
    Ok(Augmented {
        report: AugmentationReport {
            plan: plan.clone(),
            input_rows: rows.len(),
            output_rows: current.len(),
            stages,
            surrogate_flipped_clips: surrogate.len(),
        },
        rows: current,
        new_clips: new_clips.into_values().collect(),
    })
}

/// Augment the train rows of a whole manifest, with answer pools built from
/// those train rows. Test rows follow the augmented train rows unchanged.
pub fn augment_manifest(rows: &[DatasetRow], store: &FeatureStore, plan: &AugmentationPlan) -> Result<Augmented> {
    let (train, test): (Vec<DatasetRow>, Vec<DatasetRow>) =
        rows.iter().cloned().partition(|r| r.split == Split::Train);
    let pools = crate::dataset::build_pools(&train);
    let mut out = augment_split(&train, &pools, store, plan)?;
    out.rows.extend(test);
    crate::dataset::validate_rows(&out.rows)?;
    out.report.input_rows = rows.len();
    out.report.output_rows = out.rows.len();
    Ok(out)
}

fn stage_report(stage: &str, input: usize, output: usize, skips: Vec<SkipEntry>) -> StageReport {
    let mut skip_counts = BTreeMap::new();
    for s in &skips {
        *skip_counts.entry(s.skip.kind().to_string()).or_insert(0) += 1;
    }
    StageReport {
        stage: stage.to_string(),
        input_rows: input,
        added_rows: output - input,
        output_rows: output,
        skip_counts,
        skips,
    }
}
