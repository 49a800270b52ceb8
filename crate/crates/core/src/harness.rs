//! Evaluation, per-question-type reporting and the augmentation × split
//! experiment matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_split, AugmentationPlan, AugmentationReport};
use crate::dataset::{build_pools, label_position_histogram, DatasetRow, LabelHistogram, QuestionType, Split, SplitSpec, NUM_CANDIDATES};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::model::{example_scores, predict, ModelConfig, ModelParams};
use crate::training::{prepare_examples, train, TrainConfig};
use crate::text::EmbeddingTable;

/// Accuracy broken down by question type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_index: usize,
    pub overall_accuracy: f64,
    pub per_type_accuracy: BTreeMap<QuestionType, f64>,
    /// `(correct, total)` per type; types without rows are omitted.
    pub counts: BTreeMap<QuestionType, (usize, usize)>,
    pub augmentation_plan: Option<AugmentationPlan>,
}

impl EvalReport {
    pub fn from_predictions(split_index: usize, outcomes: impl IntoIterator<Item = (QuestionType, bool)>) -> Self {
        let mut counts: BTreeMap<QuestionType, (usize, usize)> = BTreeMap::new();
        for (q, ok) in outcomes {
            let e = counts.entry(q).or_default();
            e.0 += usize::from(ok);
            e.1 += 1;
        }
        let per_type_accuracy = counts.iter().map(|(&q, &(c, t))| (q, percent(c, t))).collect();
        let (c, t) = counts
            .values()
            .fold((0, 0), |(ac, at), &(c, t)| (ac + c, at + t));
        Self {
            split_index,
            overall_accuracy: percent(c, t),
            per_type_accuracy,
            counts,
            augmentation_plan: None,
        }
    }

    pub fn correct(&self) -> usize {
        self.counts.values().map(|c| c.0).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.values().map(|c| c.1).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "split {}: {:.2}% ({}/{})\n",
            self.split_index,
            self.overall_accuracy,
            self.correct(),
            self.total()
        );
        for (q, (c, t)) in &self.counts {
            let _ = writeln!(s, "  {:<7} {:>6.2}% ({c}/{t})", q.code(), self.per_type_accuracy[q]);
        }
        s
    }
}

pub fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Test-set accuracy. Rows must be original (unaugmented) test rows.
pub fn evaluate(
    params: &ModelParams<f32>,
    rows: &[DatasetRow],
    store: &FeatureStore,
    table: &EmbeddingTable,
    config: &ModelConfig,
    split_index: usize,
) -> Result<EvalReport> {
    for r in rows {
        if r.split != Split::Test {
            return Err(Error::invalid(&r.row_id, "evaluation expects test-split rows"));
        }
        if !r.is_original() {
            return Err(Error::invalid(&r.row_id, "augmented rows are not allowed in the test set"));
        }
    }
    params.validate(config)?;
    let examples = prepare_examples(rows, store, table, config)?;
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|ex| predict(&example_scores(params, ex)) == ex.label)
        .collect();
    Ok(EvalReport::from_predictions(
        split_index,
        rows.iter().map(|r| r.qtype).zip(hits),
    ))
}

/// The seven augmentation rows of the comparison table, nested as
/// baseline / +mirror / +resample / +resample+mirror / +hflip /
/// +hflip+resample / +hflip+resample+mirror.
pub fn table_plans(resample_copies: usize, seed: u64) -> Vec<(String, AugmentationPlan)> {
    let base = AugmentationPlan::none().with_seed(seed);
    vec![
        ("ST-VQA".into(), base.clone()),
        ("+ mirroring".into(), base.clone().with_mirror()),
        ("+ resampling".into(), base.clone().with_resample(resample_copies)),
        ("  + mirroring".into(), base.clone().with_resample(resample_copies).with_mirror()),
        ("+ horizontal-flip".into(), base.clone().with_hflip()),
        ("  + resampling".into(), base.clone().with_hflip().with_resample(resample_copies)),
        (
            "    + mirroring".into(),
            base.with_hflip().with_resample(resample_copies).with_mirror(),
        ),
    ]
}

pub fn plain_mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixCell {
    pub plan_label: String,
    pub split_index: usize,
    pub report: Option<EvalReport>,
    pub augmentation: Option<AugmentationReport>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixResult {
    pub plan_labels: Vec<String>,
    /// Short plan names (`none`, `resample+mirror`, ...) parallel to `plan_labels`.
    pub plan_keys: Vec<String>,
    pub split_indices: Vec<usize>,
    pub cells: Vec<MatrixCell>,
}

/// For every (plan, split): augment the split's train rows, train a freshly
/// initialized model and evaluate on the split's test rows. Cells run in
/// parallel; a failing cell records its error and the others complete.
pub fn run_matrix(
    base: &[DatasetRow],
    splits: &[SplitSpec],
    plans: &[(String, AugmentationPlan)],
    store: &FeatureStore,
    table: &EmbeddingTable,
    model: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<MatrixResult> {
    if plans.is_empty() {
        return Err(Error::Config("no augmentation plans given".into()));
    }
    if splits.is_empty() {
        return Err(Error::Config("no splits given".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|p| (0..splits.len()).map(move |s| (p, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(p, s)| {
            let (label, plan) = &plans[p];
            let split = &splits[s];
            let mut cell = MatrixCell {
                plan_label: label.clone(),
                split_index: split.split_index,
                report: None,
                augmentation: None,
                best_epoch: None,
                error: None,
            };
            let run = || -> Result<_> {
                let (train_rows, test_rows) = split.apply(base)?;
                let pools = build_pools(&train_rows);
                let aug = augment_split(&train_rows, &pools, store, plan)?;
                let cell_store = store.with_overlay(aug.new_clips)?;
                let outcome = train(&aug.rows, &test_rows, &cell_store, table, model, train_config)?;
                let mut report = evaluate(&outcome.params, &test_rows, store, table, model, split.split_index)?;
                report.augmentation_plan = Some(plan.clone());
                Ok((report, aug.report, outcome.best_epoch))
            };
            match run() {
                Ok((report, aug, best_epoch)) => {
                    cell.report = Some(report);
                    cell.augmentation = Some(aug);
                    cell.best_epoch = best_epoch;
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            cell
        })
        .collect();
    Ok(MatrixResult {
        plan_labels: plans.iter().map(|(l, _)| l.clone()).collect(),
        plan_keys: plans.iter().map(|(_, p)| p.label()).collect(),
        split_indices: splits.iter().map(|s| s.split_index).collect(),
        cells,
    })
}

/// Overall accuracy per augmentation row and split, plus the plain mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub label: String,
    pub plan: String,
    /// Accuracy on splits 0, 1, 2; `None` when the cell is missing or failed.
    pub splits: [Option<f64>; 3],
    pub avg: Option<f64>,
}

impl AccuracyRow {
    pub fn new(label: impl Into<String>, splits: [Option<f64>; 3]) -> Self {
        let present: Vec<f64> = splits.iter().flatten().copied().collect();
        let label = label.into();
        Self {
            plan: label.trim().to_string(),
            label,
            splits,
            avg: plain_mean(&present),
        }
    }
}

fn cell_text(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl AccuracyTable {
    pub fn from_matrix(m: &MatrixResult) -> Self {
        let rows = m
            .plan_labels
            .iter()
            .zip(&m.plan_keys)
            .map(|(label, key)| {
                let mut splits = [None; 3];
                for c in m.cells.iter().filter(|c| &c.plan_label == label) {
                    if c.split_index < 3 {
                        splits[c.split_index] = c.report.as_ref().map(|r| r.overall_accuracy);
                    }
                }
                AccuracyRow {
                    plan: key.clone(),
                    ..AccuracyRow::new(label.clone(), splits)
                }
            })
            .collect();
        Self { rows }
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(12);
        let mut s = format!(
            "{:<width$} | {:^26} |\n{:<width$} | {:>8} {:>8} {:>8} | {:>8}\n",
            "Augmentation", "Accuracy (%) on split", "", "0", "1", "2", "Avg"
        );
        let _ = writeln!(s, "{}", "-".repeat(width + 41));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$} | {:>8} {:>8} {:>8} | {:>8}",
                r.label,
                cell_text(r.splits[0]),
                cell_text(r.splits[1]),
                cell_text(r.splits[2]),
                cell_text(r.avg)
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("augmentation,plan,split0,split1,split2,avg\n");
        let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.2}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "\"{}\",{},{},{},{},{}",
                r.label.trim(),
                r.plan,
                f(r.splits[0]),
                f(r.splits[1]),
                f(r.splits[2]),
                f(r.avg)
            );
        }
        s
    }
}

/// Per-question-type accuracy per augmentation row, with counts pooled over
/// all splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracyTable {
    pub rows: Vec<TypeAccuracyRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracyRow {
    pub label: String,
    pub plan: String,
    /// `None` for types with no test rows in any split.
    pub per_type: BTreeMap<QuestionType, Option<f64>>,
}

impl TypeAccuracyTable {
    pub fn from_matrix(m: &MatrixResult) -> Self {
        let rows = m
            .plan_labels
            .iter()
            .zip(&m.plan_keys)
            .map(|(label, key)| {
                let mut pooled: BTreeMap<QuestionType, (usize, usize)> = BTreeMap::new();
                for r in m
                    .cells
                    .iter()
                    .filter(|c| &c.plan_label == label)
                    .filter_map(|c| c.report.as_ref())
                {
                    for (q, (c, t)) in &r.counts {
                        let e = pooled.entry(*q).or_default();
                        e.0 += c;
                        e.1 += t;
                    }
                }
                let per_type = QuestionType::ALL
                    .into_iter()
                    .map(|q| (q, pooled.get(&q).map(|&(c, t)| percent(c, t))))
                    .collect();
                TypeAccuracyRow {
                    label: label.clone(),
                    plan: key.clone(),
                    per_type,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(12);
        let mut s = format!("{:<width$} |", "Augmentation");
        for q in QuestionType::ALL {
            let _ = write!(s, " {:>7}", q.code());
        }
        s.push('\n');
        let _ = writeln!(s, "{}", "-".repeat(width + 2 + 8 * 8));
        for r in &self.rows {
            let _ = write!(s, "{:<width$} |", r.label);
            for q in QuestionType::ALL {
                let _ = write!(s, " {:>7}", cell_text(r.per_type[&q]));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("augmentation,plan");
        for q in QuestionType::ALL {
            let _ = write!(s, ",{}", q.code());
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "\"{}\",{}", r.label.trim(), r.plan);
            for q in QuestionType::ALL {
                let _ = write!(s, ",{}", r.per_type[&q].map_or_else(String::new, |x| format!("{x:.2}")));
            }
            s.push('\n');
        }
        s
    }
}

/// Positions whose share of a type's labels exceeds this are flagged.
pub const BIAS_THRESHOLD_PERCENT: f64 = 25.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasFlag {
    pub qtype: QuestionType,
    pub position: usize,
    pub count: usize,
    pub total: usize,
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub histograms: Vec<LabelHistogram>,
    pub flags: Vec<BiasFlag>,
}

/// Label-position histograms for all question types, flagging positions
/// that hold more than 25% of a type's correct answers.
pub fn bias_report(rows: &[DatasetRow]) -> BiasReport {
    let histograms: Vec<LabelHistogram> = QuestionType::ALL
        .into_iter()
        .map(|q| label_position_histogram(rows, q))
        .collect();
    let flags = histograms
        .iter()
        .flat_map(|h| {
            (0..NUM_CANDIDATES).filter_map(move |p| {
                let share = h.share(p);
                (h.total > 0 && share > BIAS_THRESHOLD_PERCENT).then_some(BiasFlag {
                    qtype: h.qtype,
                    position: p,
                    count: h.counts[p],
                    total: h.total,
                    share,
                })
            })
        })
        .collect();
    BiasReport { histograms, flags }
}

impl BiasReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<7} | {:>12} {:>12} {:>12} {:>12} {:>12} | {:>5}\n",
            "Type", "pos 0", "pos 1", "pos 2", "pos 3", "pos 4", "total"
        );
        for h in &self.histograms {
            let _ = write!(s, "{:<7} |", h.qtype.code());
            for p in 0..NUM_CANDIDATES {
                let _ = write!(s, " {:>4} ({:>6}%)", h.counts[p], truncated_percent(h.counts[p], h.total));
            }
            let _ = writeln!(s, " | {:>5}", h.total);
        }
        for f in &self.flags {
            let _ = writeln!(
                s,
                "bias candidate: {} position {} holds {}/{} ({}%)",
                f.qtype.code(),
                f.position,
                f.count,
                f.total,
                truncated_percent(f.count, f.total)
            );
        }
        s
    }
}

/// `100 * count / total` truncated (not rounded) to two decimals, computed
/// in integers: 60/203 gives `29.55`.
pub fn truncated_percent(count: usize, total: usize) -> String {
    if total == 0 {
        return "0.00".into();
    }
    let hundredths = count as u128 * 10_000 / total as u128;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Question counts per type, in the layout of the dataset description table.
pub fn type_count_table(rows: &[DatasetRow]) -> String {
    let counts = crate::dataset::count_by_type(rows);
    let mut s = format!("{:<7} {:<14} {:>8}\n", "Code", "Question type", "Quantity");
    for (q, n) in &counts {
        let _ = writeln!(s, "{:<7} {:<14} {:>8}", q.code(), q.description(), n);
    }
    let _ = writeln!(s, "{:<7} {:<14} {:>8}", "", "Total", rows.len());
    s
}
