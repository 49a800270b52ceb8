//! Question-type counts and label-position histograms with bias flags.

use vqa_augment::dataset::{Provenance, QuestionType, Split};
use vqa_augment::harness::{bias_report, type_count_table};
use vqa_augment::synthetic::{synthetic_rows, SyntheticConfig};

fn main() {
    let mut rows = synthetic_rows(&SyntheticConfig {
        rows: 160,
        ..SyntheticConfig::default()
    });
    // Skew one type towards the last position.
    for r in rows.iter_mut().filter(|r| r.qtype == QuestionType::Act3rd).step_by(2) {
        r.label = 4;
    }
    println!("{}", type_count_table(&rows));
    let train: Vec<_> = rows
        .into_iter()
        .filter(|r| r.split == Split::Train && r.provenance == [Provenance::Original])
        .collect();
    print!("{}", bias_report(&train).to_text());
}
