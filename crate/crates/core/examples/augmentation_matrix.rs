//! Train and evaluate every augmentation row on three random splits and
//! print the overall and per-type accuracy tables.

use vqa_augment::dataset::SplitSpec;
use vqa_augment::harness::{run_matrix, table_plans, AccuracyTable, TypeAccuracyTable};
use vqa_augment::model::ModelConfig;
use vqa_augment::synthetic::{synthetic_corpus, SyntheticConfig};
use vqa_augment::training::TrainConfig;

fn main() -> vqa_augment::Result<()> {
    let corpus = synthetic_corpus(&SyntheticConfig {
        rows: 96,
        ..SyntheticConfig::default()
    })?;
    let splits: Vec<SplitSpec> = (0..3).map(|i| SplitSpec::random(i, &corpus.rows, 0.25, 11)).collect();
    let model = ModelConfig {
        embed_dim: 8,
        video_dim: 8,
        hidden: 8,
        attn_hidden: 4,
        max_frames: 0,
    };
    let config = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let plans = table_plans(1, 11);
    let result = run_matrix(&corpus.rows, &splits, &plans, &corpus.store, &corpus.table, &model, &config)?;
    print!("{}", AccuracyTable::from_matrix(&result).to_text());
    println!();
    print!("{}", TypeAccuracyTable::from_matrix(&result).to_text());
    Ok(())
}
