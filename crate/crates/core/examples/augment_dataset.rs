//! Run the full hflip → resample → mirror pipeline over a synthetic manifest
//! and print the per-stage report.

use vqa_augment::augment::{augment_manifest, AugmentationPlan};
use vqa_augment::synthetic::{synthetic_corpus, SyntheticConfig};

fn main() -> vqa_augment::Result<()> {
    let corpus = synthetic_corpus(&SyntheticConfig {
        rows: 40,
        test_fraction: 0.25,
        ..SyntheticConfig::default()
    })?;
    let plan = AugmentationPlan::none().with_hflip().with_resample(2).with_mirror().with_seed(7);
    println!("plan {}:\n{}", plan.label(), plan.to_toml());

    let out = augment_manifest(&corpus.rows, &corpus.store, &plan)?;
    println!("{} rows in, {} rows out", out.report.input_rows, out.report.output_rows);
    for stage in &out.report.stages {
        println!(
            "  {:<8} {:>4} -> {:>4} (+{}) skips {:?}",
            stage.stage, stage.input_rows, stage.output_rows, stage.added_rows, stage.skip_counts
        );
    }
    println!("{} flipped clips synthesized", out.new_clips.len());

    let base = &corpus.rows[0];
    println!("\n{} | {} | {:?} -> {}", base.row_id, base.question, base.candidates, base.label);
    for r in out.rows.iter().filter(|r| r.row_id.starts_with(&format!("{}__", base.row_id))) {
        println!("{} | {} | {:?} -> {}", r.row_id, r.question, r.candidates, r.label);
    }
    Ok(())
}
