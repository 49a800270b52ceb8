//! Train on a 20-row synthetic corpus until it is memorized, then save and
//! reload the checkpoint.

use vqa_augment::model::{load_checkpoint, save_checkpoint, ModelConfig};
use vqa_augment::synthetic::{synthetic_corpus, SyntheticConfig};
use vqa_augment::training::{count_correct, prepare_examples, train_with, TrainConfig};

fn main() -> vqa_augment::Result<()> {
    let corpus = synthetic_corpus(&SyntheticConfig::default())?;
    let model = ModelConfig {
        embed_dim: 8,
        video_dim: 8,
        hidden: 16,
        attn_hidden: 8,
        max_frames: 0,
    };
    let config = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let mut memorized = false;
    let outcome = train_with(&corpus.rows, &[], &corpus.store, &corpus.table, &model, &config, |m| {
        let first = m.train_acc == 1.0 && !memorized;
        memorized |= first;
        if m.epoch % 20 == 0 || first {
            println!("epoch {:>3}  loss {:.4}  train {:.0}%", m.epoch, m.train_loss, 100.0 * m.train_acc);
        }
        Ok(())
    })?;
    println!("best epoch {:?}", outcome.best_epoch);

    let path = std::env::temp_dir().join(format!("vqa-train-synthetic-{}.ckpt", std::process::id()));
    save_checkpoint(&path, &outcome.params)?;
    let params = load_checkpoint::<f32>(&path)?;
    let examples = prepare_examples(&corpus.rows, &corpus.store, &corpus.table, &model)?;
    println!("reloaded checkpoint: {}/{} correct", count_correct(&params, &examples), examples.len());
    std::fs::remove_file(path).ok();
    Ok(())
}
