//! Compare reverse-mode gradients of the hinge loss with central finite
//! differences, per parameter tensor.

use vqa_augment::model::{example_scores, Example, ModelConfig, ModelParams};
use vqa_augment::synthetic::{synthetic_corpus, SyntheticConfig};
use vqa_augment::training::{hinge_loss, loss_and_grads, prepare_examples};

fn main() -> vqa_augment::Result<()> {
    let corpus = synthetic_corpus(&SyntheticConfig {
        rows: 2,
        ..SyntheticConfig::default()
    })?;
    let cfg = ModelConfig {
        embed_dim: 8,
        video_dim: 8,
        hidden: 6,
        attn_hidden: 4,
        max_frames: 0,
    };
    let ex: Example<f64> = prepare_examples(&corpus.rows, &corpus.store, &corpus.table, &cfg)?[0].cast();
    let params = ModelParams::<f64>::init(&cfg, 2)?;
    let (loss, grads, scores) = loss_and_grads(&params, &ex);
    println!("loss {loss:.6}, scores {scores:.4?}, label {}", ex.label);

    let h = 1e-6;
    for (t, (name, g)) in grads.named().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let mut p = params.clone();
            p.refs_mut()[t].as_mut_slice()[i] += h;
            let up = hinge_loss(&example_scores(&p, &ex), ex.label);
            p.refs_mut()[t].as_mut_slice()[i] -= 2.0 * h;
            let down = hinge_loss(&example_scores(&p, &ex), ex.label);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g.as_slice()[i]).abs());
        }
        println!("{name:<14} |grad| {:>10.3e}  max |ad - fd| {worst:.2e}", g.frobenius_norm());
    }
    Ok(())
}
