//! Score five candidates for one clip step by step: encoders, temporal
//! attention and the gated decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqa_augment::model::{attend, decode, predict, text_encode, video_encode, ModelConfig, ModelParams};
use vqa_augment::tensor::Matrix;

fn random(rows: usize, cols: usize, g: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| g.gen_range(-1.0..1.0)).collect())
}

fn main() -> vqa_augment::Result<()> {
    let cfg = ModelConfig {
        embed_dim: 6,
        video_dim: 10,
        hidden: 8,
        attn_hidden: 5,
        max_frames: 0,
    };
    let params = ModelParams::<f64>::init(&cfg, 3)?;
    let mut g = ChaCha8Rng::seed_from_u64(1);
    let video = random(7, cfg.video_dim, &mut g);
    let eps_v = video_encode(&video, &params)?.0;
    println!("encoded video {:?}", eps_v.shape());

    let mut scores = Vec::new();
    for c in 0..5 {
        let text = random(4 + c, cfg.embed_dim, &mut g);
        let eps_w = text_encode(&text, &params)?.0;
        let att = attend(&eps_v, &eps_w, &params)?;
        let score = decode(&att.omega_a, &eps_w, &params)?;
        let alpha: Vec<String> = att.alpha.as_slice().iter().map(|a| format!("{a:.3}")).collect();
        println!("candidate {c}: alpha [{}] score {score:+.5}", alpha.join(" "));
        scores.push(score);
    }
    println!("prediction: {}", predict(&scores));
    Ok(())
}
