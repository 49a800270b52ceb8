//! Write clip features to disk, reopen the store and derive a flipped clip.

use vqa_augment::features::{concat_features, synth_features, write_store, FeatureStore};

fn main() -> vqa_augment::Result<()> {
    let root = std::env::temp_dir().join(format!("vqa-feature-store-{}", std::process::id()));
    let clips: Vec<_> = ["kitchen", "street", "desk"]
        .iter()
        .map(|id| synth_features(id, 6, (4, 3), 1))
        .collect();
    let n = write_store(&root, &clips)?;
    println!("wrote {n} clips to {}", root.display());

    let store = FeatureStore::open(&root)?.with_flip_seed(5);
    println!("clips {:?}, dims {:?}", store.clip_ids(), store.dims());

    let clip = store.load_clip("street")?;
    let flipped = store.flipped_features("street")?;
    println!("{}: {} frames, concat width {}", clip.clip_id, clip.frames(), concat_features(&clip).cols());
    println!("{} (surrogate: {})", flipped.clip_id, store.uses_surrogate_flip("street"));
    println!("frame 0 appearance {:?}", clip.appearance.row(0));
    println!("flipped            {:?}", flipped.appearance.row(0));

    let back = store.with_overlay([flipped.clone()])?.flipped_features(&flipped.clip_id)?;
    println!("flip twice restores the clip: {}", back == clip);
    std::fs::remove_dir_all(&root).ok();
    Ok(())
}
