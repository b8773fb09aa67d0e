//! Renders a small synthetic multi-scene dataset, reloads it from its
//! manifest, merges it with a second dataset and runs the augmentation
//! pipeline on one image.

use c2f_pose::data::{
    augment, generate_synthetic, load_dataset, merge_datasets, AugmentMode, AugmentationConfig, Split, SynthConfig,
};

fn main() -> c2f_pose::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = SynthConfig {
        num_scenes: 2,
        samples_per_scene: 8,
        test_per_scene: 2,
        image_size: 64,
        seed: 3,
    };
    let data = generate_synthetic(&cfg, dir.path().join("a"))?;
    println!(
        "rendered {} samples ({} train, {} test) over {} scenes",
        data.len(),
        data.split(Split::Train).len(),
        data.split(Split::Test).len(),
        data.num_scenes()
    );

    let reloaded = load_dataset(dir.path().join("a/manifest.txt"))?;
    let s = &reloaded.samples[0];
    println!(
        "first manifest entry: scene {} at {:?}, q {:?}",
        s.scene_id,
        s.pose.position,
        s.pose.orientation.to_array()
    );
    print!(
        "scene map:\n{}",
        std::fs::read_to_string(dir.path().join("a/scenes.txt"))?
    );

    let other = generate_synthetic(&SynthConfig { seed: 9, ..cfg }, dir.path().join("b"))?;
    let merged = merge_datasets([reloaded, other]);
    println!(
        "merged dataset: {} scenes, {} samples",
        merged.num_scenes(),
        merged.len()
    );

    let img = image::open(&merged.samples[0].image)?.to_rgb8();
    let aug = AugmentationConfig {
        resize: 72,
        crop: 64,
        ..AugmentationConfig::default()
    };
    let train = augment(&img, &aug, AugmentMode::Train { seed: 1 })?;
    let test = augment(&img, &aug, AugmentMode::Test)?;
    let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
    println!(
        "augmented {}x{}: train-mode mean {:.3}, test-mode mean {:.3}",
        train.height,
        train.width,
        mean(&train.data),
        mean(&test.data)
    );
    Ok(())
}
