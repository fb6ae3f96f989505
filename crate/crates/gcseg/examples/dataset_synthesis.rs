//! Generates a synthetic slide dataset, writes it to disk and reads it back.
//!
//! Run with `cargo run --example dataset_synthesis`.

use gcseg::config::SynthConfig;
use gcseg::synth::dataset::{load_split, read_manifest, write_dataset};
use gcseg::synth::generate::CLASS_NAMES;

fn main() -> gcseg::Result<()> {
    let cfg = SynthConfig {
        slides: 10,
        grid_tiles: 12,
        ..SynthConfig::default()
    };
    let dir = std::env::temp_dir().join("gcseg_example_dataset");
    let manifest = write_dataset(&cfg, &dir)?;
    println!("wrote {} slides to {}", cfg.slides, dir.display());
    println!(
        "splits: train {:?}, val {:?}, test {:?}",
        manifest.splits.train, manifest.splits.val, manifest.splits.test
    );
    println!("params digest: {}", manifest.params_digest);

    // reading back goes through the manifest, so a fresh handle sees the
    // same slides
    let manifest = read_manifest(&dir)?;
    let slides = load_split(&dir, &manifest, &manifest.splits.train)?;
    let mut pixel_counts = vec![0u64; CLASS_NAMES.len()];
    for slide in &slides {
        for &label in &slide.labels {
            pixel_counts[label as usize] += 1;
        }
    }
    let total: u64 = pixel_counts.iter().sum();
    println!("\nclass pixel shares over the training split:");
    for (name, count) in CLASS_NAMES.iter().zip(&pixel_counts) {
        println!(
            "  {:<12} {:>8} px  ({:.1}%)",
            name,
            count,
            100.0 * *count as f64 / total as f64
        );
    }
    Ok(())
}
