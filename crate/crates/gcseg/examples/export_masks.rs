//! Writes predicted-mask PNGs and color overlays for a slide.
//!
//! Run with `cargo run --release --example export_masks`.

use gcseg::config::{ModelConfig, SynthConfig, TrainConfig};
use gcseg::metrics::{export_masks, predict_stitched};
use gcseg::synth::generate::generate_dataset;
use gcseg::train::train;

fn main() -> gcseg::Result<()> {
    let synth = SynthConfig {
        slides: 3,
        grid_tiles: 10,
        ..SynthConfig::default()
    };
    let model = ModelConfig {
        latent_dim: 16,
        fusion_blocks: 1,
        heads: 2,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        steps: 200,
        log_every: 100,
        ..TrainConfig::default()
    };

    let slides = generate_dataset(&synth)?;
    let run = train::<f32>(&model, &tcfg, &slides, |row| {
        println!("step {:>4}  loss {:.4}", row.step, row.loss);
    })?;

    let out = std::env::temp_dir().join("gcseg_example_masks");
    for slide in &slides {
        let pred = predict_stitched(&run.params, &model, slide)?;
        export_masks(&out, &format!("slide_{:04}", slide.id), slide, &pred)?;
    }
    println!(
        "\nwrote {} files to {}",
        3 * slides.len(),
        out.display()
    );
    println!("each slide gets a class-index PNG plus prediction and truth overlays");
    Ok(())
}
