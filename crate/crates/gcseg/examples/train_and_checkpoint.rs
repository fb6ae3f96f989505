//! Trains a small model on generated slides, saves a checkpoint and proves
//! the round trip is bit-exact.
//!
//! Run with `cargo run --release --example train_and_checkpoint`.

use gcseg::checkpoint::{self, Checkpoint};
use gcseg::config::{ModelConfig, SynthConfig, TrainConfig};
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
        steps: 120,
        log_every: 30,
        ..TrainConfig::default()
    };

    let slides = generate_dataset(&synth)?;
    let run = train::<f32>(&model, &tcfg, &slides, |row| {
        println!("step {:>4}  loss {:.4}", row.step, row.loss);
    })?;

    let path = std::env::temp_dir().join("gcseg_example.ckpt");
    checkpoint::save(
        &path,
        &Checkpoint {
            model: model.clone(),
            step: tcfg.steps as u64,
            final_loss: run.final_loss,
            params: run.params.clone(),
        },
    )?;
    let back = checkpoint::load(&path)?;
    println!("\ncheckpoint at {}", path.display());
    println!("config echo matches: {}", back.model == model);

    let mut exact = true;
    for (name, t) in run.params.iter() {
        let u = back.params.get(name);
        exact &= t
            .data()
            .iter()
            .zip(u.data().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    println!("all {} tensors bit-exact: {exact}", run.params.len());
    Ok(())
}
