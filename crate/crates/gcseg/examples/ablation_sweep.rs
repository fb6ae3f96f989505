//! Sweeps the context depth on the released dataset profile: no context
//! against full three-step context.
//!
//! Run with `cargo run --release --example ablation_sweep`. Trains two
//! models, takes about a minute of CPU.

use gcseg::config::{Aggregation, FusionStrategy, ModelConfig, SynthConfig, TrainConfig};
use gcseg::metrics::evaluate_slides;
use gcseg::synth::dataset::make_splits;
use gcseg::synth::generate::{generate_dataset, CLASS_NAMES};
use gcseg::train::train;

fn main() -> gcseg::Result<()> {
    let synth = SynthConfig {
        slides: 14,
        grid_tiles: 16,
        seed: 17,
        ..SynthConfig::default()
    };
    let all = generate_dataset(&synth)?;
    let splits = make_splits(all.len(), synth.seed);
    let train_slides: Vec<_> = splits.train.iter().map(|&i| all[i].clone()).collect();
    let test_slides: Vec<_> = splits.test.iter().map(|&i| all[i].clone()).collect();
    let names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();

    println!("gcn_layers,macro_f1,marked_f1");
    for layers in [0, 3] {
        let model = ModelConfig {
            latent_dim: 16,
            fusion_blocks: 1,
            heads: 2,
            gcn_layers: layers,
            aggregation: Aggregation::Sym,
            fusion: FusionStrategy::Dcfusion,
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig {
            steps: 700,
            log_every: 10_000,
            ..TrainConfig::default()
        };
        let run = train::<f32>(&model, &tcfg, &train_slides, |_| {})?;
        let report = evaluate_slides(&run.params, &model, &test_slides, &names)?;
        println!(
            "{},{:.3},{:.3}",
            layers,
            report.macro_.f1,
            report.per_class[3].f1
        );
    }
    println!("\naway from its single marker tile a marked structure looks");
    println!("exactly like a dotted one, so the context-free model cannot");
    println!("label its body; three aggregation steps carry the marker");
    println!("across structures up to radius 3");
    Ok(())
}
