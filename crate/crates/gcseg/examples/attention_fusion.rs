//! Compares fusion strategies by how strongly the fused tokens react to a
//! change in the context vector.
//!
//! Run with `cargo run --example attention_fusion`.

use gcseg::config::{FusionStrategy, ModelConfig};
use gcseg::fusion::fuse_tokens;
use gcseg::model::init_params;
use gcseg::params::ParamSet;
use gcseg::tape::Tape;
use gcseg::tensor::Tensor;

fn sensitivity(strategy: FusionStrategy) -> f64 {
    let cfg = ModelConfig {
        patch_px: 16,
        latent_dim: 8,
        fusion_blocks: 1,
        heads: 2,
        fusion: strategy,
        ..ModelConfig::default()
    };
    let params: ParamSet<f64> = init_params(&cfg, 5).cast();
    let b2 = cfg.token_grid() * cfg.token_grid();

    let tokens: Vec<f64> = (0..b2 * cfg.latent_dim)
        .map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0)
        .collect();
    let run = |ctx: Vec<f64>| -> Vec<f64> {
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let t = tape.leaf(Tensor::new(&[b2, cfg.latent_dim], tokens.clone()).unwrap());
        let c = tape.leaf(Tensor::new(&[1, cfg.latent_dim], ctx).unwrap());
        let fused = fuse_tokens(&mut tape, &tp, &cfg, t, c);
        tape.value(fused).data().to_vec()
    };

    let quiet = run(vec![0.0; cfg.latent_dim]);
    let loud = run((0..cfg.latent_dim).map(|i| if i % 2 == 0 { 0.8 } else { -0.6 }).collect());
    quiet
        .iter()
        .zip(&loud)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / quiet.len() as f64
}

fn main() {
    println!("mean |change| of fused tokens when the context vector changes:\n");
    for strategy in [
        FusionStrategy::None,
        FusionStrategy::Dot,
        FusionStrategy::Cat,
        FusionStrategy::Dcfusion,
    ] {
        println!("  {:<10} {:.6}", strategy.to_string(), sensitivity(strategy));
    }
    println!("\nthe none strategy ignores context entirely; all others pass it through");
}
