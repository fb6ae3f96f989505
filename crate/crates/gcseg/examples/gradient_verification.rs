//! Verifies every parameter of a small end-to-end model against central
//! differences in f64.
//!
//! Run with `cargo run --release --example gradient_verification`.

use gcseg::config::{Aggregation, FusionStrategy, ModelConfig, SynthConfig};
use gcseg::gradcheck::full_model_check;

fn main() -> gcseg::Result<()> {
    let model = ModelConfig {
        patch_px: 16,
        latent_dim: 8,
        gcn_layers: 2,
        fusion_blocks: 1,
        heads: 2,
        aggregation: Aggregation::SoftmaxTemp,
        fusion: FusionStrategy::Dcfusion,
        ffn: true,
        ..ModelConfig::default()
    };
    let synth = SynthConfig {
        slides: 1,
        grid_tiles: 5,
        tile_px: 16,
        structures: 2,
        radius_min: 1,
        radius_max: 2,
        marked_prob: 1.0,
        seed: 29,
    };

    let report = full_model_check(&model, &synth, 1e-6, 2)?;
    let mut rows: Vec<_> = report.per_param.iter().collect();
    rows.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));

    println!("{:<20} {:>12}", "parameter", "max rel err");
    for row in rows.iter().take(10) {
        println!("{:<20} {:>12.3e}", row.name, row.max_rel_err);
    }
    println!("... {} parameters checked in total", report.per_param.len());
    println!(
        "\nmax relative error {:.3e}  (threshold 1e-5: {})",
        report.max_rel_err(),
        if report.passes(1e-5) { "PASS" } else { "FAIL" }
    );
    Ok(())
}
