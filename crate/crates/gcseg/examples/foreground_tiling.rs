//! Otsu thresholding and foreground tiling on one synthetic slide.
//!
//! Run with `cargo run --example foreground_tiling`.

use gcseg::config::SynthConfig;
use gcseg::synth::generate::generate_slide;
use gcseg::synth::otsu::{histogram, otsu_threshold};
use gcseg::synth::tile::tile_slide;

fn main() -> gcseg::Result<()> {
    let cfg = SynthConfig {
        grid_tiles: 14,
        ..SynthConfig::default()
    };
    let slide = generate_slide(&cfg, 0)?;

    let hist = histogram(&slide.pixels);
    let threshold = otsu_threshold(&hist).expect("a structured slide always splits");
    let dark: u64 = hist[..=threshold as usize].iter().sum();
    let total: u64 = hist.iter().sum();
    println!(
        "otsu threshold {} ({:.1}% of pixels at or below it)",
        threshold,
        100.0 * dark as f64 / total as f64
    );

    let grid = tile_slide(&slide);
    println!(
        "{} of {} tiles are foreground\n",
        grid.foreground_count(),
        cfg.grid_tiles * cfg.grid_tiles
    );
    for r in 0..grid.grid_tiles {
        let row: String = (0..grid.grid_tiles)
            .map(|c| {
                if grid.foreground[r * grid.grid_tiles + c] {
                    '#'
                } else {
                    '.'
                }
            })
            .collect();
        println!("  {row}");
    }
    println!("\ntile dark-pixel fractions along the middle row:");
    let mid = grid.grid_tiles / 2;
    for c in 0..grid.grid_tiles {
        print!(" {:.2}", grid.fractions[mid * grid.grid_tiles + c]);
    }
    println!();
    Ok(())
}
