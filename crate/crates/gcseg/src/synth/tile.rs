//! Foreground tiling.
//!
//! The slide-level Otsu threshold separates structure-dark pixels from the
//! bright background; a tile counts as foreground when at least half of its
//! pixels fall at or below the threshold. Slides whose histogram cannot be
//! split (single gray bin) have no foreground at all.

use crate::synth::generate::Slide;
use crate::synth::otsu::{gray, histogram, otsu_threshold};

/// Fraction of dark pixels required for a tile to count as foreground.
pub const FOREGROUND_MIN_FRACTION: f64 = 0.5;

/// Per-tile foreground decision for one slide.
#[derive(Clone, Debug)]
pub struct TileGrid {
    pub grid_tiles: usize,
    pub tile_px: usize,
    /// Slide-level Otsu threshold; `None` when the slide is a single flat
    /// gray value.
    pub threshold: Option<u8>,
    /// Dark-pixel fraction per tile, row-major.
    pub fractions: Vec<f64>,
    /// Foreground flag per tile, row-major.
    pub foreground: Vec<bool>,
}

impl TileGrid {
    /// Row-major coordinates of foreground tiles.
    pub fn foreground_coords(&self) -> Vec<(usize, usize)> {
        let g = self.grid_tiles;
        (0..g * g)
            .filter(|&i| self.foreground[i])
            .map(|i| (i / g, i % g))
            .collect()
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground.iter().filter(|&&f| f).count()
    }
}

/// Classifies every tile of a slide as foreground or background using the
/// default dark-fraction cutoff.
pub fn tile_slide(slide: &Slide) -> TileGrid {
    tile_slide_with(slide, FOREGROUND_MIN_FRACTION)
}

/// Same as [`tile_slide`] but with an explicit dark-fraction cutoff.
pub fn tile_slide_with(slide: &Slide, tau_fg: f64) -> TileGrid {
    let (g, s, w) = (slide.grid_tiles, slide.tile_px, slide.width_px());
    let hist = histogram(&slide.pixels);
    let threshold = otsu_threshold(&hist);

    let mut fractions = vec![0.0; g * g];
    let mut foreground = vec![false; g * g];
    if let Some(t) = threshold {
        for r in 0..g {
            for c in 0..g {
                let mut dark = 0usize;
                for y in r * s..(r + 1) * s {
                    for x in c * s..(c + 1) * s {
                        let off = (y * w + x) * 3;
                        let v = gray(
                            slide.pixels[off],
                            slide.pixels[off + 1],
                            slide.pixels[off + 2],
                        );
                        if v <= t {
                            dark += 1;
                        }
                    }
                }
                let frac = dark as f64 / (s * s) as f64;
                fractions[r * g + c] = frac;
                foreground[r * g + c] = frac >= tau_fg;
            }
        }
    }
    TileGrid {
        grid_tiles: g,
        tile_px: s,
        threshold,
        fractions,
        foreground,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SynthConfig;
    use crate::synth::generate::{generate_slide, CLASS_BACKGROUND};

    fn flat_slide(value: u8) -> Slide {
        Slide {
            id: 0,
            grid_tiles: 4,
            tile_px: 8,
            pixels: vec![value; 32 * 32 * 3],
            labels: vec![0; 32 * 32],
        }
    }

    #[test]
    fn flat_slide_has_no_foreground() {
        let grid = tile_slide(&flat_slide(200));
        assert_eq!(grid.threshold, None);
        assert_eq!(grid.foreground_count(), 0);
    }

    #[test]
    fn dark_tiles_become_foreground() {
        let mut slide = flat_slide(240);
        // darken tile (1, 2) completely
        let (s, w) = (slide.tile_px, slide.grid_tiles * slide.tile_px);
        for y in s..2 * s {
            for x in 2 * s..3 * s {
                let off = (y * w + x) * 3;
                slide.pixels[off..off + 3].fill(40);
            }
        }
        let grid = tile_slide(&slide);
        assert!(grid.threshold.is_some());
        assert_eq!(grid.foreground_coords(), vec![(1, 2)]);
        assert!(grid.fractions[1 * 4 + 2] > 0.99);
    }

    #[test]
    fn generated_foreground_matches_structure_tiles() {
        let cfg = SynthConfig {
            slides: 1,
            grid_tiles: 12,
            tile_px: 16,
            structures: 4,
            marked_prob: 0.5,
            seed: 21,
            ..SynthConfig::default()
        };
        let slide = generate_slide(&cfg, 0).unwrap();
        let grid = tile_slide(&slide);
        let classes = slide.tile_classes();
        for (i, &fg) in grid.foreground.iter().enumerate() {
            assert_eq!(
                fg,
                classes[i] != CLASS_BACKGROUND,
                "tile {i}: foreground {fg} but class {}",
                classes[i]
            );
        }
    }

    #[test]
    fn cutoff_parameter_moves_the_decision() {
        let mut slide = flat_slide(240);
        // darken a quarter of tile (0, 0)
        let (s, w) = (slide.tile_px, slide.grid_tiles * slide.tile_px);
        for y in 0..s / 2 {
            for x in 0..s / 2 {
                let off = (y * w + x) * 3;
                slide.pixels[off..off + 3].fill(10);
            }
        }
        assert!(!tile_slide_with(&slide, 0.5).foreground[0]);
        assert!(tile_slide_with(&slide, 0.2).foreground[0]);
    }

    #[test]
    fn half_fraction_rule_is_inclusive() {
        let mut slide = flat_slide(240);
        // darken exactly half of tile (0, 0)
        let (s, w) = (slide.tile_px, slide.grid_tiles * slide.tile_px);
        for y in 0..s {
            for x in 0..s / 2 {
                let off = (y * w + x) * 3;
                slide.pixels[off..off + 3].fill(10);
            }
        }
        let grid = tile_slide(&slide);
        assert!((grid.fractions[0] - 0.5).abs() < 1e-12);
        assert!(grid.foreground[0]);
    }
}
