//! Synthetic slide generation.
//!
//! A slide is a square grid of tiles. Structures are tile-aligned Euclidean
//! disks of a single class dropped onto a near-white background:
//!
//! * `plain` renders as a flat dark wash,
//! * `dotted` renders as a lighter wash with a dark dot lattice,
//! * `marked` renders through the *same* routine as `dotted` except for one
//!   pale marker tile at the structure center.
//!
//! Away from its marker tile a marked structure is therefore statistically
//! indistinguishable from a dotted one; telling them apart requires carrying
//! the marker signal across the structure, which is exactly what the context
//! stage of the model is for. Radii span 1 to 3 tiles by default, so the
//! marker reaches most of its structure within three 4-adjacency hops while
//! one-hop context only ever sees a fraction of it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::SynthConfig;
use crate::error::{Error, Result};

/// Class indices used throughout the crate.
pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_PLAIN: u8 = 1;
pub const CLASS_DOTTED: u8 = 2;
pub const CLASS_MARKED: u8 = 3;

/// Human-readable class names, indexed by class id.
pub const CLASS_NAMES: [&str; 4] = ["background", "plain", "dotted", "marked"];

/// One generated slide with per-pixel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Slide {
    pub id: usize,
    pub grid_tiles: usize,
    pub tile_px: usize,
    /// RGB8, row-major, 3 bytes per pixel.
    pub pixels: Vec<u8>,
    /// Class index per pixel, same spatial order.
    pub labels: Vec<u8>,
}

impl Slide {
    /// Slide edge in pixels.
    pub fn width_px(&self) -> usize {
        self.grid_tiles * self.tile_px
    }

    /// Majority label of one tile (labels are uniform per tile for generated
    /// slides, but loaders go through the same path).
    pub fn tile_class(&self, row: usize, col: usize) -> u8 {
        let w = self.width_px();
        let s = self.tile_px;
        let mut counts = [0u32; 4];
        for y in row * s..(row + 1) * s {
            for x in col * s..(col + 1) * s {
                counts[self.labels[y * w + x] as usize] += 1;
            }
        }
        let mut best = 0;
        for c in 1..4 {
            if counts[c] > counts[best] {
                best = c;
            }
        }
        best as u8
    }

    /// Class per tile over the whole grid, row-major.
    pub fn tile_classes(&self) -> Vec<u8> {
        let g = self.grid_tiles;
        let mut out = Vec::with_capacity(g * g);
        for r in 0..g {
            for c in 0..g {
                out.push(self.tile_class(r, c));
            }
        }
        out
    }
}

struct Structure {
    class: u8,
    center: (usize, usize),
    tiles: Vec<(usize, usize)>,
}

/// Tile-aligned Euclidean disk: tiles whose center offset satisfies
/// `dr^2 + dc^2 <= radius^2`.
fn disk(center: (usize, usize), radius: usize) -> Vec<(usize, usize)> {
    let r = radius as isize;
    let mut tiles = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                tiles.push((
                    (center.0 as isize + dr) as usize,
                    (center.1 as isize + dc) as usize,
                ));
            }
        }
    }
    tiles
}

const PLACEMENT_ATTEMPTS: usize = 100;

fn sample_class(rng: &mut ChaCha20Rng, marked_prob: f64) -> u8 {
    let u: f64 = rng.random();
    if u < marked_prob {
        CLASS_MARKED
    } else if u < marked_prob + (1.0 - marked_prob) * 0.4 {
        CLASS_PLAIN
    } else {
        // dotted keeps the larger share of the remainder so that, on tile
        // mass alone, a dotted-looking tile is more likely dotted than marked
        CLASS_DOTTED
    }
}

fn place_structures(rng: &mut ChaCha20Rng, cfg: &SynthConfig) -> Vec<Structure> {
    let g = cfg.grid_tiles;
    let mut blocked = vec![false; g * g];
    let mut out: Vec<Structure> = Vec::new();
    for _ in 0..cfg.structures {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let radius = rng.random_range(cfg.radius_min..=cfg.radius_max);
            if 2 * radius >= g {
                continue;
            }
            let lo = radius;
            let hi = g - radius;
            let center = (rng.random_range(lo..hi), rng.random_range(lo..hi));
            let tiles = disk(center, radius);
            if tiles.iter().any(|&(r, c)| blocked[r * g + c]) {
                continue;
            }
            // block the structure plus a one-tile ring so separate
            // structures never touch, even diagonally
            for &(r, c) in &tiles {
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (br, bc) = (r as isize + dr, c as isize + dc);
                        if br >= 0 && bc >= 0 && (br as usize) < g && (bc as usize) < g {
                            blocked[br as usize * g + bc as usize] = true;
                        }
                    }
                }
            }
            out.push(Structure {
                class: sample_class(rng, cfg.marked_prob),
                center,
                tiles,
            });
            break;
        }
    }
    out
}

// base colors per texture; noise is added per pixel
const BG_BASE: u8 = 245;
const PLAIN_RGB: [u8; 3] = [70, 80, 115];
const TEXTURED_RGB: [u8; 3] = [140, 130, 135];
const DOT_RGB: [u8; 3] = [50, 45, 55];
// pale but still well inside the dark half of the histogram, so the marker
// tile always survives foreground tiling
const MARKER_RGB: [u8; 3] = [150, 140, 150];

fn noisy(base: u8, noise: i16) -> u8 {
    (base as i16 + noise).clamp(0, 255) as u8
}

fn put_px(pixels: &mut [u8], w: usize, x: usize, y: usize, rgb: [u8; 3], noise: i16) {
    let off = (y * w + x) * 3;
    pixels[off] = noisy(rgb[0], noise);
    pixels[off + 1] = noisy(rgb[1], noise);
    pixels[off + 2] = noisy(rgb[2], noise);
}

fn render_background_tile(
    rng: &mut ChaCha20Rng,
    pixels: &mut [u8],
    w: usize,
    s: usize,
    tile: (usize, usize),
) {
    for y in tile.0 * s..(tile.0 + 1) * s {
        for x in tile.1 * s..(tile.1 + 1) * s {
            let n: i16 = rng.random_range(0..=9);
            put_px(pixels, w, x, y, [BG_BASE; 3], n);
        }
    }
}

fn render_plain_tile(
    rng: &mut ChaCha20Rng,
    pixels: &mut [u8],
    w: usize,
    s: usize,
    tile: (usize, usize),
) {
    for y in tile.0 * s..(tile.0 + 1) * s {
        for x in tile.1 * s..(tile.1 + 1) * s {
            let n: i16 = rng.random_range(-8..=8);
            put_px(pixels, w, x, y, PLAIN_RGB, n);
        }
    }
}

/// Shared by the dotted class and by non-marker tiles of the marked class,
/// so the two are pixel-statistically identical.
fn render_textured_tile(
    rng: &mut ChaCha20Rng,
    pixels: &mut [u8],
    w: usize,
    s: usize,
    tile: (usize, usize),
) {
    for y in tile.0 * s..(tile.0 + 1) * s {
        for x in tile.1 * s..(tile.1 + 1) * s {
            let n: i16 = rng.random_range(-8..=8);
            // dot lattice phased to the tile origin: 3x3 dark squares every
            // 8 px
            let in_dot = (y % s) % 8 < 3 && (x % s) % 8 < 3;
            let rgb = if in_dot { DOT_RGB } else { TEXTURED_RGB };
            put_px(pixels, w, x, y, rgb, n);
        }
    }
}

fn render_marker_tile(
    rng: &mut ChaCha20Rng,
    pixels: &mut [u8],
    w: usize,
    s: usize,
    tile: (usize, usize),
) {
    for y in tile.0 * s..(tile.0 + 1) * s {
        for x in tile.1 * s..(tile.1 + 1) * s {
            let n: i16 = rng.random_range(-8..=8);
            put_px(pixels, w, x, y, MARKER_RGB, n);
        }
    }
}

/// Generates one slide deterministically from the config seed and slide id.
pub fn generate_slide(cfg: &SynthConfig, id: usize) -> Result<Slide> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(
        cfg.seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let g = cfg.grid_tiles;
    let s = cfg.tile_px;
    let w = g * s;

    let structures = place_structures(&mut rng, cfg);
    if structures.is_empty() {
        return Err(Error::Generation(format!(
            "slide {id}: no structure could be placed on a {g}x{g} grid"
        )));
    }

    let mut tile_class = vec![CLASS_BACKGROUND; g * g];
    let mut tile_marker = vec![false; g * g];
    for st in &structures {
        for &(r, c) in &st.tiles {
            tile_class[r * g + c] = st.class;
        }
        if st.class == CLASS_MARKED {
            tile_marker[st.center.0 * g + st.center.1] = true;
        }
    }

    let mut pixels = vec![0u8; w * w * 3];
    let mut labels = vec![0u8; w * w];
    for r in 0..g {
        for c in 0..g {
            let class = tile_class[r * g + c];
            match class {
                CLASS_BACKGROUND => render_background_tile(&mut rng, &mut pixels, w, s, (r, c)),
                CLASS_PLAIN => render_plain_tile(&mut rng, &mut pixels, w, s, (r, c)),
                CLASS_DOTTED => render_textured_tile(&mut rng, &mut pixels, w, s, (r, c)),
                CLASS_MARKED => {
                    if tile_marker[r * g + c] {
                        render_marker_tile(&mut rng, &mut pixels, w, s, (r, c));
                    } else {
                        render_textured_tile(&mut rng, &mut pixels, w, s, (r, c));
                    }
                }
                _ => unreachable!(),
            }
            if class != CLASS_BACKGROUND {
                for y in r * s..(r + 1) * s {
                    for x in c * s..(c + 1) * s {
                        labels[y * w + x] = class;
                    }
                }
            }
        }
    }

    Ok(Slide {
        id,
        grid_tiles: g,
        tile_px: s,
        pixels,
        labels,
    })
}

/// Generates the whole dataset in slide-id order.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<Slide>> {
    (0..cfg.slides).map(|id| generate_slide(cfg, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            slides: 4,
            grid_tiles: 12,
            tile_px: 16,
            structures: 4,
            marked_prob: 0.4,
            seed: 99,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_slide(&cfg, 2).unwrap();
        let b = generate_slide(&cfg, 2).unwrap();
        assert_eq!(a, b);
        let c = generate_slide(&cfg, 3).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn labels_are_uniform_per_tile() {
        let slide = generate_slide(&small_cfg(), 0).unwrap();
        let (g, s, w) = (slide.grid_tiles, slide.tile_px, slide.width_px());
        for r in 0..g {
            for c in 0..g {
                let first = slide.labels[(r * s) * w + c * s];
                for y in r * s..(r + 1) * s {
                    for x in c * s..(c + 1) * s {
                        assert_eq!(slide.labels[y * w + x], first);
                    }
                }
            }
        }
    }

    #[test]
    fn structures_are_separated() {
        // no two tiles of different classes may touch, even diagonally
        let slide = generate_slide(&small_cfg(), 1).unwrap();
        let g = slide.grid_tiles;
        let classes = slide.tile_classes();
        for r in 0..g {
            for c in 0..g {
                let a = classes[r * g + c];
                if a == CLASS_BACKGROUND {
                    continue;
                }
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (nr, nc) = (r as isize + dr, c as isize + dc);
                        if nr < 0 || nc < 0 || nr as usize >= g || nc as usize >= g {
                            continue;
                        }
                        let b = classes[nr as usize * g + nc as usize];
                        assert!(
                            b == CLASS_BACKGROUND || b == a,
                            "classes {a} and {b} touch at ({r},{c})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn marked_structures_have_exactly_one_marker_like_tile() {
        // count pale tiles inside marked regions via mean gray
        for id in 0..6 {
            let cfg = SynthConfig {
                marked_prob: 1.0,
                ..small_cfg()
            };
            let slide = generate_slide(&cfg, id).unwrap();
            let g = slide.grid_tiles;
            let classes = slide.tile_classes();
            let mut pale = 0usize;
            let mut marked_tiles = 0usize;
            for r in 0..g {
                for c in 0..g {
                    if classes[r * g + c] != CLASS_MARKED {
                        continue;
                    }
                    marked_tiles += 1;
                    if mean_gray(&slide, r, c) > 135.0 {
                        pale += 1;
                    }
                }
            }
            // every structure is marked, so pale tiles == structure count
            assert!(pale >= 1, "slide {id}: no marker tile found");
            assert!(
                pale * 5 <= marked_tiles * 2,
                "slide {id}: markers dominate ({pale} of {marked_tiles})"
            );
        }
    }

    fn mean_gray(slide: &Slide, r: usize, c: usize) -> f64 {
        let (s, w) = (slide.tile_px, slide.width_px());
        let mut sum = 0f64;
        for y in r * s..(r + 1) * s {
            for x in c * s..(c + 1) * s {
                let off = (y * w + x) * 3;
                sum += crate::synth::otsu::gray(
                    slide.pixels[off],
                    slide.pixels[off + 1],
                    slide.pixels[off + 2],
                ) as f64;
            }
        }
        sum / (s * s) as f64
    }

    /// A per-tile nearest-centroid classifier on mean color cannot separate
    /// dotted tiles from non-marker marked tiles.
    #[test]
    fn dotted_and_marked_bodies_are_indistinguishable_by_tile_stats() {
        let cfg = SynthConfig {
            slides: 16,
            marked_prob: 0.5,
            seed: 5,
            ..small_cfg()
        };
        let slides = generate_dataset(&cfg).unwrap();

        // mean gray per tile, split by truth into dotted vs marked-body
        let mut dotted: Vec<f64> = Vec::new();
        let mut marked_body: Vec<f64> = Vec::new();
        for slide in &slides {
            let g = slide.grid_tiles;
            let classes = slide.tile_classes();
            for r in 0..g {
                for c in 0..g {
                    match classes[r * g + c] {
                        CLASS_DOTTED => dotted.push(mean_gray(slide, r, c)),
                        CLASS_MARKED => {
                            let mg = mean_gray(slide, r, c);
                            if mg <= 135.0 {
                                marked_body.push(mg);
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
        assert!(dotted.len() > 20 && marked_body.len() > 20, "weak sample");

        // standardized mean difference between the two populations; a small
        // effect size means a per-tile statistic cannot tell them apart
        let mu_d = dotted.iter().sum::<f64>() / dotted.len() as f64;
        let mu_m = marked_body.iter().sum::<f64>() / marked_body.len() as f64;
        let var = |v: &[f64], mu: f64| v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>()
            / (v.len() - 1) as f64;
        let pooled = ((var(&dotted, mu_d) + var(&marked_body, mu_m)) / 2.0).sqrt();
        let effect = (mu_d - mu_m).abs() / pooled;
        assert!(
            effect <= 0.35,
            "tile statistics separate the classes: effect size {effect:.3} \
             (means {mu_d:.2} vs {mu_m:.2}, pooled sd {pooled:.3})"
        );
    }

    fn tile_stats(slide: &Slide, r: usize, c: usize) -> [f64; 2] {
        let (s, w) = (slide.tile_px, slide.width_px());
        let mut sum = 0f64;
        let mut sq = 0f64;
        for y in r * s..(r + 1) * s {
            for x in c * s..(c + 1) * s {
                let off = (y * w + x) * 3;
                let g = crate::synth::otsu::gray(
                    slide.pixels[off],
                    slide.pixels[off + 1],
                    slide.pixels[off + 2],
                ) as f64;
                sum += g;
                sq += g * g;
            }
        }
        let n = (s * s) as f64;
        let mean = sum / n;
        [mean, (sq / n - mean * mean).max(0.0).sqrt()]
    }

    /// Marker tiles aside, dotted vs marked must stay a coin flip for any
    /// per-tile statistic. A nearest-centroid classifier on (mean, sd) gray,
    /// fit on one set of slides and scored on fresh ones, is held to 55%.
    #[test]
    fn tile_statistics_baseline_stays_near_chance() {
        let cfg = SynthConfig {
            slides: 30,
            marked_prob: 0.5,
            seed: 8,
            ..small_cfg()
        };
        let slides = generate_dataset(&cfg).unwrap();
        let (fit, held) = slides.split_at(20);

        let collect = |set: &[Slide]| {
            let mut rows: Vec<([f64; 2], bool)> = Vec::new();
            for slide in set {
                let g = slide.grid_tiles;
                let classes = slide.tile_classes();
                for r in 0..g {
                    for c in 0..g {
                        let stats = tile_stats(slide, r, c);
                        match classes[r * g + c] {
                            CLASS_DOTTED => rows.push((stats, false)),
                            // skip the pale marker tile itself
                            CLASS_MARKED if stats[0] <= 135.0 => rows.push((stats, true)),
                            _ => {}
                        }
                    }
                }
            }
            rows
        };
        let train_rows = collect(fit);
        let held_rows = collect(held);
        assert!(train_rows.len() > 100 && held_rows.len() > 50, "weak sample");

        let centroid = |marked: bool| {
            let sel: Vec<&[f64; 2]> = train_rows
                .iter()
                .filter(|(_, m)| *m == marked)
                .map(|(s, _)| s)
                .collect();
            let n = sel.len() as f64;
            [
                sel.iter().map(|s| s[0]).sum::<f64>() / n,
                sel.iter().map(|s| s[1]).sum::<f64>() / n,
            ]
        };
        let (cd, cm) = (centroid(false), centroid(true));

        let mut correct = 0usize;
        for (s, marked) in &held_rows {
            let d2 = |c: &[f64; 2]| (s[0] - c[0]).powi(2) + (s[1] - c[1]).powi(2);
            let guess = d2(&cm) < d2(&cd);
            if guess == *marked {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / held_rows.len() as f64;
        assert!(
            accuracy <= 0.55,
            "tile-statistics baseline too strong: held-out accuracy {accuracy:.3} \
             over {} tiles",
            held_rows.len()
        );
    }

    #[test]
    fn overfull_grid_places_what_fits() {
        // a 4x4 grid has room for one structure at most; the remaining
        // placements run out of attempts and are skipped
        let cfg = SynthConfig {
            grid_tiles: 4,
            structures: 50,
            ..small_cfg()
        };
        let slide = generate_slide(&cfg, 0).unwrap();
        let classes = slide.tile_classes();
        assert!(classes.iter().any(|&c| c != 0));
        let occupied = classes.iter().filter(|&&c| c != 0).count();
        assert!(occupied <= 13, "too many tiles occupied: {occupied}");
    }
}
