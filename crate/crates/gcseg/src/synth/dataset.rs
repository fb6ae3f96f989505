//! On-disk dataset layout.
//!
//! ```text
//! <root>/
//!   manifest.json
//!   slide_0000/image.png    RGB8
//!   slide_0000/labels.png   L8 class indices
//!   slide_0001/...
//! ```
//!
//! The manifest records the class names, the split assignment, the generator
//! seed and a digest of the generation parameters, so a dataset directory is
//! self-describing and refusals to mix incompatible datasets are cheap.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SynthConfig;
use crate::error::{Error, Result};
use crate::synth::generate::{generate_dataset, Slide, CLASS_NAMES};

/// Split assignment by slide id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Dataset metadata, stored as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub grid_tiles: usize,
    pub tile_px: usize,
    pub seed: u64,
    /// SHA-256 over the canonical JSON of the generation parameters.
    pub params_digest: String,
    pub splits: Splits,
}

/// 6:2:2 split over a seeded shuffle of the slide ids. Train and validation
/// take `floor(0.6 n)` and `floor(0.2 n)`; the remainder is the test split.
pub fn make_splits(n: usize, seed: u64) -> Splits {
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    ids.shuffle(&mut rng);
    let n_train = (0.6 * n as f64).floor() as usize;
    let n_val = (0.2 * n as f64).floor() as usize;
    let train = ids[..n_train].to_vec();
    let val = ids[n_train..n_train + n_val].to_vec();
    let test = ids[n_train + n_val..].to_vec();
    Splits { train, val, test }
}

pub fn params_digest(cfg: &SynthConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn slide_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("slide_{id:04}"))
}

fn save_png_rgb(path: &Path, w: usize, pixels: &[u8]) -> Result<()> {
    let img = image::RgbImage::from_raw(w as u32, w as u32, pixels.to_vec())
        .ok_or_else(|| Error::Image("pixel buffer does not match dimensions".into()))?;
    img.save(path)?;
    Ok(())
}

fn save_png_gray(path: &Path, w: usize, values: &[u8]) -> Result<()> {
    let img = image::GrayImage::from_raw(w as u32, w as u32, values.to_vec())
        .ok_or_else(|| Error::Image("label buffer does not match dimensions".into()))?;
    img.save(path)?;
    Ok(())
}

/// Generates every slide and writes the directory tree plus manifest.
pub fn write_dataset(cfg: &SynthConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let slides = generate_dataset(cfg)?;
    std::fs::create_dir_all(root)?;
    for slide in &slides {
        let dir = slide_dir(root, slide.id);
        std::fs::create_dir_all(&dir)?;
        save_png_rgb(&dir.join("image.png"), slide.width_px(), &slide.pixels)?;
        save_png_gray(&dir.join("labels.png"), slide.width_px(), &slide.labels)?;
    }
    let manifest = Manifest {
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        grid_tiles: cfg.grid_tiles,
        tile_px: cfg.tile_px,
        seed: cfg.seed,
        params_digest: params_digest(cfg),
        splits: make_splits(cfg.slides, cfg.seed),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(root.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

/// Reads and validates `manifest.json`.
pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Format {
        path: path.clone(),
        reason: format!("cannot read manifest: {e}"),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: format!("malformed manifest: {e}"),
    })?;
    if manifest.classes.len() < 2 {
        return Err(Error::Format {
            path,
            reason: "manifest lists fewer than two classes".into(),
        });
    }
    Ok(manifest)
}

/// Loads one slide back from disk.
pub fn load_slide(root: &Path, manifest: &Manifest, id: usize) -> Result<Slide> {
    let dir = slide_dir(root, id);
    let img_path = dir.join("image.png");
    let lab_path = dir.join("labels.png");
    let img = image::open(&img_path)
        .map_err(|e| Error::Format {
            path: img_path.clone(),
            reason: e.to_string(),
        })?
        .into_rgb8();
    let lab = image::open(&lab_path)
        .map_err(|e| Error::Format {
            path: lab_path.clone(),
            reason: e.to_string(),
        })?
        .into_luma8();

    let w = manifest.grid_tiles * manifest.tile_px;
    if img.width() as usize != w || img.height() as usize != w {
        return Err(Error::Format {
            path: img_path,
            reason: format!(
                "image is {}x{}, manifest implies {w}x{w}",
                img.width(),
                img.height()
            ),
        });
    }
    if lab.width() as usize != w || lab.height() as usize != w {
        return Err(Error::Format {
            path: lab_path,
            reason: "label dimensions disagree with manifest".into(),
        });
    }
    let labels = lab.into_raw();
    let k = manifest.classes.len() as u8;
    if let Some(&bad) = labels.iter().find(|&&v| v >= k) {
        return Err(Error::Label(format!(
            "slide {id}: label value {bad} outside 0..{k}"
        )));
    }
    Ok(Slide {
        id,
        grid_tiles: manifest.grid_tiles,
        tile_px: manifest.tile_px,
        pixels: img.into_raw(),
        labels,
    })
}

/// Loads every slide of one split.
pub fn load_split(root: &Path, manifest: &Manifest, ids: &[usize]) -> Result<Vec<Slide>> {
    ids.iter().map(|&id| load_slide(root, manifest, id)).collect()
}
