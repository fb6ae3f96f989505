//! Model, training and synthesis configuration.
//!
//! Configs carry desk-scale defaults that run end to end in seconds on a CPU.
//! [`ModelConfig::full_scale`] records the reference workload profile
//! (224 px patches, 768-wide attention, 5e-5 learning rate); it validates but
//! is not exercised by the test suite.
//!
//! On disk a config is a flat `key = value` file. `#` starts a comment, blank
//! lines are skipped, and unknown keys are an error so typos cannot silently
//! fall back to defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How context is pooled over the graph in each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Symmetric-normalized adjacency.
    Sym,
    /// Attention over the closed neighborhood with a learned temperature.
    SoftmaxTemp,
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sym" => Ok(Self::Sym),
            "softmax-temp" => Ok(Self::SoftmaxTemp),
            _ => Err(Error::Config(format!(
                "unknown aggregation {s:?} (expected sym | softmax-temp)"
            ))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sym => "sym",
            Self::SoftmaxTemp => "softmax-temp",
        })
    }
}

/// How the context vector is combined with patch detail tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// Context is discarded; the codec sees only the patch.
    None,
    /// Context is concatenated to each token and mapped back down.
    Cat,
    /// Tokens are gated elementwise by the context vector.
    Dot,
    /// Full attention fusion over the token-plus-context sequence.
    Dcfusion,
}

impl FromStr for FusionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "cat" => Ok(Self::Cat),
            "dot" => Ok(Self::Dot),
            "dcfusion" => Ok(Self::Dcfusion),
            _ => Err(Error::Config(format!(
                "unknown fusion strategy {s:?} (expected none | cat | dot | dcfusion)"
            ))),
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Cat => "cat",
            Self::Dot => "dot",
            Self::Dcfusion => "dcfusion",
        })
    }
}

/// Arithmetic width of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(Error::Config(format!(
                "unknown precision {s:?} (expected f32 | f64)"
            ))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Edge length of a tile / patch in pixels.
    pub patch_px: usize,
    /// Shared latent width used by the featurizer, GCN, fusion and codec.
    pub latent_dim: usize,
    /// Context aggregation steps (0 disables context entirely).
    pub gcn_layers: usize,
    /// Attention blocks in the fusion stage.
    pub fusion_blocks: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Segmentation classes.
    pub classes: usize,
    /// Spatial granularity divisor: the codec sees the patch average-pooled
    /// by this factor and its logits are upsampled back.
    pub granularity: usize,
    pub aggregation: Aggregation,
    pub fusion: FusionStrategy,
    /// Adds a feed-forward sublayer after each attention block.
    pub ffn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_px: 32,
            latent_dim: 32,
            gcn_layers: 3,
            fusion_blocks: 2,
            heads: 4,
            classes: 4,
            granularity: 1,
            aggregation: Aggregation::Sym,
            fusion: FusionStrategy::Dcfusion,
            ffn: false,
        }
    }
}

impl ModelConfig {
    /// Reference workload profile: 224 px patches at full magnification,
    /// 12 x 12 x 768 attention, documented for scale but far beyond what the
    /// bundled synthetic experiments need.
    pub fn full_scale() -> Self {
        Self {
            patch_px: 224,
            latent_dim: 768,
            gcn_layers: 3,
            fusion_blocks: 12,
            heads: 12,
            classes: 4,
            granularity: 1,
            aggregation: Aggregation::SoftmaxTemp,
            fusion: FusionStrategy::Dcfusion,
            ffn: true,
        }
    }

    /// Edge of the token grid the codec produces for one patch.
    pub fn token_grid(&self) -> usize {
        self.patch_px / self.granularity / 8
    }

    /// Patch edge after granularity pooling.
    pub fn pooled_px(&self) -> usize {
        self.patch_px / self.granularity
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.granularity, 1 | 2 | 4) {
            return Err(Error::Config(format!(
                "granularity must be 1, 2 or 4, got {}",
                self.granularity
            )));
        }
        if self.patch_px == 0 || self.patch_px % (8 * self.granularity) != 0 {
            return Err(Error::Config(format!(
                "patch_px {} must be a positive multiple of {} (8 x granularity)",
                self.patch_px,
                8 * self.granularity
            )));
        }
        if self.latent_dim == 0 || self.latent_dim % 4 != 0 {
            return Err(Error::Config(format!(
                "latent_dim {} must be a positive multiple of 4",
                self.latent_dim
            )));
        }
        if self.heads == 0 || self.latent_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads {} must divide latent_dim {}",
                self.heads, self.latent_dim
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "classes must be at least 2, got {}",
                self.classes
            )));
        }
        if self.fusion == FusionStrategy::Dcfusion && self.fusion_blocks == 0 {
            return Err(Error::Config(
                "dcfusion requires at least one fusion block".into(),
            ));
        }
        Ok(())
    }

    /// Applies one config-file entry; `Ok(false)` means the key is not a
    /// model key.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "patch_px" => self.patch_px = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "gcn_layers" => self.gcn_layers = parse(key, value)?,
            "fusion_blocks" => self.fusion_blocks = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "granularity" => self.granularity = parse(key, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "fusion" => self.fusion = value.parse()?,
            "ffn" => self.ffn = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    /// Patches drawn per step, all from the step's slide.
    pub batch_patches: usize,
    pub log_every: usize,
    /// Keeps featurizer weights at their initial values.
    pub freeze_featurizer: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            steps: 400,
            lr: 1e-3,
            batch_patches: 8,
            log_every: 25,
            freeze_featurizer: false,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    /// Learning rate used by the reference workload profile.
    pub const FULL_SCALE_LR: f64 = 5e-5;

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_patches == 0 {
            return Err(Error::Config("batch_patches must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_patches" => self.batch_patches = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "freeze_featurizer" => self.freeze_featurizer = parse_bool(key, value)?,
            "precision" => self.precision = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Synthetic dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub slides: usize,
    /// Tiles per slide edge.
    pub grid_tiles: usize,
    /// Tile edge in pixels; must match the model's patch size downstream.
    pub tile_px: usize,
    /// Structures attempted per slide.
    pub structures: usize,
    /// Smallest structure radius in tiles.
    pub radius_min: usize,
    /// Largest structure radius in tiles.
    pub radius_max: usize,
    /// Probability that a structure carries the marked class.
    pub marked_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            slides: 12,
            grid_tiles: 16,
            tile_px: 32,
            structures: 5,
            radius_min: 1,
            radius_max: 3,
            marked_prob: 0.3,
            seed: 11,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slides == 0 {
            return Err(Error::Config("slides must be positive".into()));
        }
        if self.grid_tiles < 4 {
            return Err(Error::Config(format!(
                "grid_tiles must be at least 4, got {}",
                self.grid_tiles
            )));
        }
        if self.tile_px < 8 {
            return Err(Error::Config(format!(
                "tile_px must be at least 8, got {}",
                self.tile_px
            )));
        }
        if self.structures == 0 {
            return Err(Error::Config("structures must be positive".into()));
        }
        if self.radius_min == 0 || self.radius_min > self.radius_max {
            return Err(Error::Config(format!(
                "need 1 <= radius_min <= radius_max, got {} and {}",
                self.radius_min, self.radius_max
            )));
        }
        if 2 * self.radius_min >= self.grid_tiles {
            return Err(Error::Config(format!(
                "radius_min {} cannot fit a {}-tile grid",
                self.radius_min, self.grid_tiles
            )));
        }
        if !(0.0..=1.0).contains(&self.marked_prob) {
            return Err(Error::Config(format!(
                "marked_prob must lie in [0, 1], got {}",
                self.marked_prob
            )));
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "slides" => self.slides = parse(key, value)?,
            "grid_tiles" => self.grid_tiles = parse(key, value)?,
            "tile_px" => self.tile_px = parse(key, value)?,
            "structures" => self.structures = parse(key, value)?,
            "radius_min" => self.radius_min = parse(key, value)?,
            "radius_max" => self.radius_max = parse(key, value)?,
            "marked_prob" => self.marked_prob = parse(key, value)?,
            "synth_seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}: expected bool"))),
    }
}

/// Reads a flat `key = value` file, preserving entry order.
pub fn read_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    parse_kv(&text)
}

/// Parses `key = value` lines. Comments start with `#` anywhere on a line.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "line {}: empty key or value in {raw:?}",
                lineno + 1
            )));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        TrainConfig::default().validate().unwrap();
        SynthConfig::default().validate().unwrap();
        ModelConfig::full_scale().validate().unwrap();
    }

    #[test]
    fn token_grid_tracks_granularity() {
        let mut m = ModelConfig::default();
        assert_eq!(m.token_grid(), 4);
        m.granularity = 2;
        assert_eq!(m.token_grid(), 2);
        m.granularity = 4;
        assert_eq!(m.token_grid(), 1);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let mut m = ModelConfig::default();
        m.patch_px = 30;
        assert!(m.validate().is_err());

        let mut m = ModelConfig::default();
        m.granularity = 3;
        assert!(m.validate().is_err());

        let mut m = ModelConfig::default();
        m.heads = 5;
        assert!(m.validate().is_err());
    }

    #[test]
    fn kv_parsing_strips_comments() {
        let entries = parse_kv("# header\nlr = 0.5  # trailing\n\n seed=3 \n").unwrap();
        assert_eq!(
            entries,
            vec![("lr".into(), "0.5".into()), ("seed".into(), "3".into())]
        );
    }

    #[test]
    fn kv_rejects_bare_words() {
        assert!(parse_kv("not-an-assignment\n").is_err());
        assert!(parse_kv("key =\n").is_err());
    }

    #[test]
    fn apply_kv_routes_and_rejects() {
        let mut m = ModelConfig::default();
        assert!(m.apply_kv("latent_dim", "64").unwrap());
        assert_eq!(m.latent_dim, 64);
        assert!(!m.apply_kv("mystery", "1").unwrap());
        assert!(m.apply_kv("latent_dim", "not-a-number").is_err());

        let mut t = TrainConfig::default();
        assert!(t.apply_kv("precision", "f64").unwrap());
        assert_eq!(t.precision, Precision::F64);
        assert!(t.apply_kv("precision", "f16").is_err());
    }

    #[test]
    fn enum_round_trip() {
        for s in ["sym", "softmax-temp"] {
            assert_eq!(s.parse::<Aggregation>().unwrap().to_string(), s);
        }
        for s in ["none", "cat", "dot", "dcfusion"] {
            assert_eq!(s.parse::<FusionStrategy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn serde_uses_kebab_case_tags() {
        let m = ModelConfig::default();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"dcfusion\""));
        assert!(json.contains("\"sym\""));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
