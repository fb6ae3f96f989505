//! Batch command-line entry points.
//!
//! Every command resolves its configuration in three layers: built-in
//! defaults, then a flat `key = value` file given with `--config`, then
//! individual flags. The fully resolved configuration is printed before the
//! run and, for commands that own an output directory, written there as
//! `config.txt` in the same format the `--config` file uses.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors (including unknown config keys).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{
    read_kv_file, Aggregation, FusionStrategy, ModelConfig, Precision, SynthConfig, TrainConfig,
};
use crate::error::{Error, Result};
use crate::gradcheck::full_model_check;
use crate::graph::{build_context_graph, graph_stats, GraphStats};
use crate::metrics::{
    evaluate_slides, export_masks, predict_stitched, report_to_csv, MetricsReport,
};
use crate::params::ParamSet;
use crate::synth::dataset::{load_split, read_manifest, write_dataset, Manifest};
use crate::synth::generate::Slide;
use crate::synth::tile::tile_slide;
use crate::train::{log_to_csv, train, LogRow, TrainRun};

#[derive(Parser)]
#[command(
    name = "gcseg",
    version,
    about = "Graph-contextual segmentation of tiled slide images",
    after_help = "Config files are flat `key = value` text; `#` starts a comment.\n\
        Keys: patch_px, latent_dim, gcn_layers, fusion_blocks, heads, classes,\n\
        granularity, aggregation, fusion, ffn, seed, steps, lr, batch_patches,\n\
        log_every, freeze_featurizer, precision, slides, grid_tiles, tile_px,\n\
        structures, radius_min, radius_max, marked_prob, synth_seed.\n\
        Flags override file values."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic slide dataset with train/val/test splits
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a CSV log
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split and write metrics CSV/JSON
    Eval(EvalArgs),
    /// Sweep the context depth and write one metrics row per value
    AblateLayers(AblateLayersArgs),
    /// Sweep fusion strategies and write one metrics row per strategy
    AblateFusion(AblateFusionArgs),
    /// Sweep granularity factors and write one metrics row per factor
    AblateGranularity(AblateGranularityArgs),
    /// Verify analytic gradients of the full model against central differences
    Gradcheck(GradcheckArgs),
    /// Report context-graph statistics for every slide of a dataset
    GraphStats(GraphStatsArgs),
    /// Export predicted masks and overlays for the test split
    ExportMasks(ExportMasksArgs),
}

/// Flags that override model keys from the config file.
#[derive(Args, Clone)]
struct ModelFlags {
    /// Patch edge in pixels [default: 32]
    #[arg(long)]
    patch_px: Option<usize>,
    /// Shared latent width [default: 32]
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Context aggregation steps; 0 disables context [default: 3]
    #[arg(long)]
    gcn_layers: Option<usize>,
    /// Attention blocks in the fusion stage [default: 2]
    #[arg(long)]
    fusion_blocks: Option<usize>,
    /// Attention heads per block [default: 4]
    #[arg(long)]
    heads: Option<usize>,
    /// Segmentation classes [default: 4]
    #[arg(long)]
    classes: Option<usize>,
    /// Granularity divisor 1, 2 or 4 [default: 1]
    #[arg(long)]
    granularity: Option<usize>,
    /// Context aggregation: sym | softmax-temp [default: sym]
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// Fusion strategy: none | cat | dot | dcfusion [default: dcfusion]
    #[arg(long)]
    fusion: Option<FusionStrategy>,
    /// Feed-forward sublayer after each attention block [default: false]
    #[arg(long)]
    ffn: Option<bool>,
}

impl ModelFlags {
    fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.patch_px {
            cfg.patch_px = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.latent_dim = v;
        }
        if let Some(v) = self.gcn_layers {
            cfg.gcn_layers = v;
        }
        if let Some(v) = self.fusion_blocks {
            cfg.fusion_blocks = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.classes {
            cfg.classes = v;
        }
        if let Some(v) = self.granularity {
            cfg.granularity = v;
        }
        if let Some(v) = self.aggregation {
            cfg.aggregation = v;
        }
        if let Some(v) = self.fusion {
            cfg.fusion = v;
        }
        if let Some(v) = self.ffn {
            cfg.ffn = v;
        }
    }
}

/// Flags that override training keys from the config file.
#[derive(Args, Clone)]
struct TrainFlags {
    /// Training seed: init, batch order, data order [default: 7]
    #[arg(long)]
    seed: Option<u64>,
    /// Optimizer steps [default: 400]
    #[arg(long)]
    steps: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Patches per step, drawn from one slide [default: 8]
    #[arg(long)]
    batch_patches: Option<usize>,
    /// Log cadence in steps [default: 25]
    #[arg(long)]
    log_every: Option<usize>,
    /// Keep featurizer weights at their initial values [default: false]
    #[arg(long)]
    freeze_featurizer: Option<bool>,
    /// Arithmetic width: f32 | f64 [default: f32]
    #[arg(long)]
    precision: Option<Precision>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_patches {
            cfg.batch_patches = v;
        }
        if let Some(v) = self.log_every {
            cfg.log_every = v;
        }
        if let Some(v) = self.freeze_featurizer {
            cfg.freeze_featurizer = v;
        }
        if let Some(v) = self.precision {
            cfg.precision = v;
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Slides to generate [default: 12]
    #[arg(long)]
    slides: Option<usize>,
    /// Tiles per slide edge [default: 16]
    #[arg(long)]
    grid_tiles: Option<usize>,
    /// Tile edge in pixels [default: 32]
    #[arg(long)]
    tile_px: Option<usize>,
    /// Structures attempted per slide [default: 5]
    #[arg(long)]
    structures: Option<usize>,
    /// Smallest structure radius in tiles [default: 1]
    #[arg(long)]
    radius_min: Option<usize>,
    /// Largest structure radius in tiles [default: 3]
    #[arg(long)]
    radius_max: Option<usize>,
    /// Probability a structure is marked [default: 0.3]
    #[arg(long)]
    marked_prob: Option<f64>,
    /// Generation seed [default: 11]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `synth`
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for checkpoint, log and resolved config
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for metrics.csv and metrics.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateLayersArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for the sweep table
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated context depths to sweep
    #[arg(long, value_delimiter = ',', default_value = "0,1,3")]
    layers: Vec<usize>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct AblateFusionArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for the sweep table
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated fusion strategies to sweep
    #[arg(long, value_delimiter = ',', default_value = "none,cat,dot,dcfusion")]
    strategies: Vec<FusionStrategy>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct AblateGranularityArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for the sweep table
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated granularity divisors to sweep
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    granularities: Vec<usize>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Flat key = value config file (model keys override the small
    /// verification profile)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = 1e-5)]
    threshold: f64,
    /// Patches included in the checked loss
    #[arg(long, default_value_t = 2)]
    target_nodes: usize,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct GraphStatsArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// JSON output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportMasksArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for mask and overlay PNGs
    #[arg(long)]
    out: PathBuf,
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err @ (Error::Config(_) | Error::Usage(_))) => {
            eprintln!("error: {err}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::AblateLayers(args) => cmd_ablate_layers(args),
        Command::AblateFusion(args) => cmd_ablate_fusion(args),
        Command::AblateGranularity(args) => cmd_ablate_granularity(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::GraphStats(args) => cmd_graph_stats(args),
        Command::ExportMasks(args) => cmd_export_masks(args),
    }
}

/// All three config families, resolved together so one file can drive a
/// whole synth / train / eval session; each command reads the parts it
/// needs.
#[derive(Debug)]
struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    synth: SynthConfig,
}

fn resolve(config: Option<&Path>) -> Result<Resolved> {
    resolve_from(ModelConfig::default(), TrainConfig::default(), SynthConfig::default(), config)
}

fn resolve_from(
    model: ModelConfig,
    train: TrainConfig,
    synth: SynthConfig,
    config: Option<&Path>,
) -> Result<Resolved> {
    let mut r = Resolved { model, train, synth };
    if let Some(path) = config {
        for (key, value) in read_kv_file(path)? {
            let hit = r.model.apply_kv(&key, &value)?
                || r.train.apply_kv(&key, &value)?
                || r.synth.apply_kv(&key, &value)?;
            if !hit {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
    }
    Ok(r)
}

fn model_kv(m: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("patch_px".into(), m.patch_px.to_string()),
        ("latent_dim".into(), m.latent_dim.to_string()),
        ("gcn_layers".into(), m.gcn_layers.to_string()),
        ("fusion_blocks".into(), m.fusion_blocks.to_string()),
        ("heads".into(), m.heads.to_string()),
        ("classes".into(), m.classes.to_string()),
        ("granularity".into(), m.granularity.to_string()),
        ("aggregation".into(), m.aggregation.to_string()),
        ("fusion".into(), m.fusion.to_string()),
        ("ffn".into(), m.ffn.to_string()),
    ]
}

fn train_kv(t: &TrainConfig) -> Vec<(String, String)> {
    vec![
        ("seed".into(), t.seed.to_string()),
        ("steps".into(), t.steps.to_string()),
        ("lr".into(), t.lr.to_string()),
        ("batch_patches".into(), t.batch_patches.to_string()),
        ("log_every".into(), t.log_every.to_string()),
        ("freeze_featurizer".into(), t.freeze_featurizer.to_string()),
        ("precision".into(), t.precision.to_string()),
    ]
}

fn synth_kv(s: &SynthConfig) -> Vec<(String, String)> {
    vec![
        ("slides".into(), s.slides.to_string()),
        ("grid_tiles".into(), s.grid_tiles.to_string()),
        ("tile_px".into(), s.tile_px.to_string()),
        ("structures".into(), s.structures.to_string()),
        ("radius_min".into(), s.radius_min.to_string()),
        ("radius_max".into(), s.radius_max.to_string()),
        ("marked_prob".into(), s.marked_prob.to_string()),
        ("synth_seed".into(), s.seed.to_string()),
    ]
}

/// Prints the resolved config and, when `out` is given, writes it there as
/// a loadable `config.txt`.
fn announce_config(pairs: &[(String, String)], out: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    for (key, value) in pairs {
        println!("[config] {key} = {value}");
        text.push_str(&format!("{key} = {value}\n"));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), text)?;
    }
    Ok(())
}

/// The checkpoint and the dataset must agree on patch geometry and class
/// count before stitched evaluation makes sense.
fn check_compat(model: &ModelConfig, manifest: &Manifest) -> Result<()> {
    if model.patch_px != manifest.tile_px {
        return Err(Error::Config(format!(
            "model patch_px {} does not match dataset tile_px {}",
            model.patch_px, manifest.tile_px
        )));
    }
    if model.classes != manifest.classes.len() {
        return Err(Error::Config(format!(
            "model classes {} does not match dataset class list of {}",
            model.classes,
            manifest.classes.len()
        )));
    }
    Ok(())
}

fn print_log_row(row: &LogRow) {
    println!(
        "step {:>5}  loss {:.6}  ({:.1}s)",
        row.step, row.loss, row.elapsed_seconds
    );
}

fn print_report(report: &MetricsReport) {
    for c in &report.per_class {
        if c.excluded {
            println!("{:<12} excluded (no truth or predicted pixels)", c.class);
        } else {
            println!(
                "{:<12} precision {:.3}  recall {:.3}  f1 {:.3}  iou {:.3}",
                c.class, c.precision, c.recall, c.f1, c.iou
            );
        }
    }
    let m = &report.macro_;
    println!(
        "{:<12} precision {:.3}  recall {:.3}  f1 {:.3}  iou {:.3}  ({} classes)",
        "macro", m.precision, m.recall, m.f1, m.iou, m.included
    );
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), report_to_csv(report))?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut r = resolve(args.config.as_deref())?;
    let s = &mut r.synth;
    if let Some(v) = args.slides {
        s.slides = v;
    }
    if let Some(v) = args.grid_tiles {
        s.grid_tiles = v;
    }
    if let Some(v) = args.tile_px {
        s.tile_px = v;
    }
    if let Some(v) = args.structures {
        s.structures = v;
    }
    if let Some(v) = args.radius_min {
        s.radius_min = v;
    }
    if let Some(v) = args.radius_max {
        s.radius_max = v;
    }
    if let Some(v) = args.marked_prob {
        s.marked_prob = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    s.validate()?;
    announce_config(&synth_kv(s), Some(&args.out))?;

    let manifest = write_dataset(s, &args.out)?;
    println!(
        "wrote {} slides to {} (splits {}/{}/{}, digest {})",
        s.slides,
        args.out.display(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
        &manifest.params_digest[..12],
    );
    Ok(())
}

/// Shared train-then-checkpoint path used by `train` and the sweeps.
fn run_training(
    model: &ModelConfig,
    tcfg: &TrainConfig,
    slides: &[Slide],
    quiet: bool,
) -> Result<(ParamSet<f32>, Vec<LogRow>, f64)> {
    let on_log = |row: &LogRow| {
        if !quiet {
            print_log_row(row);
        }
    };
    match tcfg.precision {
        Precision::F32 => {
            let TrainRun { params, log, final_loss } = train::<f32>(model, tcfg, slides, on_log)?;
            Ok((params, log, final_loss))
        }
        Precision::F64 => {
            let TrainRun { params, log, final_loss } = train::<f64>(model, tcfg, slides, on_log)?;
            Ok((params.cast(), log, final_loss))
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut r = resolve(args.config.as_deref())?;
    args.model.apply(&mut r.model);
    args.train.apply(&mut r.train);
    r.model.validate()?;
    r.train.validate()?;

    let manifest = read_manifest(&args.dataset)?;
    check_compat(&r.model, &manifest)?;
    let mut pairs = model_kv(&r.model);
    pairs.extend(train_kv(&r.train));
    announce_config(&pairs, Some(&args.out))?;

    let slides = load_split(&args.dataset, &manifest, &manifest.splits.train)?;
    let (params, log, final_loss) = run_training(&r.model, &r.train, &slides, false)?;

    let ckpt = Checkpoint {
        model: r.model.clone(),
        step: r.train.steps as u64,
        final_loss,
        params,
    };
    let ckpt_path = args.out.join("model.ckpt");
    checkpoint::save(&ckpt_path, &ckpt)?;
    std::fs::write(args.out.join("train_log.csv"), log_to_csv(&log))?;
    println!(
        "final loss {:.6}; checkpoint at {}",
        final_loss,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let manifest = read_manifest(&args.dataset)?;
    check_compat(&ckpt.model, &manifest)?;
    announce_config(&model_kv(&ckpt.model), Some(&args.out))?;

    let slides = load_split(&args.dataset, &manifest, &manifest.splits.test)?;
    let report = evaluate_slides(&ckpt.params, &ckpt.model, &slides, &manifest.classes)?;
    print_report(&report);
    write_report(&args.out, &report)?;
    println!("metrics written to {}", args.out.display());
    Ok(())
}

/// One sweep configuration: train from scratch, evaluate on the test split.
/// Runs share nothing mutable, so results are independent of sweep order.
fn sweep_point(
    model: &ModelConfig,
    tcfg: &TrainConfig,
    train_slides: &[Slide],
    test_slides: &[Slide],
    classes: &[String],
) -> Result<(MetricsReport, f64)> {
    model.validate()?;
    let (params, _, final_loss) = run_training(model, tcfg, train_slides, true)?;
    let report = evaluate_slides(&params, model, test_slides, classes)?;
    Ok((report, final_loss))
}

struct Sweep {
    /// Column name of the swept variable.
    key: &'static str,
    rows: Vec<(String, MetricsReport, f64)>,
}

impl Sweep {
    fn to_csv(&self) -> String {
        let mut out = format!(
            "{},macro_precision,macro_recall,macro_f1,macro_iou,final_loss\n",
            self.key
        );
        for (value, report, loss) in &self.rows {
            let m = &report.macro_;
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                value, m.precision, m.recall, m.f1, m.iou, loss
            ));
        }
        out
    }

    fn finish(&self, out_dir: &Path, file: &str) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(file);
        std::fs::write(&path, self.to_csv())?;
        for (value, report, _) in &self.rows {
            println!(
                "{} = {}: macro f1 {:.3}, macro iou {:.3}",
                self.key, value, report.macro_.f1, report.macro_.iou
            );
        }
        println!("sweep table written to {}", path.display());
        Ok(())
    }
}

struct SweepData {
    train_slides: Vec<Slide>,
    test_slides: Vec<Slide>,
    classes: Vec<String>,
}

fn load_sweep_data(dataset: &Path, model: &ModelConfig) -> Result<SweepData> {
    let manifest = read_manifest(dataset)?;
    check_compat(model, &manifest)?;
    Ok(SweepData {
        train_slides: load_split(dataset, &manifest, &manifest.splits.train)?,
        test_slides: load_split(dataset, &manifest, &manifest.splits.test)?,
        classes: manifest.classes,
    })
}

fn cmd_ablate_layers(args: AblateLayersArgs) -> Result<()> {
    if args.layers.is_empty() {
        return Err(Error::Usage("no layer counts given".into()));
    }
    let mut r = resolve(args.config.as_deref())?;
    args.model.apply(&mut r.model);
    args.train.apply(&mut r.train);
    r.model.validate()?;
    r.train.validate()?;
    let mut pairs = model_kv(&r.model);
    pairs.extend(train_kv(&r.train));
    announce_config(&pairs, Some(&args.out))?;
    let data = load_sweep_data(&args.dataset, &r.model)?;

    let mut sweep = Sweep { key: "gcn_layers", rows: Vec::new() };
    for &t in &args.layers {
        let model = ModelConfig { gcn_layers: t, ..r.model.clone() };
        println!("training with gcn_layers = {t}");
        let (report, loss) =
            sweep_point(&model, &r.train, &data.train_slides, &data.test_slides, &data.classes)?;
        sweep.rows.push((t.to_string(), report, loss));
    }
    sweep.finish(&args.out, "ablate_layers.csv")
}

fn cmd_ablate_fusion(args: AblateFusionArgs) -> Result<()> {
    if args.strategies.is_empty() {
        return Err(Error::Usage("no fusion strategies given".into()));
    }
    let mut r = resolve(args.config.as_deref())?;
    args.model.apply(&mut r.model);
    args.train.apply(&mut r.train);
    r.model.validate()?;
    r.train.validate()?;
    let mut pairs = model_kv(&r.model);
    pairs.extend(train_kv(&r.train));
    announce_config(&pairs, Some(&args.out))?;
    let data = load_sweep_data(&args.dataset, &r.model)?;

    let mut sweep = Sweep { key: "fusion", rows: Vec::new() };
    for &strategy in &args.strategies {
        let model = ModelConfig { fusion: strategy, ..r.model.clone() };
        println!("training with fusion = {strategy}");
        let (report, loss) =
            sweep_point(&model, &r.train, &data.train_slides, &data.test_slides, &data.classes)?;
        sweep.rows.push((strategy.to_string(), report, loss));
    }
    sweep.finish(&args.out, "ablate_fusion.csv")
}

fn cmd_ablate_granularity(args: AblateGranularityArgs) -> Result<()> {
    if args.granularities.is_empty() {
        return Err(Error::Usage("no granularity factors given".into()));
    }
    let mut r = resolve(args.config.as_deref())?;
    args.model.apply(&mut r.model);
    args.train.apply(&mut r.train);
    r.train.validate()?;
    let mut pairs = model_kv(&r.model);
    pairs.extend(train_kv(&r.train));
    announce_config(&pairs, Some(&args.out))?;
    // compat check against the base model; per-point validate() guards the
    // patch/granularity divisibility
    let base = ModelConfig { granularity: 1, ..r.model.clone() };
    base.validate()?;
    let data = load_sweep_data(&args.dataset, &base)?;

    let mut sweep = Sweep { key: "granularity", rows: Vec::new() };
    for &g in &args.granularities {
        let model = ModelConfig { granularity: g, ..r.model.clone() };
        println!("training with granularity = {g}");
        let (report, loss) =
            sweep_point(&model, &r.train, &data.train_slides, &data.test_slides, &data.classes)?;
        sweep.rows.push((g.to_string(), report, loss));
    }
    sweep.finish(&args.out, "ablate_granularity.csv")
}

/// Small profile the `gradcheck` command verifies by default: every
/// architectural feature is on, every parameter is checked, and the whole
/// run stays in f64 where central differences are trustworthy.
fn verification_model() -> ModelConfig {
    ModelConfig {
        patch_px: 16,
        latent_dim: 8,
        gcn_layers: 2,
        fusion_blocks: 1,
        heads: 2,
        classes: 4,
        granularity: 1,
        aggregation: Aggregation::SoftmaxTemp,
        fusion: FusionStrategy::Dcfusion,
        ffn: true,
    }
}

fn verification_synth() -> SynthConfig {
    SynthConfig {
        slides: 1,
        grid_tiles: 5,
        tile_px: 16,
        structures: 2,
        radius_min: 1,
        radius_max: 2,
        marked_prob: 1.0,
        seed: 29,
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut r = resolve_from(
        verification_model(),
        TrainConfig::default(),
        verification_synth(),
        args.config.as_deref(),
    )?;
    args.model.apply(&mut r.model);
    r.model.validate()?;
    let mut synth = r.synth;
    synth.tile_px = r.model.patch_px;
    let mut pairs = model_kv(&r.model);
    pairs.push(("h".into(), args.h.to_string()));
    pairs.push(("threshold".into(), args.threshold.to_string()));
    announce_config(&pairs, None)?;

    let report = full_model_check(&r.model, &synth, args.h, args.target_nodes)?;
    let mut sorted: Vec<_> = report.per_param.iter().collect();
    sorted.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));
    println!("{:<20} {:>12} {:>14} {:>14}", "parameter", "max rel err", "analytic", "numeric");
    for p in &sorted {
        println!(
            "{:<20} {:>12.3e} {:>14.6e} {:>14.6e}",
            p.name, p.max_rel_err, p.analytic, p.numeric
        );
    }
    let worst = report.max_rel_err();
    let checked: usize = report.per_param.len();
    if report.passes(args.threshold) {
        println!(
            "PASS: {checked} parameters, max relative error {worst:.3e} < {:.1e}",
            args.threshold
        );
        Ok(())
    } else {
        Err(Error::Evaluation(format!(
            "gradient check failed: max relative error {worst:.3e} >= {:.1e}",
            args.threshold
        )))
    }
}

#[derive(serde::Serialize)]
struct SlideStats {
    id: usize,
    #[serde(flatten)]
    stats: GraphStats,
}

fn cmd_graph_stats(args: GraphStatsArgs) -> Result<()> {
    let manifest = read_manifest(&args.dataset)?;
    let n = manifest.splits.train.len() + manifest.splits.val.len() + manifest.splits.test.len();
    let mut per_slide = Vec::new();
    for id in 0..n {
        let slide = crate::synth::dataset::load_slide(&args.dataset, &manifest, id)?;
        let grid = tile_slide(&slide);
        let graph = build_context_graph(&grid)?;
        per_slide.push(SlideStats { id, stats: graph_stats(&graph) });
    }
    let totals = serde_json::json!({
        "slides": n,
        "nodes": per_slide.iter().map(|s| s.stats.nodes).sum::<usize>(),
        "edges": per_slide.iter().map(|s| s.stats.edges).sum::<usize>(),
        "components": per_slide.iter().map(|s| s.stats.components).sum::<usize>(),
    });
    let doc = serde_json::json!({ "per_slide": per_slide, "totals": totals });
    let text = serde_json::to_string_pretty(&doc)?;
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, &text)?;
            println!("graph statistics written to {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_export_masks(args: ExportMasksArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let manifest = read_manifest(&args.dataset)?;
    check_compat(&ckpt.model, &manifest)?;
    announce_config(&model_kv(&ckpt.model), Some(&args.out))?;

    let mut files = 0usize;
    for &id in &manifest.splits.test {
        let slide = crate::synth::dataset::load_slide(&args.dataset, &manifest, id)?;
        let pred = predict_stitched(&ckpt.params, &ckpt.model, &slide)?;
        export_masks(&args.out, &format!("slide_{id:04}"), &slide, &pred)?;
        files += 3;
    }
    println!(
        "exported {} files for {} test slides to {}",
        files,
        manifest.splits.test.len(),
        args.out.display()
    );
    Ok(())
}
