//! Stitched evaluation: confusion counting, per-class and macro metrics,
//! CSV / JSON reports and mask export.
//!
//! Predictions are made per foreground patch and stitched back into a full
//! slide mask; tiles outside the foreground default to class 0. The
//! confusion matrix pools every pixel of every evaluated slide. A class with
//! no true or predicted pixels is excluded from the macro average; undefined
//! ratios (zero denominators) score 0.

use std::path::Path;

use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{predict_slide, prepare_slide};
use crate::params::ParamSet;
use crate::synth::generate::Slide;
use crate::tensor::Real;

/// Pixel-pooled confusion counts; `counts[t * k + p]` holds pixels of truth
/// `t` predicted as `p`.
#[derive(Clone, Debug)]
pub struct Confusion {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn add(&mut self, truth: &[u8], pred: &[u8]) {
        assert_eq!(truth.len(), pred.len(), "confusion: length mismatch");
        for (&t, &p) in truth.iter().zip(pred.iter()) {
            self.counts[t as usize * self.k + p as usize] += 1;
        }
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c * self.k + c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.k).filter(|&t| t != c).map(|t| self.counts[t * self.k + c]).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.k).filter(|&p| p != c).map(|p| self.counts[c * self.k + p]).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// True when the class appears in neither truth nor prediction and is
    /// left out of the macro average.
    pub excluded: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Classes that entered the average.
    pub included: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_: MacroMetrics,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mean over already-computed per-class scores; the f1 entry is the mean of
/// class f1 values, not the f1 of mean precision and recall.
pub fn macro_average(scores: &[ClassMetrics]) -> MacroMetrics {
    let included: Vec<&ClassMetrics> = scores.iter().filter(|c| !c.excluded).collect();
    let n = included.len().max(1) as f64;
    MacroMetrics {
        precision: included.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: included.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: included.iter().map(|c| c.f1).sum::<f64>() / n,
        iou: included.iter().map(|c| c.iou).sum::<f64>() / n,
        included: included.len(),
    }
}

/// Full report from a pooled confusion matrix.
pub fn compute_metrics(cm: &Confusion, class_names: &[String]) -> MetricsReport {
    assert_eq!(class_names.len(), cm.k, "one name per class");
    let per_class: Vec<ClassMetrics> = (0..cm.k)
        .map(|c| {
            let (tp, fp, fn_) = (cm.tp(c), cm.fp(c), cm.fn_(c));
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: class_names[c].clone(),
                precision,
                recall,
                f1,
                iou: ratio(tp, tp + fp + fn_),
                excluded: tp + fp + fn_ == 0,
            }
        })
        .collect();
    let macro_ = macro_average(&per_class);
    MetricsReport { per_class, macro_ }
}

/// `class,precision,recall,f1,iou,excluded` rows plus a trailing macro row.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("class,precision,recall,f1,iou,excluded\n");
    for c in &report.per_class {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            c.class, c.precision, c.recall, c.f1, c.iou, c.excluded
        ));
    }
    let m = &report.macro_;
    out.push_str(&format!(
        "macro,{:.6},{:.6},{:.6},{:.6},false\n",
        m.precision, m.recall, m.f1, m.iou
    ));
    out
}

/// Stitches per-node predicted masks into a full-slide mask; non-foreground
/// tiles stay class 0.
pub fn stitch_mask(
    slide: &Slide,
    coords: &[(usize, usize)],
    node_masks: &[Vec<u8>],
) -> Vec<u8> {
    assert_eq!(coords.len(), node_masks.len());
    let (s, w) = (slide.tile_px, slide.width_px());
    let mut out = vec![0u8; w * w];
    for (&(r, c), mask) in coords.iter().zip(node_masks.iter()) {
        assert_eq!(mask.len(), s * s);
        for dy in 0..s {
            let row = (r * s + dy) * w + c * s;
            out[row..row + s].copy_from_slice(&mask[dy * s..(dy + 1) * s]);
        }
    }
    out
}

/// Stitched prediction for one slide.
pub fn predict_stitched<T: Real>(
    params: &ParamSet<T>,
    cfg: &ModelConfig,
    slide: &Slide,
) -> Result<Vec<u8>> {
    let batch = prepare_slide::<T>(slide, cfg)?;
    let masks = predict_slide(params, cfg, &batch);
    Ok(stitch_mask(slide, &batch.graph.coords, &masks))
}

/// Evaluates slides into one pooled report.
pub fn evaluate_slides<T: Real>(
    params: &ParamSet<T>,
    cfg: &ModelConfig,
    slides: &[Slide],
    class_names: &[String],
) -> Result<MetricsReport> {
    if slides.is_empty() {
        return Err(Error::Evaluation("no slides to evaluate".into()));
    }
    let mut cm = Confusion::new(cfg.classes);
    for slide in slides {
        let pred = predict_stitched(params, cfg, slide)?;
        cm.add(&slide.labels, &pred);
    }
    let report = compute_metrics(&cm, class_names);
    if report.macro_.included == 0 {
        return Err(Error::Evaluation(
            "every class is empty in both truth and prediction".into(),
        ));
    }
    Ok(report)
}

/// Display palette per class (background, then structure classes).
pub const CLASS_COLORS: [[u8; 3]; 4] = [
    [225, 225, 225],
    [60, 100, 220],
    [240, 160, 40],
    [220, 50, 50],
];

fn color_of(class: u8) -> [u8; 3] {
    CLASS_COLORS[(class as usize).min(CLASS_COLORS.len() - 1)]
}

/// Writes `<stem>_pred.png` (L8 indices), `<stem>_pred_overlay.png` and
/// `<stem>_truth_overlay.png` (50 % blends over the slide image).
pub fn export_masks(dir: &Path, stem: &str, slide: &Slide, pred: &[u8]) -> Result<()> {
    let w = slide.width_px();
    assert_eq!(pred.len(), w * w, "export_masks: mask size");
    std::fs::create_dir_all(dir)?;

    let index = image::GrayImage::from_raw(w as u32, w as u32, pred.to_vec())
        .ok_or_else(|| Error::Image("mask buffer does not match dimensions".into()))?;
    index.save(dir.join(format!("{stem}_pred.png")))?;

    let blend = |classes: &[u8]| -> Vec<u8> {
        let mut out = Vec::with_capacity(w * w * 3);
        for (i, &cl) in classes.iter().enumerate() {
            let color = color_of(cl);
            for ch in 0..3 {
                let base = slide.pixels[i * 3 + ch] as u16;
                out.push(((base + color[ch] as u16) / 2) as u8);
            }
        }
        out
    };
    for (suffix, classes) in [("pred_overlay", pred), ("truth_overlay", &slide.labels[..])] {
        let img = image::RgbImage::from_raw(w as u32, w as u32, blend(classes))
            .ok_or_else(|| Error::Image("overlay buffer does not match dimensions".into()))?;
        img.save(dir.join(format!("{stem}_{suffix}.png")))?;
    }
    Ok(())
}
