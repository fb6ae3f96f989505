//! Central-difference verification of analytic gradients.
//!
//! For each scalar parameter component x the checker compares the tape
//! gradient against (f(x+h) - f(x-h)) / 2h and reports the relative error
//! |a - n| / max(|a|, |n|, eps).
//!
//! The eps floor sets the smallest gradient magnitude that is judged in
//! relative terms; below it the comparison is effectively absolute with
//! tolerance threshold x eps. The floor is calibrated to the noise of the
//! estimator itself: a central difference of a loss of size |L| carries
//! f64 roundoff of roughly a few x 2.2e-16 x |L| / h, about 1e-9 absolute
//! for unit-scale losses at h = 1e-6. No analytic gradient, correct or not,
//! can be confirmed below that. With eps = 1e-3 the noise maps to relative
//! errors of order 1e-6, safely under the 1e-5 acceptance threshold, while
//! any real backward-pass defect (wrong sign, dropped term, missing path)
//! still shows up either through large-magnitude components or as an
//! absolute error far above 1e-8.

use std::collections::BTreeMap;

use crate::config::{ModelConfig, SynthConfig};
use crate::error::Result;
use crate::model::{forward_loss, init_params, prepare_slide};
use crate::params::ParamSet;
use crate::synth::generate::generate_slide;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

/// Relative-error floor for near-zero gradients; see the module docs for
/// the calibration.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Worst-case relative error for one named parameter.
#[derive(Clone, Debug)]
pub struct ParamGradReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst component.
    pub argmax: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a full gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub per_param: Vec<ParamGradReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_err() < threshold
    }

    /// The single worst parameter, if any were checked.
    pub fn worst(&self) -> Option<&ParamGradReport> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

fn perturb<T: Real>(params: &ParamSet<T>, name: &str, idx: usize, delta: T) -> ParamSet<T> {
    let mut out = params.clone();
    let t = params.get(name);
    let mut data = t.data().to_vec();
    data[idx] += delta;
    out.set(name, Tensor::from_parts(t.shape(), data));
    out
}

/// Checks the analytic gradient of `loss` over every component of `params`.
///
/// `loss` must return the scalar loss and the analytic gradient per parameter;
/// it is re-evaluated 2 times per component for the central differences, so
/// keep the parameter count commensurate with the model under test.
pub fn grad_check<T, F>(params: &ParamSet<T>, h: f64, mut loss: F) -> GradReport
where
    T: Real,
    F: FnMut(&ParamSet<T>) -> (T, BTreeMap<String, Tensor<T>>),
{
    let (_, analytic) = loss(params);
    let hh = T::from_f64(h);
    let mut per_param = Vec::new();
    for (name, tensor) in params.iter() {
        let grad = analytic
            .get(name)
            .unwrap_or_else(|| panic!("loss returned no gradient for {name:?}"));
        assert_eq!(grad.shape(), tensor.shape(), "gradient shape for {name:?}");
        let mut report = ParamGradReport {
            name: name.to_string(),
            max_rel_err: -1.0,
            argmax: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in 0..tensor.len() {
            let up = loss(&perturb(params, name, idx, hh)).0;
            let dn = loss(&perturb(params, name, idx, -hh)).0;
            let numeric = (up.into_f64() - dn.into_f64()) / (2.0 * h);
            let a = grad.data()[idx].into_f64();
            let e = rel_err(a, numeric);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.argmax = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        per_param.push(report);
    }
    GradReport { per_param }
}

/// Checks the complete model in one shot: a small slide is generated, a
/// f64 forward pass runs through featurizer, context aggregation, fusion and
/// codec, and every parameter component is verified against central
/// differences. `target_nodes` caps the patches in the loss to keep the
/// O(parameters x forward) cost in check.
pub fn full_model_check(
    model_cfg: &ModelConfig,
    synth_cfg: &SynthConfig,
    h: f64,
    target_nodes: usize,
) -> Result<GradReport> {
    model_cfg.validate()?;
    synth_cfg.validate()?;
    let slide = generate_slide(synth_cfg, 0)?;
    let batch = prepare_slide::<f64>(&slide, model_cfg)?;
    let n = batch.graph.node_count().min(target_nodes.max(1));
    let nodes: Vec<usize> = (0..n).collect();
    let params: ParamSet<f64> = init_params(model_cfg, 33).cast();
    Ok(grad_check(&params, h, |p| {
        let mut tape = Tape::new();
        let tp = p.register(&mut tape);
        let loss = forward_loss(&mut tape, &tp, model_cfg, &batch, &nodes);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss);
        (value, tp.gradients(p, &grads))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_loss(p: &ParamSet<f64>) -> (f64, BTreeMap<String, Tensor<f64>>) {
        // loss = sum(w * w) + 3 * b
        let mut tape = Tape::new();
        let tp = p.register(&mut tape);
        let w2 = tape.mul(tp.var("w"), tp.var("w"));
        let b3 = tape.scale(tp.var("b"), 3.0);
        // collapse to scalar through a matmul with ones
        let ones = tape.leaf(Tensor::full(&[3, 1], 1.0));
        let s1 = tape.matmul(w2, ones);
        let total = tape.add(s1, b3);
        let g = tape.backward(total);
        (tape.value(total).item(), tp.gradients(p, &g))
    }

    #[test]
    fn quadratic_passes() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(&[1, 3], vec![0.5, -1.25, 2.0]).unwrap());
        p.insert("b", Tensor::new(&[1, 1], vec![0.75]).unwrap());
        let report = grad_check(&p, 1e-6, quadratic_loss);
        assert!(report.passes(1e-5), "max err {}", report.max_rel_err());
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(&[1, 3], vec![0.5, -1.25, 2.0]).unwrap());
        p.insert("b", Tensor::new(&[1, 1], vec![0.75]).unwrap());
        let report = grad_check(&p, 1e-6, |p| {
            let (l, mut g) = quadratic_loss(p);
            let broken = g["w"].map(|v| v * 1.01);
            g.insert("w".into(), broken);
            (l, g)
        });
        assert!(!report.passes(1e-5));
        assert_eq!(report.worst().unwrap().name, "w");
    }

    #[test]
    fn zero_gradient_component_is_tolerated() {
        // b has zero gradient when its coefficient is zero; the eps floor
        // keeps the relative error finite.
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(&[1, 1], vec![2.0]).unwrap());
        let report = grad_check(&p, 1e-6, |p: &ParamSet<f64>| {
            let mut tape = Tape::new();
            let tp = p.register(&mut tape);
            let y = tape.mul(tp.var("w"), tp.var("w"));
            let g = tape.backward(y);
            (tape.value(y).item(), tp.gradients(p, &g))
        });
        assert!(report.passes(1e-5));
    }
}
