//! Adam optimization and the slide-cycling training loop.
//!
//! Each step draws one slide (round-robin over the training split) and a
//! deterministic sample of its foreground patches, rebuilds the forward tape
//! end to end, and applies a bias-corrected Adam update. Everything is keyed
//! off the config seed: two runs with the same inputs produce bit-identical
//! parameters.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{forward_loss, init_params, prepare_slide, SlideBatch};
use crate::params::ParamSet;
use crate::synth::generate::Slide;
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates per parameter.
pub struct AdamState<T: Real> {
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = |p: &ParamSet<T>| {
            p.iter()
                .map(|(name, t)| (name.to_string(), Tensor::zeros(t.shape())))
                .collect()
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One Adam update. Parameters whose name satisfies `frozen` keep their
/// value and their moments stay untouched.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
    frozen: impl Fn(&str) -> bool,
) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(ADAM_BETA1);
    let b2 = T::from_f64(ADAM_BETA2);
    let eps = T::from_f64(ADAM_EPS);
    let lr = T::from_f64(lr);
    let corr1 = T::from_f64(1.0 - ADAM_BETA1.powi(t));
    let corr2 = T::from_f64(1.0 - ADAM_BETA2.powi(t));

    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        if frozen(&name) {
            continue;
        }
        let g = grads
            .get(&name)
            .unwrap_or_else(|| panic!("missing gradient for {name:?}"));
        let p = params.get(&name);
        let m = &state.m[&name];
        let v = &state.v[&name];
        let mut new_m = Vec::with_capacity(p.len());
        let mut new_v = Vec::with_capacity(p.len());
        let mut new_p = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
            let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
            let mhat = mi / corr1;
            let vhat = vi / corr2;
            new_m.push(mi);
            new_v.push(vi);
            new_p.push(p.data()[i] - lr * mhat / (vhat.sqrt() + eps));
        }
        state.m.insert(name.clone(), Tensor::from_parts(p.shape(), new_m));
        state.v.insert(name.clone(), Tensor::from_parts(p.shape(), new_v));
        params.set(&name, Tensor::from_parts(p.shape(), new_p));
    }
}

/// One row of the training log.
#[derive(Clone, Debug)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub elapsed_seconds: f64,
}

/// Result of a training run.
pub struct TrainRun<T: Real> {
    pub params: ParamSet<T>,
    pub log: Vec<LogRow>,
    pub final_loss: f64,
}

/// Renders the log as CSV. The `elapsed_seconds` column is wall-clock time
/// and varies run to run; every other column is deterministic.
pub fn log_to_csv(log: &[LogRow]) -> String {
    let mut out = String::from("step,loss,lr,elapsed_seconds\n");
    for row in log {
        out.push_str(&format!(
            "{},{:.6},{},{:.3}\n",
            row.step, row.loss, row.lr, row.elapsed_seconds
        ));
    }
    out
}

/// Trains on the given slides (the caller passes the training split).
pub fn train<T: Real>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    slides: &[Slide],
    mut on_log: impl FnMut(&LogRow),
) -> Result<TrainRun<T>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if slides.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let batches: Vec<SlideBatch<T>> = slides
        .iter()
        .map(|s| prepare_slide(s, model_cfg))
        .collect::<Result<_>>()?;

    let mut params: ParamSet<T> = init_params(model_cfg, train_cfg.seed).cast();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha20Rng::seed_from_u64(train_cfg.seed ^ 0xba7c_ba7c_ba7c_ba7c);
    let start = Instant::now();
    let mut log = Vec::new();
    let mut last_loss = f64::NAN;

    for step in 0..train_cfg.steps {
        let batch = &batches[step % batches.len()];
        let n = batch.graph.node_count();
        let nodes: Vec<usize> = (0..train_cfg.batch_patches)
            .map(|_| rng.random_range(0..n))
            .collect();

        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let loss = forward_loss(&mut tape, &tp, model_cfg, batch, &nodes);
        let loss_val = tape.value(loss).item().into_f64();
        if !loss_val.is_finite() {
            return Err(Error::Evaluation(format!(
                "loss diverged to {loss_val} at step {step}"
            )));
        }
        last_loss = loss_val;
        let grads = tape.backward(loss);
        let by_name = tp.gradients(&params, &grads);
        adam_step(&mut params, &by_name, &mut state, train_cfg.lr, |name| {
            train_cfg.freeze_featurizer && name.starts_with("feat.")
        });

        if step % train_cfg.log_every == 0 || step + 1 == train_cfg.steps {
            let row = LogRow {
                step,
                loss: loss_val,
                lr: train_cfg.lr,
                elapsed_seconds: start.elapsed().as_secs_f64(),
            };
            on_log(&row);
            log.push(row);
        }
    }
    Ok(TrainRun {
        params,
        log,
        final_loss: last_loss,
    })
}
