//! Node featurization and graph context aggregation.
//!
//! Every foreground tile becomes a node feature vector through a small
//! convolutional featurizer. Aggregation then runs a fixed number of steps;
//! each step mixes a node with its direct neighbors, so `t` steps propagate
//! information exactly `t` hops. Two mixing rules are available:
//!
//! * `sym`: multiply by the symmetric-normalized adjacency (a constant),
//! * `softmax-temp`: attention over the closed neighborhood with scores
//!   `x_i . x_j / sqrt(L)` sharpened by a learned temperature.
//!
//! The final step applies no activation; earlier steps use ReLU.

use crate::config::{Aggregation, ModelConfig};
use crate::params::TapeParams;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Names of featurizer parameters, with shapes derived from the config.
pub fn featurizer_param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, super::model::Init)> {
    use super::model::Init;
    let l = cfg.latent_dim;
    vec![
        ("feat.conv1.w".into(), vec![l / 4, 3, 3, 3], Init::Glorot),
        ("feat.conv1.b".into(), vec![l / 4], Init::Zeros),
        ("feat.conv2.w".into(), vec![l / 2, l / 4, 3, 3], Init::Glorot),
        ("feat.conv2.b".into(), vec![l / 2], Init::Zeros),
        ("feat.proj.w".into(), vec![l / 2, l], Init::Glorot),
        ("feat.proj.b".into(), vec![l], Init::Zeros),
    ]
}

/// Shapes of the aggregation parameters.
pub fn gcn_param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, super::model::Init)> {
    use super::model::Init;
    let l = cfg.latent_dim;
    let mut out = Vec::new();
    for t in 0..cfg.gcn_layers {
        out.push((format!("gcn.{t}.w"), vec![l, l], Init::Glorot));
    }
    if cfg.aggregation == Aggregation::SoftmaxTemp && cfg.gcn_layers > 0 {
        // temperature starts at 1 (log 0) and is shared across steps
        out.push(("gcn.log_tau".into(), vec![1], Init::Zeros));
    }
    out
}

/// Maps all tiles `[N, 3, S, S]` to node features `[N, L]`.
pub fn featurize_nodes<T: Real>(
    tape: &mut Tape<T>,
    tp: &TapeParams,
    tiles: Var,
) -> Var {
    let c1 = tape.conv2d(tiles, tp.var("feat.conv1.w"), tp.var("feat.conv1.b"), 2, 1);
    let a1 = tape.relu(c1);
    let c2 = tape.conv2d(a1, tp.var("feat.conv2.w"), tp.var("feat.conv2.b"), 2, 1);
    let a2 = tape.relu(c2);
    let pooled = tape.global_avg_pool(a2);
    let proj = tape.matmul(pooled, tp.var("feat.proj.w"));
    tape.add_row(proj, tp.var("feat.proj.b"))
}

/// Runs the configured number of aggregation steps over node features
/// `[N, L]`.
///
/// `norm_adjacency` is the symmetric normalization, `neighborhood_mask` the
/// 0/1 closed-neighborhood mask; both are constants of the slide's graph.
/// Zero steps return the features untouched.
pub fn gcn_forward<T: Real>(
    tape: &mut Tape<T>,
    tp: &TapeParams,
    cfg: &ModelConfig,
    features: Var,
    norm_adjacency: &Tensor<T>,
    neighborhood_mask: &Tensor<T>,
) -> Var {
    if cfg.gcn_layers == 0 {
        return features;
    }
    let inv_sqrt_l = T::from_f64(1.0 / (cfg.latent_dim as f64).sqrt());
    let adj = tape.leaf(norm_adjacency.clone());
    let mut h = features;
    for t in 0..cfg.gcn_layers {
        let mixed = match cfg.aggregation {
            Aggregation::Sym => tape.matmul(adj, h),
            Aggregation::SoftmaxTemp => {
                let ht = tape.transpose(h);
                let raw = tape.matmul(h, ht);
                let scores = tape.scale(raw, inv_sqrt_l);
                let alpha =
                    tape.masked_softmax_rows(scores, tp.var("gcn.log_tau"), neighborhood_mask);
                tape.matmul(alpha, h)
            }
        };
        let w = tp.var(&format!("gcn.{t}.w"));
        let lin = tape.matmul(mixed, w);
        h = if t + 1 < cfg.gcn_layers {
            tape.relu(lin)
        } else {
            lin
        };
    }
    h
}
