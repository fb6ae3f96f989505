//! Shows how the context receptive field grows with aggregation depth: a
//! bump at one node of a path graph reaches exactly T hops.
//!
//! Run with `cargo run --example context_aggregation`.

use gcseg::config::{Aggregation, ModelConfig};
use gcseg::gcn::gcn_forward;
use gcseg::graph::build_context_graph;
use gcseg::params::ParamSet;
use gcseg::synth::tile::TileGrid;
use gcseg::tape::Tape;
use gcseg::tensor::Tensor;

/// A 1 x n path of foreground tiles.
fn path_grid(n: usize) -> TileGrid {
    let g = n.max(4);
    let mut foreground = vec![false; g * g];
    for c in 0..n {
        foreground[c] = true;
    }
    TileGrid {
        grid_tiles: g,
        tile_px: 8,
        threshold: Some(128),
        fractions: vec![0.0; g * g],
        foreground,
    }
}

/// Identity aggregation weights so the output is a pure neighborhood mix.
fn identity_params(cfg: &ModelConfig) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    let l = cfg.latent_dim;
    for t in 0..cfg.gcn_layers {
        let mut w = vec![0.0; l * l];
        for i in 0..l {
            w[i * l + i] = 1.0;
        }
        p.insert(&format!("gcn.{t}.w"), Tensor::new(&[l, l], w).unwrap());
    }
    if cfg.aggregation == Aggregation::SoftmaxTemp && cfg.gcn_layers > 0 {
        p.insert("gcn.log_tau", Tensor::new(&[1], vec![0.0]).unwrap());
    }
    p
}

fn spread(layers: usize, aggregation: Aggregation) -> Vec<f64> {
    let nodes = 9;
    let graph = build_context_graph(&path_grid(nodes)).unwrap();
    let cfg = ModelConfig {
        latent_dim: 4,
        gcn_layers: layers,
        aggregation,
        ..ModelConfig::default()
    };
    let params = identity_params(&cfg);

    let run = |bump: f64| -> Vec<f64> {
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let mut x = vec![0.1; nodes * 4];
        x[0] += bump;
        let features = tape.leaf(Tensor::new(&[nodes, 4], x).unwrap());
        let out = gcn_forward(
            &mut tape,
            &tp,
            &cfg,
            features,
            &graph.norm_adjacency.cast(),
            &graph.closed_neighborhood_mask(),
        );
        tape.value(out).data().to_vec()
    };

    let base = run(0.0);
    let bumped = run(1.0);
    (0..nodes)
        .map(|i| {
            (0..4)
                .map(|c| (bumped[i * 4 + c] - base[i * 4 + c]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn main() {
    for aggregation in [Aggregation::Sym, Aggregation::SoftmaxTemp] {
        println!("aggregation = {aggregation}");
        println!("  node distance from the bump:  0      1      2      3      4");
        for layers in 0..4 {
            let deltas = spread(layers, aggregation);
            let row: String = deltas
                .iter()
                .take(5)
                .map(|d| format!("{d:>6.3} "))
                .collect();
            println!("  T = {layers}:                      {row}");
        }
        println!();
    }
    println!("a bump at node 0 influences exactly the nodes within T hops");
}
