//! Context-graph construction: 4-connectivity over foreground tiles,
//! symmetric normalization and k-hop neighborhoods.
//!
//! Run with `cargo run --example context_graph`.

use gcseg::config::SynthConfig;
use gcseg::graph::{build_context_graph, graph_stats, k_hop_neighborhood};
use gcseg::synth::generate::generate_slide;
use gcseg::synth::tile::tile_slide;

fn main() -> gcseg::Result<()> {
    let cfg = SynthConfig::default();
    let slide = generate_slide(&cfg, 3)?;
    let graph = build_context_graph(&tile_slide(&slide))?;

    let stats = graph_stats(&graph);
    println!("{}", serde_json::to_string_pretty(&stats)?);

    println!("\nfirst edges (node indices follow row-major tile order):");
    for &(a, b) in graph.edges.iter().take(8) {
        println!("  {:?} -- {:?}", graph.coords[a], graph.coords[b]);
    }

    // the diagonal of the normalized adjacency is exactly 1 / (1 + degree)
    println!("\nnormalized adjacency diagonal vs degree:");
    let n = graph.node_count();
    for node in 0..n.min(6) {
        let d = graph.degree(node);
        println!(
            "  node {:>2} degree {}  diag {:.4}  (1/(1+deg) = {:.4})",
            node,
            d,
            graph.norm_adjacency.at2(node, node),
            1.0 / (1.0 + d as f64)
        );
    }

    println!("\nreceptive field growth from node 0:");
    let mut seen = 0usize;
    for k in 0..4 {
        let ring = k_hop_neighborhood(&graph, 0, k);
        seen += ring.len();
        println!(
            "  distance {k}: {:>3} new nodes, {seen:>3} of {n} reachable",
            ring.len()
        );
    }
    Ok(())
}
