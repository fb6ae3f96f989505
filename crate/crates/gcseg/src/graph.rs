//! Context graph over foreground tiles.
//!
//! Nodes are the foreground tiles of one slide in row-major order; edges
//! connect 4-adjacent tiles. The aggregation stages consume the symmetric
//! normalization `D^(-1/2) (A + I) D^(-1/2)` whose diagonal is exactly
//! `1 / (1 + deg(i))`.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::synth::tile::TileGrid;
use crate::tensor::Tensor;

/// Adjacency structure of one slide's foreground tiles.
#[derive(Clone, Debug)]
pub struct ContextGraph {
    /// Tile coordinates per node, row-major over the tile grid.
    pub coords: Vec<(usize, usize)>,
    /// Undirected edges as node-index pairs with `a < b`.
    pub edges: Vec<(usize, usize)>,
    /// Dense 0/1 adjacency, zero diagonal.
    pub adjacency: Tensor<f64>,
    /// `D^(-1/2) (A + I) D^(-1/2)`.
    pub norm_adjacency: Tensor<f64>,
}

impl ContextGraph {
    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        let n = self.node_count();
        (0..n)
            .filter(|&j| self.adjacency.data()[node * n + j] != 0.0)
            .count()
    }

    /// 0/1 mask of the closed neighborhood (self plus direct neighbors),
    /// shaped like the adjacency.
    pub fn closed_neighborhood_mask<T: crate::tensor::Real>(&self) -> Tensor<T> {
        let n = self.node_count();
        let mut m = vec![T::zero(); n * n];
        for i in 0..n {
            m[i * n + i] = T::one();
        }
        for &(a, b) in &self.edges {
            m[a * n + b] = T::one();
            m[b * n + a] = T::one();
        }
        Tensor::from_parts(&[n, n], m)
    }
}

/// Builds the 4-connectivity graph over the foreground tiles of a grid.
pub fn build_context_graph(grid: &TileGrid) -> Result<ContextGraph> {
    let coords = grid.foreground_coords();
    if coords.is_empty() {
        return Err(Error::EmptyGraph(
            "no foreground tiles; cannot build a context graph".into(),
        ));
    }
    let n = coords.len();
    let g = grid.grid_tiles;
    // tile -> node index lookup
    let mut index = vec![usize::MAX; g * g];
    for (i, &(r, c)) in coords.iter().enumerate() {
        index[r * g + c] = i;
    }
    let mut edges = Vec::new();
    let mut adj = vec![0.0f64; n * n];
    for (i, &(r, c)) in coords.iter().enumerate() {
        // right and down neighbors suffice: each undirected pair seen once
        for (nr, nc) in [(r + 1, c), (r, c + 1)] {
            if nr < g && nc < g {
                let j = index[nr * g + nc];
                if j != usize::MAX {
                    edges.push((i.min(j), i.max(j)));
                    adj[i * n + j] = 1.0;
                    adj[j * n + i] = 1.0;
                }
            }
        }
    }
    edges.sort_unstable();
    let adjacency = Tensor::from_parts(&[n, n], adj);
    let norm_adjacency = normalize_adjacency(&adjacency)?;
    Ok(ContextGraph {
        coords,
        edges,
        adjacency,
        norm_adjacency,
    })
}

/// Symmetric normalization of a 0/1 adjacency matrix with self-loops added:
/// `D^(-1/2) (A + I) D^(-1/2)` where `D` holds the self-loop-augmented
/// degrees.
pub fn normalize_adjacency(adjacency: &Tensor<f64>) -> Result<Tensor<f64>> {
    let shape = adjacency.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Shape(format!(
            "adjacency must be square, got {shape:?}"
        )));
    }
    let n = shape[0];
    let a = adjacency.data();
    for i in 0..n {
        if a[i * n + i] != 0.0 {
            return Err(Error::Domain(format!(
                "adjacency has a self-loop at node {i}"
            )));
        }
        for j in 0..i {
            if a[i * n + j] != a[j * n + i] {
                return Err(Error::Domain(format!(
                    "adjacency is not symmetric at ({i}, {j})"
                )));
            }
            if a[i * n + j] != 0.0 && a[i * n + j] != 1.0 {
                return Err(Error::Domain(format!(
                    "adjacency must be 0/1, found {} at ({i}, {j})",
                    a[i * n + j]
                )));
            }
        }
    }
    // self-loop-augmented degrees
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).map(|j| a[i * n + j]).sum::<f64>())
        .collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        // diagonal comes out as exactly 1 / (1 + deg) because the two
        // inverse square roots are the same f64
        out[i * n + i] = 1.0 / deg[i];
        for j in i + 1..n {
            if a[i * n + j] != 0.0 {
                let v = inv_sqrt[i] * inv_sqrt[j];
                out[i * n + j] = v;
                out[j * n + i] = v; // mirrored, so symmetry is exact
            }
        }
    }
    Ok(Tensor::from_parts(&[n, n], out))
}

/// Nodes at shortest-path distance exactly `k` from `start`; `k = 0` is the
/// singleton `{start}`. A `k` past the graph's diameter yields the empty set.
pub fn k_hop_neighborhood(graph: &ContextGraph, start: usize, k: usize) -> BTreeSet<usize> {
    hop_distances(graph, start)
        .into_iter()
        .enumerate()
        .filter(|&(_, d)| d == Some(k))
        .map(|(v, _)| v)
        .collect()
}

/// Breadth-first shortest-path distance from `start` to every node; `None`
/// for nodes in other components.
pub fn hop_distances(graph: &ContextGraph, start: usize) -> Vec<Option<usize>> {
    let n = graph.node_count();
    assert!(start < n, "hop_distances: node out of range");
    let mut dist = vec![None; n];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if graph.adjacency.data()[u * n + v] != 0.0 && dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Number of connected components.
pub fn component_count(graph: &ContextGraph) -> usize {
    let n = graph.node_count();
    let mut seen = vec![false; n];
    let mut components = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if graph.adjacency.data()[u * n + v] != 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    components
}

/// Summary statistics for one slide's graph.
#[derive(Clone, Debug, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub components: usize,
    pub mean_degree: f64,
    /// `degree_histogram[d]` counts nodes of degree `d` (max degree 4).
    pub degree_histogram: Vec<usize>,
}

pub fn graph_stats(graph: &ContextGraph) -> GraphStats {
    let n = graph.node_count();
    let mut histogram = vec![0usize; 5];
    let mut total = 0usize;
    for i in 0..n {
        let d = graph.degree(i);
        histogram[d] += 1;
        total += d;
    }
    GraphStats {
        nodes: n,
        edges: graph.edges.len(),
        components: component_count(graph),
        mean_degree: total as f64 / n as f64,
        degree_histogram: histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Grid where exactly the given tiles are foreground.
    fn grid_of(g: usize, fg: &[(usize, usize)]) -> TileGrid {
        let mut foreground = vec![false; g * g];
        for &(r, c) in fg {
            foreground[r * g + c] = true;
        }
        TileGrid {
            grid_tiles: g,
            tile_px: 8,
            threshold: Some(128),
            fractions: foreground.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
            foreground,
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let err = build_context_graph(&grid_of(4, &[])).unwrap_err();
        assert!(matches!(err, Error::EmptyGraph(_)));
    }

    #[test]
    fn path_of_three_normalizes_as_expected() {
        // nodes 0-1-2 in a row: degrees 1, 2, 1
        let g = build_context_graph(&grid_of(4, &[(0, 0), (0, 1), (0, 2)])).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        let na = g.norm_adjacency.data();
        // diagonal: 1/2, 1/3, 1/2
        assert_eq!(na[0], 0.5);
        assert_abs_diff_eq!(na[4], 1.0 / 3.0, epsilon = 0.0);
        assert_eq!(na[8], 0.5);
        // off-diagonal: 1 / sqrt(2 * 3)
        let x = 1.0 / 6.0f64.sqrt();
        assert_abs_diff_eq!(na[1], x, epsilon = 1e-15);
        assert_abs_diff_eq!(na[3], x, epsilon = 1e-15);
        assert_eq!(na[2], 0.0);
    }

    #[test]
    fn diagonal_is_exactly_one_over_degree_plus_one() {
        // random-ish blobs over several grids
        let mut state = 12345u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..100 {
            let g = 5 + (next() % 5) as usize;
            let mut fg = Vec::new();
            for r in 0..g {
                for c in 0..g {
                    if next() % 3 == 0 {
                        fg.push((r, c));
                    }
                }
            }
            if fg.is_empty() {
                continue;
            }
            let graph = build_context_graph(&grid_of(g, &fg)).unwrap();
            let n = graph.node_count();
            for i in 0..n {
                let expect = 1.0 / (1.0 + graph.degree(i) as f64);
                assert_eq!(
                    graph.norm_adjacency.data()[i * n + i],
                    expect,
                    "diagonal off at node {i}"
                );
            }
            // exact symmetry
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(
                        graph.norm_adjacency.data()[i * n + j],
                        graph.norm_adjacency.data()[j * n + i]
                    );
                }
            }
        }
    }

    #[test]
    fn diagonal_tiles_are_not_adjacent() {
        let g = build_context_graph(&grid_of(4, &[(0, 0), (1, 1)])).unwrap();
        assert!(g.edges.is_empty());
        assert_eq!(component_count(&g), 2);
    }

    #[test]
    fn normalize_rejects_bad_matrices() {
        let asym = Tensor::new(&[2, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            normalize_adjacency(&asym).unwrap_err(),
            Error::Domain(_)
        ));
        let selfloop = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(normalize_adjacency(&selfloop).is_err());
        let rect = Tensor::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(
            normalize_adjacency(&rect).unwrap_err(),
            Error::Shape(_)
        ));
        let weighted = Tensor::new(&[2, 2], vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        assert!(normalize_adjacency(&weighted).is_err());
    }

    #[test]
    fn k_hop_rings_on_a_path() {
        // straight path of five tiles
        let tiles: Vec<(usize, usize)> = (0..5).map(|c| (0, c)).collect();
        let g = build_context_graph(&grid_of(6, &tiles)).unwrap();
        assert_eq!(k_hop_neighborhood(&g, 0, 0), BTreeSet::from([0]));
        assert_eq!(k_hop_neighborhood(&g, 0, 1), BTreeSet::from([1]));
        assert_eq!(k_hop_neighborhood(&g, 0, 3), BTreeSet::from([3]));
        assert_eq!(k_hop_neighborhood(&g, 2, 2), BTreeSet::from([0, 4]));
        assert_eq!(k_hop_neighborhood(&g, 0, 9), BTreeSet::new());
        assert_eq!(
            hop_distances(&g, 1),
            vec![Some(1), Some(0), Some(1), Some(2), Some(3)]
        );
    }

    #[test]
    fn stats_on_a_square_block() {
        let g = build_context_graph(&grid_of(4, &[(0, 0), (0, 1), (1, 0), (1, 1)])).unwrap();
        let s = graph_stats(&g);
        assert_eq!(s.nodes, 4);
        assert_eq!(s.edges, 4);
        assert_eq!(s.components, 1);
        assert_abs_diff_eq!(s.mean_degree, 2.0);
        assert_eq!(s.degree_histogram, vec![0, 0, 4, 0, 0]);
    }

    #[test]
    fn closed_neighborhood_mask_matches_edges() {
        let g = build_context_graph(&grid_of(4, &[(0, 0), (0, 1), (2, 2)])).unwrap();
        let m: Tensor<f64> = g.closed_neighborhood_mask();
        let n = g.node_count();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j {
                    1.0
                } else {
                    g.adjacency.data()[i * n + j]
                };
                assert_eq!(m.data()[i * n + j], expect);
            }
        }
    }
}
