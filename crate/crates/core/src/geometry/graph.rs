use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold_io::Manifold;

/// Connectivity used to run Dijkstra on point clouds.
const POINT_CLOUD_GRAPH_DEGREE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMethod {
    GraphDijkstra,
    EuclideanKnn,
}

impl std::str::FromStr for GraphMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph_dijkstra" | "dijkstra" => Ok(GraphMethod::GraphDijkstra),
            "euclidean_knn" | "knn" => Ok(GraphMethod::EuclideanKnn),
            _ => Err(Error::invalid(format!("unknown graph method `{s}`"))),
        }
    }
}

/// Truncated nearest-neighbor distances for every vertex.
///
/// Row `i` always starts with `(i, 0.0)` and is sorted by ascending distance,
/// ties broken by vertex index.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicGraph {
    pub source_count: usize,
    pub neighbor_ids: Vec<Vec<usize>>,
    pub neighbor_dists: Vec<Vec<f64>>,
    /// Sources that reached fewer than `k` vertices (small components).
    pub truncated_sources: Vec<usize>,
    pub k: usize,
}

impl GeodesicGraph {
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.neighbor_ids[i]
            .iter()
            .copied()
            .zip(self.neighbor_dists[i].iter().copied())
    }

    pub fn distance(&self, i: usize, j: usize) -> Option<f64> {
        self.neighbors(i).find(|&(u, _)| u == j).map(|(_, d)| d)
    }

    pub fn has_warning(&self) -> bool {
        !self.truncated_sources.is_empty()
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (distance, index).
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist(m: &Manifold, a: usize, b: usize) -> f64 {
    (m.vertices[a] - m.vertices[b]).norm()
}

/// The `k` nearest vertices of every vertex by straight-line distance (self included).
pub fn euclidean_knn(m: &Manifold, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = m.vertex_count();
    let k = k.min(n);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut all: Vec<(usize, f64)> = (0..n).map(|j| (j, dist(m, i, j))).collect();
            let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < n {
                all.select_nth_unstable_by(k - 1, cmp);
                all.truncate(k);
            }
            all.sort_unstable_by(cmp);
            all
        })
        .collect()
}

/// Weighted adjacency: mesh edges, or a symmetrized k-NN graph for point clouds.
fn adjacency(m: &Manifold) -> Vec<Vec<(usize, f64)>> {
    let n = m.vertex_count();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    if m.is_mesh() {
        for [a, b] in m.edges() {
            let d = dist(m, a, b);
            adj[a].push((b, d));
            adj[b].push((a, d));
        }
    } else {
        let knn = euclidean_knn(m, POINT_CLOUD_GRAPH_DEGREE + 1);
        for (i, row) in knn.iter().enumerate() {
            for &(j, d) in row.iter().filter(|&&(j, _)| j != i) {
                adj[i].push((j, d));
                adj[j].push((i, d));
            }
        }
        for row in &mut adj {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by_key(|e| e.0);
        }
    }
    adj
}

fn dijkstra_truncated(adj: &[Vec<(usize, f64)>], src: usize, k: usize) -> Vec<(usize, f64)> {
    let mut best = std::collections::HashMap::new();
    let mut settled = Vec::with_capacity(k);
    let mut done = std::collections::HashSet::new();
    let mut heap = BinaryHeap::new();
    best.insert(src, 0.0);
    heap.push(Item(0.0, src));
    while let Some(Item(d, u)) = heap.pop() {
        if !done.insert(u) {
            continue;
        }
        settled.push((u, d));
        if settled.len() == k {
            break;
        }
        for &(v, w) in &adj[u] {
            if done.contains(&v) {
                continue;
            }
            let nd = d + w;
            let better = best.get(&v).is_none_or(|&old: &f64| nd < old);
            if better {
                best.insert(v, nd);
                heap.push(Item(nd, v));
            }
        }
    }
    settled
}

/// For each vertex, its `k` nearest vertices (self included) under `method`.
pub fn build_geodesic_graph(m: &Manifold, k: usize, method: GraphMethod) -> Result<GeodesicGraph> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    let n = m.vertex_count();
    let rows: Vec<Vec<(usize, f64)>> = match method {
        GraphMethod::EuclideanKnn => euclidean_knn(m, k),
        GraphMethod::GraphDijkstra => {
            let adj = adjacency(m);
            (0..n)
                .into_par_iter()
                .map(|s| dijkstra_truncated(&adj, s, k))
                .collect()
        }
    };
    let want = k.min(n);
    let truncated_sources: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.len() < want)
        .map(|(i, _)| i)
        .collect();
    if !truncated_sources.is_empty() {
        log::warn!(
            "{} vertices reach fewer than {} neighbors (disconnected components)",
            truncated_sources.len(),
            want
        );
    }
    let (neighbor_ids, neighbor_dists) = rows
        .into_iter()
        .map(|r| r.into_iter().unzip::<usize, f64, Vec<_>, Vec<_>>())
        .unzip();
    Ok(GeodesicGraph {
        source_count: n,
        neighbor_ids,
        neighbor_dists,
        truncated_sources,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn path_graph_chain() {
        // Thin strip whose first three vertices form the path 0-1-2.
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(0.5, 10.0, 0.0),
            Point3::new(1.5, 10.0, 0.0),
        ];
        let m = Manifold::new(v, vec![[0, 1, 3], [1, 2, 4], [1, 4, 3]]).unwrap();
        let g = build_geodesic_graph(&m, 3, GraphMethod::GraphDijkstra).unwrap();
        assert_eq!(g.neighbor_ids[0], vec![0, 1, 2]);
        assert_eq!(g.neighbor_dists[0], vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn unit_square_corners() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let m = Manifold::point_cloud(v).unwrap();
        let g = build_geodesic_graph(&m, 2, GraphMethod::EuclideanKnn).unwrap();
        for i in 0..4 {
            assert_eq!(g.neighbor_dists[i], vec![0.0, 1.0]);
            assert_eq!(g.neighbor_ids[i][0], i);
        }
    }

    #[test]
    fn small_component_sets_warning() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(5.0, 0.0, 0.0),
            Point3::new(6.0, 0.0, 0.0),
            Point3::new(5.0, 1.0, 0.0),
        ];
        let m = Manifold::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let g = build_geodesic_graph(&m, 5, GraphMethod::GraphDijkstra).unwrap();
        assert!(g.has_warning());
        assert_eq!(g.neighbor_ids[0].len(), 3);
    }

    #[test]
    fn k_below_two_rejected() {
        let m = Manifold::point_cloud(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(build_geodesic_graph(&m, 1, GraphMethod::EuclideanKnn).is_err());
    }
}
