//! Dijkstra over weighted neighborhood graphs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor::ConformalFactor;
use crate::geometry::PointCloud;
use crate::graph::{build_graph, Adjacency, GraphKind, Resolution, WeightedGraph};

const NO_PRED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed so that `BinaryHeap` pops the smallest distance first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest distance and, when requested, a witnessing vertex path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub distance: f64,
    /// Vertices from source to target; empty when unreachable or not
    /// requested.
    pub vertex_path: Vec<usize>,
}

impl PathResult {
    pub fn is_reachable(&self) -> bool {
        self.distance.is_finite()
    }
}

fn check_source<G: Adjacency>(g: &G, v: usize) -> Result<()> {
    let n = g.vertex_count();
    if v >= n {
        return Err(Error::InvalidIndex { index: v, n });
    }
    Ok(())
}

/// Core loop. Stops once `target` is settled, if given.
fn run<G: Adjacency>(g: &G, source: usize, target: Option<usize>, pred: Option<&mut Vec<usize>>) -> Vec<f64> {
    let n = g.vertex_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = pred;
    if let Some(p) = pred.as_deref_mut() {
        p.clear();
        p.resize(n, NO_PRED);
    }
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        vertex: source,
    });
    while let Some(Entry { dist: d, vertex: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if Some(u) == target {
            break;
        }
        g.for_each_neighbor(u, |v, w| {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                if let Some(p) = pred.as_deref_mut() {
                    p[v] = u;
                }
                heap.push(Entry { dist: nd, vertex: v });
            }
        });
    }
    dist
}

/// Single-source shortest-path distances; unreachable vertices get `+inf`.
pub fn dijkstra<G: Adjacency>(graph: &G, source: usize) -> Result<Vec<f64>> {
    check_source(graph, source)?;
    Ok(run(graph, source, None, None))
}

/// Distance from `source` to `target`, with the vertex path if `want_path`.
pub fn shortest_path<G: Adjacency>(graph: &G, source: usize, target: usize, want_path: bool) -> Result<PathResult> {
    check_source(graph, source)?;
    check_source(graph, target)?;
    let mut pred = Vec::new();
    let dist = run(graph, source, Some(target), want_path.then_some(&mut pred));
    let distance = dist[target];
    let mut vertex_path = Vec::new();
    if want_path && distance.is_finite() {
        let mut v = target;
        vertex_path.push(v);
        while v != source {
            v = pred[v];
            vertex_path.push(v);
        }
        vertex_path.reverse();
    }
    Ok(PathResult { distance, vertex_path })
}

/// Estimate between two arbitrary points on a prebuilt graph: the points
/// are inserted as vertices first (reusing cloud vertices they coincide
/// with). Path indices at or above `n` denote the inserted points.
pub fn query_on_graph(graph: &WeightedGraph, x: &[f64], y: &[f64], want_path: bool) -> Result<PathResult> {
    let aug = graph.augment(&[x, y])?;
    let (s, t) = (aug.endpoint_ids()[0], aug.endpoint_ids()[1]);
    shortest_path(&aug, s, t, want_path)
}

/// Graph estimate between `x` and `y` over `cloud ∪ {x, y}`.
pub fn query_distance(
    cloud: impl Into<Arc<PointCloud>>,
    x: &[f64],
    y: &[f64],
    kind: GraphKind,
    f: &ConformalFactor,
    q: Resolution,
) -> Result<PathResult> {
    let cloud = cloud.into();
    cloud.check_dim(x)?;
    cloud.check_dim(y)?;
    // A kNN graph over X alone needs k <= n - 1; the augmented graph has up
    // to two more vertices, so build the base with k clamped and let the
    // overlay handle the rest only when the base is valid.
    if let GraphKind::Knn(k) = kind {
        if k + 1 > cloud.len() {
            let mut extra: Vec<&[f64]> = Vec::new();
            for p in [x, y] {
                if cloud.position_of(p).is_none() && !extra.contains(&p) {
                    extra.push(p);
                }
            }
            let full = cloud.with_appended(&extra)?;
            let id = |p: &[f64]| full.position_of(p).expect("endpoint was appended");
            let (s, t) = (id(x), id(y));
            let g = build_graph(full, kind, f, q)?;
            return shortest_path(&g, s, t, true);
        }
    }
    let g = build_graph(cloud, kind, f, q)?;
    query_on_graph(&g, x, y, true)
}
