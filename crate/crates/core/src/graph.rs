//! Neighborhood graphs over point clouds with conformal edge weights.
//!
//! Construction is a brute-force pair scan, parallel over vertices. The
//! finished graph is stored as compressed adjacency (offsets plus
//! neighbor/weight arrays), each row sorted by neighbor index.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factor::ConformalFactor;
use crate::geometry::{dist, PointCloud};
use crate::quadrature::adaptive_simpson;

/// Threshold of a neighborhood graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    /// Edge iff `||x - y|| <= r`.
    Ball(f64),
    /// Edge iff either endpoint is among the `k` nearest of the other.
    Knn(usize),
}

/// Number of factor samples per edge; `Infinite` is the exact segment
/// integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Finite(u32),
    Infinite,
}

impl Resolution {
    pub fn finite(q: u32) -> Result<Self> {
        if q < 2 {
            return Err(invalid("q", format!("resolution must be >= 2, got {q}")));
        }
        Ok(Resolution::Finite(q))
    }

    /// `1 / (q - 1)`, zero for infinite resolution.
    pub fn inverse_gap(self) -> f64 {
        match self {
            Resolution::Finite(q) => 1.0 / (q as f64 - 1.0),
            Resolution::Infinite => 0.0,
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Finite(q) => write!(f, "{q}"),
            Resolution::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Resolution::Infinite),
            other => {
                let q: u32 = other
                    .parse()
                    .map_err(|_| invalid("q", format!("expected an integer >= 2 or `inf`, got `{other}`")))?;
                Resolution::finite(q)
            }
        }
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Resolution::Finite(q) => s.serialize_u32(*q),
            Resolution::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(q) => Resolution::finite(q).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Weight of the segment `[x, y]` at resolution `q`.
pub fn edge_weight(f: &ConformalFactor, q: Resolution, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    f.check_dim(x)?;
    Ok(weight(f, q, x, y))
}

/// Unchecked weight. Endpoints are put in lexicographic order first so the
/// result is bitwise symmetric.
pub(crate) fn weight(f: &ConformalFactor, q: Resolution, x: &[f64], y: &[f64]) -> f64 {
    let (x, y) = if lex_less(y, x) { (y, x) } else { (x, y) };
    let len = dist(x, y);
    if len == 0.0 {
        return 0.0;
    }
    let fx = f.value(x);
    let fy = f.value(y);
    match q {
        Resolution::Finite(2) => len * (0.5 * (fx + fy)),
        Resolution::Infinite if f.is_affine() => len * (0.5 * (fx + fy)),
        Resolution::Finite(q) => {
            let gaps = q as f64 - 1.0;
            let mut p = vec![0.0; x.len()];
            let mut interior = 0.0;
            for k in 2..q {
                let a = (q - k) as f64 / gaps;
                let b = (k - 1) as f64 / gaps;
                for (pi, (xi, yi)) in p.iter_mut().zip(x.iter().zip(y)) {
                    *pi = a * xi + b * yi;
                }
                interior += f.value(&p);
            }
            len * ((fx + 2.0 * interior + fy) / (2.0 * gaps))
        }
        Resolution::Infinite => {
            let g = |t: f64| {
                let p: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| (1.0 - t) * xi + t * yi).collect();
                f.value(&p)
            };
            let scale = 0.5 * (fx.abs() + fy.abs());
            let integral = adaptive_simpson(&g, 0.0, 1.0, 1e-11 * scale.max(f.f_min()), 8);
            len * integral
        }
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Per-vertex nearest-neighbor rankings kept by kNN graphs so that query
/// endpoints can be inserted without rebuilding the graph.
#[derive(Debug, Clone)]
struct KnnRanking {
    width: usize,
    idx: Vec<u32>,
    dist: Vec<f64>,
}

impl KnnRanking {
    fn row(&self, v: usize) -> (&[u32], &[f64]) {
        let s = v * self.width;
        (&self.idx[s..s + self.width], &self.dist[s..s + self.width])
    }
}

/// Immutable weighted neighborhood graph.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    cloud: Arc<PointCloud>,
    kind: GraphKind,
    resolution: Resolution,
    factor: ConformalFactor,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    ranking: Option<KnnRanking>,
}

impl WeightedGraph {
    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn shared_cloud(&self) -> Arc<PointCloud> {
        Arc::clone(&self.cloud)
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn factor(&self) -> &ConformalFactor {
        &self.factor
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.offsets[v], self.offsets[v + 1]);
        self.targets[s..e]
            .iter()
            .zip(&self.weights[s..e])
            .map(|(&t, &w)| (t as usize, w))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Undirected edges `(u, v, w)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.vertex_count()).flat_map(move |u| {
            self.neighbors(u)
                .filter(move |&(v, _)| v > u)
                .map(move |(v, w)| (u, v, w))
        })
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let (s, e) = (self.offsets[u], self.offsets[u + 1]);
        self.targets[s..e].binary_search(&(v as u32)).is_ok()
    }

    /// Dumps edges as JSON lines `{"u":i,"v":j,"w":weight}`.
    pub fn write_edges_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Edge {
            u: usize,
            v: usize,
            w: f64,
        }
        for (u, v, w) in self.edges() {
            serde_json::to_writer(&mut out, &Edge { u, v, w })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn assemble(
        cloud: Arc<PointCloud>,
        kind: GraphKind,
        resolution: Resolution,
        factor: &ConformalFactor,
        pairs: Vec<(u32, u32)>,
        ranking: Option<KnnRanking>,
    ) -> Self {
        let n = cloud.len();
        let weights: Vec<f64> = pairs
            .par_iter()
            .map(|&(u, v)| weight(factor, resolution, cloud.point(u as usize), cloud.point(v as usize)))
            .collect();
        let mut degree = vec![0usize; n];
        for &(u, v) in &pairs {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut targets = vec![0u32; 2 * pairs.len()];
        let mut wts = vec![0.0; 2 * pairs.len()];
        // Pairs are sorted lexicographically with u < v, so every row fills
        // in ascending neighbor order: smaller neighbors arrive first.
        for (&(u, v), &w) in pairs.iter().zip(&weights) {
            let (u, v) = (u as usize, v as usize);
            targets[cursor[u]] = v as u32;
            wts[cursor[u]] = w;
            cursor[u] += 1;
            targets[cursor[v]] = u as u32;
            wts[cursor[v]] = w;
            cursor[v] += 1;
        }
        Self {
            cloud,
            kind,
            resolution,
            factor: factor.clone(),
            offsets,
            targets,
            weights: wts,
            ranking,
        }
    }

    /// Copy with one directed half of the first edge at `u` shifted by
    /// `delta`, breaking weight symmetry. Hook for negative controls.
    #[doc(hidden)]
    pub fn with_corrupted_weight(&self, u: usize, delta: f64) -> Self {
        let mut g = self.clone();
        let s = g.offsets[u];
        if s < g.offsets[u + 1] {
            g.weights[s] += delta;
        }
        g
    }
}

fn check_factor_dim(cloud: &PointCloud, f: &ConformalFactor) -> Result<()> {
    f.check_dim(cloud.point(0))
}

/// `r`-ball graph: an edge between every pair at distance at most `r`.
pub fn build_ball_graph(
    cloud: impl Into<Arc<PointCloud>>,
    r: f64,
    f: &ConformalFactor,
    q: Resolution,
) -> Result<WeightedGraph> {
    let cloud = cloud.into();
    if !(r > 0.0) {
        return Err(invalid("r", format!("ball radius must be positive, got {r}")));
    }
    check_factor_dim(&cloud, f)?;
    let n = cloud.len();
    let pairs: Vec<(u32, u32)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = cloud.point(i);
            let cloud = &cloud;
            (i + 1..n)
                .filter(move |&j| dist(xi, cloud.point(j)) <= r)
                .map(move |j| (i as u32, j as u32))
        })
        .collect();
    Ok(WeightedGraph::assemble(cloud, GraphKind::Ball(r), q, f, pairs, None))
}

/// Orders candidates by distance, then by index.
#[inline]
fn rank_cmp(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `width` nearest points to `x` among `cloud`, skipping index `skip`.
fn nearest(cloud: &PointCloud, x: &[f64], skip: Option<usize>, width: usize) -> Vec<(f64, u32)> {
    let mut cand: Vec<(f64, u32)> = cloud
        .points()
        .enumerate()
        .filter(|&(j, _)| Some(j) != skip)
        .map(|(j, p)| (dist(x, p), j as u32))
        .collect();
    if width < cand.len() {
        cand.select_nth_unstable_by(width, rank_cmp);
        cand.truncate(width);
    }
    cand.sort_unstable_by(rank_cmp);
    cand
}

/// Symmetric (union) `k`-nearest-neighbor graph; equal distances rank the
/// smaller index first.
pub fn build_knn_graph(
    cloud: impl Into<Arc<PointCloud>>,
    k: usize,
    f: &ConformalFactor,
    q: Resolution,
) -> Result<WeightedGraph> {
    let cloud = cloud.into();
    let n = cloud.len();
    if k == 0 || k + 1 > n {
        return Err(invalid(
            "k",
            format!("must lie in [1, n-1 = {}], got {k}", n.saturating_sub(1)),
        ));
    }
    check_factor_dim(&cloud, f)?;
    // Two spare ranks: inserting both query endpoints displaces at most two.
    let width = (k + 2).min(n - 1);
    let rows: Vec<Vec<(f64, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest(&cloud, cloud.point(i), Some(i), width))
        .collect();
    let mut pairs: Vec<(u32, u32)> = rows
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row[..k].iter().map(move |&(_, j)| {
                let i = i as u32;
                (i.min(j), i.max(j))
            })
        })
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();
    let mut ranking = KnnRanking {
        width,
        idx: Vec::with_capacity(n * width),
        dist: Vec::with_capacity(n * width),
    };
    for row in rows {
        for (d, j) in row {
            ranking.idx.push(j);
            ranking.dist.push(d);
        }
    }
    Ok(WeightedGraph::assemble(
        cloud,
        GraphKind::Knn(k),
        q,
        f,
        pairs,
        Some(ranking),
    ))
}

/// Builds whichever graph `kind` names.
pub fn build_graph(
    cloud: impl Into<Arc<PointCloud>>,
    kind: GraphKind,
    f: &ConformalFactor,
    q: Resolution,
) -> Result<WeightedGraph> {
    match kind {
        GraphKind::Ball(r) => build_ball_graph(cloud, r, f, q),
        GraphKind::Knn(k) => build_knn_graph(cloud, k, f, q),
    }
}

/// Radii `(r_-, r_+)` of the ball graphs expected to enclose the `k`-NN
/// graph of `n` samples from a `d`-Ahlfors measure with constants
/// `(c_mu, big_c_mu)`.
pub fn sandwich_radii(k: usize, n: usize, eps: f64, c_mu: f64, big_c_mu: f64, d: usize) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps", format!("must lie in (0, 1), got {eps}")));
    }
    if n < 2 {
        return Err(invalid("n", format!("must be >= 2, got {n}")));
    }
    if k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    if !(c_mu > 0.0 && c_mu <= big_c_mu) {
        return Err(invalid(
            "c_mu",
            format!("need 0 < c_mu <= C_mu, got {c_mu} and {big_c_mu}"),
        ));
    }
    if d < 2 {
        return Err(invalid("d", format!("must be >= 2, got {d}")));
    }
    let kf = k as f64;
    let m = (n - 1) as f64;
    let inv_d = 1.0 / d as f64;
    let r_minus = ((1.0 - eps) * kf / (big_c_mu * m)).powf(inv_d);
    let r_plus = (kf / ((1.0 - eps) * c_mu * m)).powf(inv_d);
    Ok((r_minus, r_plus))
}

/// Upper bound `2 n exp(-eps^2 k / 2)` on the probability that the sandwich
/// fails. Values above one make the guarantee vacuous.
pub fn sandwich_failure_bound(n: usize, k: usize, eps: f64) -> f64 {
    2.0 * n as f64 * (-eps * eps * k as f64 / 2.0).exp()
}

/// True iff every edge of `a` is an edge of `b`.
pub fn is_subgraph(a: &WeightedGraph, b: &WeightedGraph) -> Result<bool> {
    if !Arc::ptr_eq(&a.cloud, &b.cloud) && a.cloud != b.cloud {
        return Err(Error::CloudMismatch);
    }
    Ok((0..a.vertex_count()).all(|v| {
        let row_b = &b.targets[b.offsets[v]..b.offsets[v + 1]];
        let mut it = row_b.iter().peekable();
        a.targets[a.offsets[v]..a.offsets[v + 1]].iter().all(|t| {
            while let Some(&&x) = it.peek() {
                if x < *t {
                    it.next();
                } else {
                    break;
                }
            }
            it.peek() == Some(&t)
        })
    }))
}

/// Read access to a weighted adjacency structure.
pub trait Adjacency {
    fn vertex_count(&self) -> usize;
    fn for_each_neighbor<F: FnMut(usize, f64)>(&self, v: usize, f: F);
}

impl Adjacency for WeightedGraph {
    fn vertex_count(&self) -> usize {
        WeightedGraph::vertex_count(self)
    }

    #[inline]
    fn for_each_neighbor<F: FnMut(usize, f64)>(&self, v: usize, mut f: F) {
        for (t, w) in self.neighbors(v) {
            f(t, w);
        }
    }
}

/// A graph over `X ∪ {endpoints}` expressed as a patch on a base graph
/// over `X`. New endpoints receive indices `n, n + 1, ...`.
#[derive(Debug)]
pub struct AugmentedGraph<'g> {
    base: &'g WeightedGraph,
    endpoint_ids: Vec<usize>,
    new_rows: Vec<Vec<(u32, f64)>>,
    added: HashMap<u32, Vec<(u32, f64)>>,
    removed: HashSet<(u32, u32)>,
    touched: HashSet<u32>,
}

impl<'g> AugmentedGraph<'g> {
    /// Vertex index of each endpoint passed to [`WeightedGraph::augment`].
    pub fn endpoint_ids(&self) -> &[usize] {
        &self.endpoint_ids
    }

    /// Undirected edges of the patched graph, `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for v in 0..Adjacency::vertex_count(self) {
            self.for_each_neighbor(v, |t, w| {
                if t > v {
                    out.push((v, t, w));
                }
            });
        }
        out.sort_by_key(|e| (e.0, e.1));
        out
    }
}

impl Adjacency for AugmentedGraph<'_> {
    fn vertex_count(&self) -> usize {
        self.base.vertex_count() + self.new_rows.len()
    }

    fn for_each_neighbor<F: FnMut(usize, f64)>(&self, v: usize, mut f: F) {
        let n = self.base.vertex_count();
        if v >= n {
            for &(t, w) in &self.new_rows[v - n] {
                f(t as usize, w);
            }
            return;
        }
        let key = v as u32;
        if self.touched.contains(&key) {
            for (t, w) in self.base.neighbors(v) {
                let e = (key.min(t as u32), key.max(t as u32));
                if !self.removed.contains(&e) {
                    f(t, w);
                }
            }
        } else {
            for (t, w) in self.base.neighbors(v) {
                f(t, w);
            }
        }
        if let Some(extra) = self.added.get(&key) {
            for &(t, w) in extra {
                f(t as usize, w);
            }
        }
    }
}

impl WeightedGraph {
    /// Inserts query endpoints into the graph. Endpoints bitwise equal to a
    /// cloud point, or to an earlier endpoint, reuse that vertex.
    ///
    /// Only rows touching the new vertices are recomputed. For kNN graphs a
    /// new vertex may also push an old neighbor out of some vertex's `k`
    /// nearest; those edges are dropped unless the reverse relation keeps
    /// them.
    pub fn augment(&self, endpoints: &[&[f64]]) -> Result<AugmentedGraph<'_>> {
        let n = self.vertex_count();
        let mut new_points: Vec<&[f64]> = Vec::new();
        let mut endpoint_ids = Vec::with_capacity(endpoints.len());
        for &p in endpoints {
            self.cloud.check_dim(p)?;
            self.factor.check_dim(p)?;
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite { point: n, axis: 0 });
            }
            let id = match self.cloud.position_of(p) {
                Some(i) => i,
                None => match new_points.iter().position(|q| *q == p) {
                    Some(j) => n + j,
                    None => {
                        new_points.push(p);
                        n + new_points.len() - 1
                    }
                },
            };
            endpoint_ids.push(id);
        }
        let point = |v: usize| -> &[f64] {
            if v < n {
                self.cloud.point(v)
            } else {
                new_points[v - n]
            }
        };
        let wt = |a: usize, b: usize| weight(&self.factor, self.resolution, point(a), point(b));

        let m = new_points.len();
        let mut new_adj: Vec<Vec<u32>> = vec![Vec::new(); m];
        let mut removed = HashSet::new();
        let mut touched = HashSet::new();

        match self.kind {
            GraphKind::Ball(r) => {
                for (a, &p) in new_points.iter().enumerate() {
                    for j in 0..n {
                        if dist(p, self.cloud.point(j)) <= r {
                            new_adj[a].push(j as u32);
                        }
                    }
                    for (b, &q) in new_points.iter().enumerate() {
                        if a != b && dist(p, q) <= r {
                            new_adj[a].push((n + b) as u32);
                        }
                    }
                }
            }
            GraphKind::Knn(k) => {
                let ranking = self.ranking.as_ref().expect("kNN graphs keep their ranking");
                // Candidates of a new vertex: all of X plus the other new points.
                for (a, &p) in new_points.iter().enumerate() {
                    let mut cand: Vec<(f64, u32)> = (0..n)
                        .map(|j| (dist(p, self.cloud.point(j)), j as u32))
                        .chain(
                            new_points
                                .iter()
                                .enumerate()
                                .filter(|&(b, _)| b != a)
                                .map(|(b, q)| (dist(p, q), (n + b) as u32)),
                        )
                        .collect();
                    let kk = k.min(cand.len());
                    cand.sort_unstable_by(rank_cmp);
                    for &(_, j) in &cand[..kk] {
                        new_adj[a].push(j);
                        if (j as usize) >= n {
                            new_adj[j as usize - n].push((n + a) as u32);
                        }
                    }
                }
                // Existing vertices whose k nearest now include a new point.
                let mut new_lists: HashMap<u32, Vec<u32>> = HashMap::new();
                for j in 0..n {
                    let (idx, dst) = ranking.row(j);
                    let kth = dst[k - 1];
                    let entering: Vec<(f64, u32)> = new_points
                        .iter()
                        .enumerate()
                        .map(|(a, p)| (dist(self.cloud.point(j), p), (n + a) as u32))
                        .filter(|&(d, _)| d < kth)
                        .collect();
                    if entering.is_empty() {
                        continue;
                    }
                    let mut merged: Vec<(f64, u32)> =
                        dst.iter().copied().zip(idx.iter().copied()).chain(entering).collect();
                    merged.sort_unstable_by(rank_cmp);
                    merged.truncate(k);
                    for &(_, t) in &merged {
                        if (t as usize) >= n {
                            new_adj[t as usize - n].push(j as u32);
                        }
                    }
                    new_lists.insert(j as u32, merged.into_iter().map(|(_, t)| t).collect());
                }
                let in_knn = |owner: u32, member: u32| -> bool {
                    match new_lists.get(&owner) {
                        Some(list) => list.contains(&member),
                        None => ranking.row(owner as usize).0[..k].contains(&member),
                    }
                };
                for (&j, list) in &new_lists {
                    for &m_old in &ranking.row(j as usize).0[..k] {
                        if !list.contains(&m_old) && !in_knn(m_old, j) {
                            removed.insert((j.min(m_old), j.max(m_old)));
                            touched.insert(j);
                            touched.insert(m_old);
                        }
                    }
                }
            }
        }

        let mut added: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
        let mut new_rows = Vec::with_capacity(m);
        for (a, mut adj) in new_adj.into_iter().enumerate() {
            adj.sort_unstable();
            adj.dedup();
            let va = n + a;
            let row: Vec<(u32, f64)> = adj.iter().map(|&t| (t, wt(va, t as usize))).collect();
            for &(t, w) in &row {
                if (t as usize) < n {
                    added.entry(t).or_default().push((va as u32, w));
                }
            }
            new_rows.push(row);
        }
        Ok(AugmentedGraph {
            base: self,
            endpoint_ids,
            new_rows,
            added,
            removed,
            touched,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{perturb_factor, ConformalFactor};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one() -> ConformalFactor {
        ConformalFactor::constant(1.0).unwrap()
    }

    fn line(points: &[f64]) -> Arc<PointCloud> {
        let pts: Vec<[f64; 1]> = points.iter().map(|&p| [p]).collect();
        Arc::new(PointCloud::from_points(&pts).unwrap())
    }

    fn uniform_square(n: usize, seed: u64) -> Arc<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        Arc::new(PointCloud::from_points(&pts).unwrap())
    }

    fn edge_set(g: &WeightedGraph) -> Vec<(usize, usize)> {
        g.edges().map(|(u, v, _)| (u, v)).collect()
    }

    /// Midpoint rule on a fine grid, independent of the library quadrature.
    fn fine_integral(f: &ConformalFactor, x: &[f64], y: &[f64]) -> f64 {
        let m = 200_000;
        let len = dist(x, y);
        let mut acc = 0.0;
        for i in 0..m {
            let t = (i as f64 + 0.5) / m as f64;
            let p: Vec<f64> = x.iter().zip(y).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            acc += f.value(&p);
        }
        len * acc / m as f64
    }

    #[test]
    fn weight_examples() {
        // f(x) = 1, f(y) = 3, ||x - y|| = 2.
        let f = ConformalFactor::radial_affine(1.0, 0, 1.0, 0.5).unwrap();
        let w = edge_weight(&f, Resolution::Finite(2), &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(w, 4.0);

        let f = ConformalFactor::radial_affine(0.0, 0, 1.0, 1e-3).unwrap();
        let (x, y) = ([0.0, 0.0], [1.0, 0.0]);
        let oracle = fine_integral(&f, &x, &y);
        assert_relative_eq!(oracle, 0.5, max_relative = 1e-9);
        assert_relative_eq!(
            edge_weight(&f, Resolution::Finite(3), &x, &y).unwrap(),
            0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            edge_weight(&f, Resolution::Infinite, &x, &y).unwrap(),
            oracle,
            max_relative = 1e-9
        );

        let c = ConformalFactor::constant(1.7).unwrap();
        for q in [Resolution::Finite(2), Resolution::Finite(7), Resolution::Infinite] {
            let w = edge_weight(&c, q, &[0.0, 0.0], &[3.0, 4.0]).unwrap();
            assert_relative_eq!(w, 1.7 * 5.0, max_relative = 1e-15);
        }
        assert!(edge_weight(&c, Resolution::Finite(2), &[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn infinite_resolution_on_nonaffine_factor() {
        let f = ConformalFactor::density_power(
            crate::factor::Density::Distance {
                center: vec![-1.0, 0.3],
            },
            1.0,
            1.0,
            0.2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let y = [rng.random::<f64>(), rng.random::<f64>()];
            let w = edge_weight(&f, Resolution::Infinite, &x, &y).unwrap();
            assert_relative_eq!(w, fine_integral(&f, &x, &y), max_relative = 1e-9);
        }
    }

    #[test]
    fn resolution_parsing() {
        assert_eq!("inf".parse::<Resolution>().unwrap(), Resolution::Infinite);
        assert_eq!("5".parse::<Resolution>().unwrap(), Resolution::Finite(5));
        assert!("1".parse::<Resolution>().is_err());
        assert!("x".parse::<Resolution>().is_err());
        let json = serde_json::to_string(&[Resolution::Finite(3), Resolution::Infinite]).unwrap();
        assert_eq!(json, r#"[3,"inf"]"#);
        let back: Vec<Resolution> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Resolution::Finite(3), Resolution::Infinite]);
    }

    #[test]
    fn ball_examples() {
        let g = build_ball_graph(line(&[0.0, 1.0, 2.5]), 1.5, &one(), Resolution::Finite(2)).unwrap();
        assert_eq!(edge_set(&g), vec![(0, 1), (1, 2)]);
        let g = build_ball_graph(line(&[0.0, 1.0, 2.5, 0.2]), 10.0, &one(), Resolution::Finite(2)).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert!(build_ball_graph(line(&[0.0]), 0.0, &one(), Resolution::Finite(2)).is_err());
    }

    #[test]
    fn ball_matches_double_loop() {
        let cloud = uniform_square(100, 1);
        let g = build_ball_graph(Arc::clone(&cloud), 0.2, &one(), Resolution::Finite(2)).unwrap();
        let mut expected = Vec::new();
        for i in 0..100 {
            for j in i + 1..100 {
                let p = cloud.point(i);
                let q = cloud.point(j);
                if ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= 0.2 {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(edge_set(&g), expected);
    }

    #[test]
    fn knn_examples() {
        let g = build_knn_graph(line(&[0.0, 1.0, 3.0]), 1, &one(), Resolution::Finite(2)).unwrap();
        assert_eq!(edge_set(&g), vec![(0, 1), (1, 2)]);
        let g = build_knn_graph(line(&[0.0, 1.0, 3.0, 7.0]), 3, &one(), Resolution::Finite(2)).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert!(build_knn_graph(line(&[0.0, 1.0]), 2, &one(), Resolution::Finite(2)).is_err());
        assert!(build_knn_graph(line(&[0.0, 1.0]), 0, &one(), Resolution::Finite(2)).is_err());
    }

    #[test]
    fn knn_ties_break_by_index() {
        // Vertex 1 is equidistant from 0 and 2: with k = 1 it picks 0.
        let g = build_knn_graph(line(&[0.0, 1.0, 2.0, 10.0]), 1, &one(), Resolution::Finite(2)).unwrap();
        assert_eq!(edge_set(&g), vec![(0, 1), (1, 2), (2, 3)]);
    }

    fn knn_sort_oracle(cloud: &PointCloud, k: usize) -> Vec<(usize, usize)> {
        let n = cloud.len();
        let mut set = std::collections::BTreeSet::new();
        for i in 0..n {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist(cloud.point(i), cloud.point(j)), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, j) in &all[..k] {
                set.insert((i.min(j), i.max(j)));
            }
        }
        set.into_iter().collect()
    }

    #[test]
    fn knn_matches_sort_oracle() {
        let cloud = uniform_square(100, 2);
        let g = build_knn_graph(Arc::clone(&cloud), 5, &one(), Resolution::Finite(2)).unwrap();
        assert_eq!(edge_set(&g), knn_sort_oracle(&cloud, 5));
        // Grid points: many exact ties.
        let pts: Vec<[f64; 2]> = (0..49).map(|i| [(i % 7) as f64, (i / 7) as f64]).collect();
        let grid = Arc::new(PointCloud::from_points(&pts).unwrap());
        for k in [1, 2, 3, 4, 5, 8] {
            let g = build_knn_graph(Arc::clone(&grid), k, &one(), Resolution::Finite(2)).unwrap();
            assert_eq!(edge_set(&g), knn_sort_oracle(&grid, k), "k = {k}");
        }
    }

    #[test]
    fn graph_invariants() {
        let cloud = uniform_square(150, 3);
        let f = ConformalFactor::radial_affine(2.0, 1, -0.5, 1.5).unwrap();
        for g in [
            build_ball_graph(Arc::clone(&cloud), 0.15, &f, Resolution::Finite(4)).unwrap(),
            build_knn_graph(Arc::clone(&cloud), 6, &f, Resolution::Infinite).unwrap(),
        ] {
            for u in 0..g.vertex_count() {
                let row: Vec<_> = g.neighbors(u).collect();
                assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
                for (v, w) in row {
                    assert_ne!(u, v);
                    let back = g.neighbors(v).find(|&(t, _)| t == u).unwrap();
                    assert_eq!(back.1, w);
                    assert!(w >= f.f_min() * dist(cloud.point(u), cloud.point(v)));
                }
            }
        }
    }

    #[test]
    fn duplicate_points_have_zero_weight_edges() {
        let g = build_ball_graph(line(&[0.0, 0.0, 1.0]), 0.5, &one(), Resolution::Finite(3)).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1, 0.0)]);
    }

    #[test]
    fn sandwich_examples() {
        let (lo, hi) = sandwich_radii(100, 10001, 0.5, 1.0, 1.0, 2).unwrap();
        assert_relative_eq!(lo, 0.005f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(hi, 0.02f64.sqrt(), max_relative = 1e-14);
        let (lo, hi) = sandwich_radii(50, 1001, 1e-12, 2.0, 2.0, 3).unwrap();
        assert_relative_eq!(lo, hi, max_relative = 1e-11);
        assert_relative_eq!(lo, (50.0f64 / 2000.0).powf(1.0 / 3.0), max_relative = 1e-11);
        let b = sandwich_failure_bound(1000, 400, 0.5);
        assert_relative_eq!(b, 2000.0 * (-50.0f64).exp(), max_relative = 1e-14);
        assert!((b - 3.857e-19).abs() < 1e-21);
        assert!(sandwich_radii(1, 10, 1.0, 1.0, 1.0, 2).is_err());
        assert!(sandwich_radii(1, 10, 0.5, 2.0, 1.0, 2).is_err());
        assert!(sandwich_radii(1, 1, 0.5, 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn subgraph_checks() {
        let cloud = uniform_square(80, 4);
        let small = build_ball_graph(Arc::clone(&cloud), 0.1, &one(), Resolution::Finite(2)).unwrap();
        let big = build_ball_graph(Arc::clone(&cloud), 0.2, &one(), Resolution::Finite(2)).unwrap();
        assert!(is_subgraph(&small, &small).unwrap());
        assert!(is_subgraph(&small, &big).unwrap());
        assert!(!is_subgraph(&big, &small).unwrap());
        let other = build_ball_graph(uniform_square(80, 5), 0.2, &one(), Resolution::Finite(2)).unwrap();
        assert!(matches!(is_subgraph(&small, &other), Err(Error::CloudMismatch)));
        let k3 = build_knn_graph(Arc::clone(&cloud), 3, &one(), Resolution::Finite(2)).unwrap();
        let k6 = build_knn_graph(Arc::clone(&cloud), 6, &one(), Resolution::Finite(2)).unwrap();
        assert!(is_subgraph(&k3, &k6).unwrap());
    }

    #[test]
    fn jsonl_dump() {
        let g = build_ball_graph(line(&[0.0, 1.0, 2.5]), 1.5, &one(), Resolution::Finite(2)).unwrap();
        let mut buf = Vec::new();
        g.write_edges_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"u\":0,\"v\":1,\"w\":1.0}\n{\"u\":1,\"v\":2,\"w\":1.5}\n"
        );
    }

    /// Full rebuild over `X ∪ {endpoints}` is the reference for augmentation.
    fn rebuilt_edges(g: &WeightedGraph, endpoints: &[&[f64]]) -> Vec<(usize, usize, f64)> {
        let mut extra: Vec<&[f64]> = Vec::new();
        for &p in endpoints {
            if g.cloud().position_of(p).is_none() && !extra.contains(&p) {
                extra.push(p);
            }
        }
        let cloud = g.cloud().with_appended(&extra).unwrap();
        build_graph(cloud, g.kind(), g.factor(), g.resolution())
            .unwrap()
            .edges()
            .collect()
    }

    #[test]
    fn augmentation_matches_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = ConformalFactor::radial_affine(2.0, 0, 1.0, 1.0).unwrap();
        for trial in 0..40 {
            let cloud = uniform_square(60, 100 + trial);
            let kind = if trial % 2 == 0 {
                GraphKind::Knn(1 + (trial as usize % 7))
            } else {
                GraphKind::Ball(0.1 + 0.02 * (trial % 5) as f64)
            };
            let g = build_graph(Arc::clone(&cloud), kind, &f, Resolution::Finite(3)).unwrap();
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let y = [rng.random::<f64>(), rng.random::<f64>()];
            let inside = cloud.point(trial as usize % 60).to_vec();
            for ends in [
                vec![&x[..], &y[..]],
                vec![&x[..], &inside[..]],
                vec![&inside[..], &inside[..]],
                vec![&x[..], &x[..]],
            ] {
                let aug = g.augment(&ends).unwrap();
                assert_eq!(aug.edges(), rebuilt_edges(&g, &ends), "trial {trial}, kind {kind:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn weight_symmetry_and_bounds(
            x in prop::array::uniform2(-1.0f64..1.0),
            y in prop::array::uniform2(-1.0f64..1.0),
            q in 2u32..12,
        ) {
            let f = ConformalFactor::radial_affine(2.0, 0, 1.0, 1.0).unwrap();
            let g = ConformalFactor::density_power(
                crate::factor::Density::Distance { center: vec![-3.0, 0.0] }, 1.0, 0.25, 0.2).unwrap();
            for h in [&f, &g] {
                for res in [Resolution::Finite(q), Resolution::Infinite] {
                    let w = weight(h, res, &x, &y);
                    prop_assert_eq!(w, weight(h, res, &y, &x));
                    let d = dist(&x, &y);
                    prop_assert!(w >= h.f_min() * d);
                }
                // Upper bound by the largest sampled value along the segment.
                let res = Resolution::Finite(q);
                let mut fmax = f64::MIN;
                for k in 1..=q {
                    let t = (k - 1) as f64 / (q - 1) as f64;
                    let p = [(1.0 - t) * x[0] + t * y[0], (1.0 - t) * x[1] + t * y[1]];
                    fmax = fmax.max(h.value(&p));
                }
                prop_assert!(weight(h, res, &x, &y) <= fmax * dist(&x, &y) * (1.0 + 1e-12));
            }
        }

        #[test]
        fn weight_endpoint_lipschitz(
            x in prop::array::uniform2(-1.0f64..1.0),
            y in prop::array::uniform2(-1.0f64..1.0),
            x2 in prop::array::uniform2(-1.0f64..1.0),
            y2 in prop::array::uniform2(-1.0f64..1.0),
            q in 2u32..10,
        ) {
            let f = ConformalFactor::density_power(
                crate::factor::Density::Distance { center: vec![-3.0, 0.0] }, 1.0, 0.25, 0.2).unwrap();
            let (d1, d2) = (dist(&x, &y), dist(&x2, &y2));
            prop_assume!(d1 > 1e-9 && d2 > 1e-9);
            for res in [Resolution::Finite(q), Resolution::Infinite] {
                let lhs = (weight(&f, res, &x, &y) / d1 - weight(&f, res, &x2, &y2) / d2).abs();
                let rhs = f.kappa() * (dist(&x, &x2) + dist(&y, &y2)) / 2.0;
                prop_assert!(lhs <= rhs + 1e-12);
            }
        }

        #[test]
        fn weight_factor_lipschitz_and_resolution_gap(
            x in prop::array::uniform2(-1.0f64..1.0),
            y in prop::array::uniform2(-1.0f64..1.0),
            eta in 0.0f64..0.5,
            q in 2u32..20,
        ) {
            let f = ConformalFactor::radial_affine(2.0, 0, 1.0, 1.0).unwrap();
            let g = perturb_factor(&f, eta).unwrap();
            let d = dist(&x, &y);
            for res in [Resolution::Finite(q), Resolution::Infinite] {
                let diff = (weight(&f, res, &x, &y) - weight(&g, res, &x, &y)).abs();
                prop_assert!(diff <= d * eta * (1.0 + 1e-12) + 1e-15);
            }
            let gap = (weight(&f, Resolution::Finite(q), &x, &y) - weight(&f, Resolution::Infinite, &x, &y)).abs();
            prop_assert!(gap <= f.kappa() * d * d / (4.0 * (q - 1) as f64) + 1e-14);
        }

        #[test]
        fn thresholds_are_monotone(seed in 0u64..1000, r in 0.05f64..0.3, k in 1usize..8) {
            let cloud = uniform_square(40, seed);
            let f = one();
            let a = build_ball_graph(Arc::clone(&cloud), r, &f, Resolution::Finite(2)).unwrap();
            let b = build_ball_graph(Arc::clone(&cloud), r * 1.3, &f, Resolution::Finite(2)).unwrap();
            prop_assert!(is_subgraph(&a, &b).unwrap());
            let a = build_knn_graph(Arc::clone(&cloud), k, &f, Resolution::Finite(2)).unwrap();
            let b = build_knn_graph(Arc::clone(&cloud), k + 1, &f, Resolution::Finite(2)).unwrap();
            prop_assert!(is_subgraph(&a, &b).unwrap());
        }
    }

    #[test]
    fn resolution_gap_nonaffine() {
        // The resolution-gap lemma holds for any Lipschitz factor; check it
        // where the trapezoid is not exact.
        let f = ConformalFactor::density_power(
            crate::factor::Density::Distance {
                center: vec![-0.5, 0.5],
            },
            1.0,
            4.0,
            0.6,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..500 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let y = [rng.random::<f64>(), rng.random::<f64>()];
            let d = dist(&x, &y);
            let exact = weight(&f, Resolution::Infinite, &x, &y);
            for q in [2u32, 3, 5, 9] {
                let gap = (weight(&f, Resolution::Finite(q), &x, &y) - exact).abs();
                assert!(gap <= f.kappa() * d * d / (4.0 * (q - 1) as f64) + 1e-12);
            }
        }
    }
}
