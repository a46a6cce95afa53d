//! Built-in property suites, runnable from the CLI without the test harness.
//!
//! Every suite draws from `trial_rng(seed, suite_index)` and reports counts
//! only (no timings), so the report is byte-identical across runs.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::domains::{arc_angle_check, trial_rng};
use crate::error::Result;
use crate::estimator::{check_trig_inequalities, estimate_pairs};
use crate::factor::{perturb_factor, ConformalFactor, Density};
use crate::geometry::{dist, PointCloud};
use crate::graph::{build_ball_graph, build_knn_graph, weight, Resolution, WeightedGraph};
use crate::shortest_path::dijkstra;

/// Fault injection for negative controls.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestHooks {
    /// Shift one directed edge weight so the adjacency is no longer symmetric.
    pub inject_weight_asymmetry: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checked: usize,
    pub violations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

#[derive(Default)]
struct Tally {
    checked: usize,
    violations: usize,
}

impl Tally {
    fn check(&mut self, ok: bool) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
        }
    }

    fn finish(self, name: &'static str) -> SuiteResult {
        SuiteResult {
            name,
            checked: self.checked,
            violations: self.violations,
            passed: self.violations == 0 && self.checked > 0,
        }
    }
}

fn random_cloud(rng: &mut impl Rng, n: usize, dim: usize) -> Arc<PointCloud> {
    let coords = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    Arc::new(PointCloud::from_flat(dim, coords).expect("finite coordinates"))
}

fn trig_suite() -> SuiteResult {
    let rep = check_trig_inequalities(20_000);
    SuiteResult {
        name: "trig_inequalities",
        checked: rep.checked,
        violations: rep.violations,
        passed: rep.violations == 0,
    }
}

fn weight_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = trial_rng(seed, 1);
    let factors = [
        ConformalFactor::radial_affine(2.0, 0, 1.0, 1.0)?,
        ConformalFactor::density_power(
            Density::Distance {
                center: vec![-0.5, 0.5],
            },
            1.0,
            4.0,
            0.6,
        )?,
    ];
    let mut t = Tally::default();
    let pt = |rng: &mut _| [Rng::random::<f64>(rng), Rng::random::<f64>(rng)];
    for _ in 0..1000 {
        let (x, y, x2, y2) = (pt(&mut rng), pt(&mut rng), pt(&mut rng), pt(&mut rng));
        let u = rng.random::<f64>();
        let q = rng.random_range(2..16u32);
        let (d, d2) = (dist(&x, &y), dist(&x2, &y2));
        for f in &factors {
            let eta = u * f.f_min() / 2.0;
            let g = perturb_factor(f, eta)?;
            let exact = weight(f, Resolution::Infinite, &x, &y);
            for res in [Resolution::Finite(q), Resolution::Infinite] {
                let w = weight(f, res, &x, &y);
                t.check(w == weight(f, res, &y, &x));
                t.check(w >= f.f_min() * d * (1.0 - 1e-12));
                // Endpoint Lipschitz bound on the averaged factor.
                let lhs = (w / d - weight(f, res, &x2, &y2) / d2).abs();
                t.check(lhs <= f.kappa() * (dist(&x, &x2) + dist(&y, &y2)) / 2.0 + 1e-12);
                // Lipschitz in the factor under the sup norm.
                t.check((w - weight(&g, res, &x, &y)).abs() <= d * eta * (1.0 + 1e-12) + 1e-15);
            }
            let gap = (weight(f, Resolution::Finite(q), &x, &y) - exact).abs();
            t.check(gap <= f.kappa() * d * d / (4.0 * (q - 1) as f64) + 1e-12);
        }
    }
    Ok(t.finish("weight_lemmas"))
}

fn symmetry_suite(seed: u64, hooks: SelftestHooks) -> Result<SuiteResult> {
    let mut rng = trial_rng(seed, 2);
    let f = ConformalFactor::radial_affine(2.0, 1, -1.0, 1.0)?;
    let mut t = Tally::default();
    for round in 0..5 {
        let cloud = random_cloud(&mut rng, 200, 2);
        let mut g = build_ball_graph(Arc::clone(&cloud), 0.15, &f, Resolution::Finite(3))?;
        if hooks.inject_weight_asymmetry && round == 0 {
            let u = (0..g.vertex_count()).find(|&u| g.degree(u) > 0).unwrap_or(0);
            g = g.with_corrupted_weight(u, 1e-3);
        }
        for u in 0..g.vertex_count() {
            for (v, w) in g.neighbors(u) {
                t.check(g.neighbors(v).any(|(b, wb)| b == u && wb == w));
            }
        }
    }
    Ok(t.finish("adjacency_symmetry"))
}

fn floyd_warshall(g: &WeightedGraph) -> Vec<Vec<f64>> {
    let n = g.vertex_count();
    let mut m = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (u, v, w) in g.edges() {
        m[u][v] = m[u][v].min(w);
        m[v][u] = m[v][u].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = m[i][k] + m[k][j];
                if via < m[i][j] {
                    m[i][j] = via;
                }
            }
        }
    }
    m
}

fn dijkstra_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = trial_rng(seed, 3);
    let f = ConformalFactor::radial_affine(1.0, 0, 2.0, 1.0)?;
    let mut t = Tally::default();
    for _ in 0..30 {
        let cloud = random_cloud(&mut rng, 50, 2);
        let r = 0.1 + 0.2 * rng.random::<f64>();
        let g = build_ball_graph(cloud, r, &f, Resolution::Finite(2))?;
        let fw = floyd_warshall(&g);
        for (s, row) in fw.iter().enumerate() {
            let d = dijkstra(&g, s)?;
            for (a, b) in d.iter().zip(row) {
                t.check(if b.is_infinite() {
                    a.is_infinite()
                } else {
                    (a - b).abs() <= 1e-12 * b.max(1.0)
                });
            }
        }
    }
    Ok(t.finish("dijkstra_vs_floyd_warshall"))
}

fn metric_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = trial_rng(seed, 4);
    let f = ConformalFactor::density_power(
        Density::Distance {
            center: vec![-0.5, 0.5],
        },
        1.0,
        4.0,
        0.6,
    )?;
    let mut t = Tally::default();
    for round in 0..8 {
        let cloud = random_cloud(&mut rng, 60, 2);
        let g = if round % 2 == 0 {
            build_ball_graph(cloud, 0.3, &f, Resolution::Finite(4))?
        } else {
            build_knn_graph(cloud, 6, &f, Resolution::Finite(4))?
        };
        let n = g.vertex_count();
        let ordered: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let flat = estimate_pairs(&g, &ordered)?;
        let m: Vec<&[f64]> = flat.chunks(n).collect();
        for i in 0..n {
            t.check(m[i][i] == 0.0);
            for j in 0..n {
                t.check(m[i][j] == m[j][i]);
                for k in 0..n {
                    let rhs = m[i][k] + m[k][j];
                    t.check(m[i][j] <= rhs + 1e-12 * rhs);
                }
            }
        }
    }
    Ok(t.finish("metric_axioms"))
}

fn arc_suite() -> Result<SuiteResult> {
    let mut t = Tally::default();
    for tau in [0.1, 1.0, 7.5] {
        for i in 1..=200 {
            let delta = 0.5 * std::f64::consts::PI * tau * i as f64 / 200.0;
            let rep = arc_angle_check(delta, tau)?;
            t.check(rep.holds);
            // Equality on the circle.
            t.check((rep.angle - rep.angle_bound).abs() <= 1e-12 * rep.angle_bound.max(1.0));
        }
    }
    Ok(t.finish("arc_angle"))
}

fn edge_oracle_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = trial_rng(seed, 5);
    let f = ConformalFactor::constant(1.0)?;
    let mut t = Tally::default();
    for _ in 0..10 {
        let n = 80;
        let cloud = random_cloud(&mut rng, n, 3);
        let r = 0.2 + 0.3 * rng.random::<f64>();
        let k = rng.random_range(1..10usize);
        let ball = build_ball_graph(Arc::clone(&cloud), r, &f, Resolution::Finite(2))?;
        let knn = build_knn_graph(Arc::clone(&cloud), k, &f, Resolution::Finite(2))?;
        // kNN by full sort with index tie-break; union of both directions.
        let mut near = vec![vec![false; n]; n];
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                dist(cloud.point(i), cloud.point(a))
                    .total_cmp(&dist(cloud.point(i), cloud.point(b)))
                    .then(a.cmp(&b))
            });
            for &j in &order[..k] {
                near[i][j] = true;
                near[j][i] = true;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                t.check(ball.has_edge(i, j) == (dist(cloud.point(i), cloud.point(j)) <= r));
                t.check(knn.has_edge(i, j) == near[i][j]);
            }
        }
    }
    Ok(t.finish("edge_set_oracles"))
}

/// Runs every suite. Failures are reported, not returned as errors.
pub fn run_selftest(seed: u64, hooks: SelftestHooks) -> Result<SelftestReport> {
    let suites = vec![
        trig_suite(),
        weight_suite(seed)?,
        symmetry_suite(seed, hooks)?,
        dijkstra_suite(seed)?,
        metric_suite(seed)?,
        arc_suite()?,
        edge_oracle_suite(seed)?,
    ];
    Ok(SelftestReport {
        seed,
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}
