//! Graph estimator of the conformal metric: parameter rules, error budgets
//! and multiplicative losses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::factor::ConformalFactor;
use crate::geometry::PointCloud;
use crate::graph::{build_graph, GraphKind, Resolution, WeightedGraph};
use crate::shortest_path::dijkstra;

/// How the graph parameters were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Manual,
    /// Ball graph with `q` growing as `r` shrinks; rate `(log n / n)^(1/d)`.
    BallRate1,
    /// Ball graph with `q = 2`; rate `(log n / n)^(2/(3d))`.
    BallRate2,
    /// kNN graph with `k = ceil(sqrt(n ln n))`, `q = ceil(n^(1/4))`.
    KnnDefault,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Manual => "manual",
            Rule::BallRate1 => "ball_rate1",
            Rule::BallRate2 => "ball_rate2",
            Rule::KnnDefault => "knn_default",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "manual" => Ok(Rule::Manual),
            "ball_rate1" => Ok(Rule::BallRate1),
            "ball_rate2" => Ok(Rule::BallRate2),
            "knn_default" => Ok(Rule::KnnDefault),
            other => Err(invalid("rule", format!("unknown rule `{other}`"))),
        }
    }
}

/// Graph parameters together with where they came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorParams {
    pub kind: GraphKind,
    pub q: Resolution,
    pub rule: Rule,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub l_mu: Option<f64>,
    #[serde(serialize_with = "crate::json::opt_num")]
    pub t_mf: Option<f64>,
    /// Set when a rule output had to be clamped (r to `t_mf`, k to `n - 1`,
    /// q up to 2).
    pub clamped: bool,
    pub warnings: Vec<String>,
}

impl EstimatorParams {
    pub fn manual(kind: GraphKind, q: Resolution) -> Self {
        Self {
            kind,
            q,
            rule: Rule::Manual,
            n: None,
            d: None,
            l_mu: None,
            t_mf: None,
            clamped: false,
            warnings: Vec::new(),
        }
    }
}

/// Applies a parameter rule. `l_mu` and `t_mf` are only read by the ball
/// rules; the kNN rule depends on `n` alone.
pub fn select_params(rule: Rule, n: usize, d: usize, l_mu: f64, t_mf: f64) -> Result<EstimatorParams> {
    if n < 2 {
        return Err(invalid("n", format!("need at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(invalid("d", "intrinsic dimension must be >= 1"));
    }
    let mut warnings = Vec::new();
    if d == 1 {
        warnings.push("intrinsic dimension 1 is outside the d >= 2 regime of the rate results".to_string());
    }
    let nf = n as f64;
    let log_ratio = nf.ln() / nf;
    let df = d as f64;
    let mut clamped = false;
    let (kind, q) = match rule {
        Rule::Manual => return Err(invalid("rule", "manual parameters are not selected by a rule")),
        Rule::BallRate1 | Rule::BallRate2 => {
            if !(l_mu > 0.0 && l_mu.is_finite()) {
                return Err(invalid("l_mu", format!("must be positive and finite, got {l_mu}")));
            }
            if !(t_mf > 0.0 && t_mf.is_finite()) {
                return Err(invalid(
                    "t_mf",
                    format!("ball rules need a finite conformal reach, got {t_mf}"),
                ));
            }
            let raw = if rule == Rule::BallRate1 {
                8.0 * (l_mu * t_mf).sqrt() * log_ratio.powf(1.0 / (2.0 * df))
            } else {
                8.0 * l_mu.powf(2.0 / 3.0) * t_mf.powf(1.0 / 3.0) * log_ratio.powf(2.0 / (3.0 * df))
            };
            let r = if raw > t_mf {
                clamped = true;
                t_mf
            } else {
                raw
            };
            let q = if rule == Rule::BallRate1 {
                (1.0 + 4.0 * t_mf / r).ceil() as u32
            } else {
                2
            };
            (GraphKind::Ball(r), Resolution::Finite(q))
        }
        Rule::KnnDefault => {
            let raw = (nf * nf.ln()).sqrt().ceil() as usize;
            let k = if raw > n - 1 {
                clamped = true;
                n - 1
            } else {
                raw.max(1)
            };
            let raw_q = nf.powf(0.25).ceil() as u32;
            let q = if raw_q < 2 {
                clamped = true;
                2
            } else {
                raw_q
            };
            (GraphKind::Knn(k), Resolution::Finite(q))
        }
    };
    if clamped {
        log::debug!("{rule} parameters clamped at n = {n}");
    }
    Ok(EstimatorParams {
        kind,
        q,
        rule,
        n: Some(n),
        d: Some(d),
        l_mu: (rule != Rule::KnnDefault).then_some(l_mu),
        t_mf: (rule != Rule::KnnDefault).then_some(t_mf),
        clamped,
        warnings,
    })
}

/// Relative distortion bound of a single edge weight against the conformal
/// distance of its endpoints.
pub fn delta_q_bound(dist: f64, q: Resolution, kappa: f64, f_min: f64, t_mf: f64) -> f64 {
    let first = if kappa == 0.0 {
        0.0
    } else {
        kappa / (4.0 * f_min) * dist * q.inverse_gap()
    };
    first + dist * dist / (16.0 * t_mf * t_mf)
}

/// Loss budget for ball graphs and whether its preconditions
/// `4 rho <= r <= t_mf` hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub value: f64,
    pub feasible: bool,
}

pub fn theorem_error_budget(r: f64, q: Resolution, t_mf: f64, rho: f64) -> Budget {
    let value = r / (32.0 * t_mf) * q.inverse_gap() + r * r / (8.0 * t_mf * t_mf) + 56.0 * rho * rho / (r * r);
    Budget {
        value,
        feasible: 4.0 * rho <= r && r <= t_mf,
    }
}

/// Estimates for the requested index pairs from a prebuilt graph, one
/// Dijkstra run per distinct source.
///
/// Each pair is answered from its smaller index, so `(i, j)` and `(j, i)`
/// produce bitwise identical values.
pub fn estimate_pairs(graph: &WeightedGraph, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = graph.vertex_count();
    for &(i, j) in pairs {
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::InvalidIndex { index: idx, n });
            }
        }
    }
    let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (slot, &(i, j)) in pairs.iter().enumerate() {
        by_source.entry(i.min(j)).or_default().push(slot);
    }
    let groups: Vec<(usize, Vec<usize>)> = by_source.into_iter().collect();
    let answered: Vec<Vec<(usize, f64)>> = groups
        .par_iter()
        .map(|(s, slots)| {
            let dist = dijkstra(graph, *s).expect("index validated");
            slots
                .iter()
                .map(|&slot| {
                    let (i, j) = pairs[slot];
                    (slot, dist[i.max(j)])
                })
                .collect()
        })
        .collect();
    let mut out = vec![0.0; pairs.len()];
    for (slot, v) in answered.into_iter().flatten() {
        out[slot] = v;
    }
    Ok(out)
}

/// Builds the graph described by `params` and estimates the given pairs.
pub fn estimate_matrix(
    cloud: impl Into<Arc<PointCloud>>,
    params: &EstimatorParams,
    f: &ConformalFactor,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let g = build_graph(cloud, params.kind, f, params.q)?;
    estimate_pairs(&g, pairs)
}

/// Worst-case multiplicative errors over a pair set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    /// `max |D' - D| / max(D', D)`, in `[0, 1]`.
    pub ell_inf: f64,
    /// `max |1 - D' / D|`, possibly infinite.
    #[serde(serialize_with = "crate::json::num")]
    pub l_inf: f64,
    pub pair_count: usize,
    /// Position in the input of the pair attaining `ell_inf`.
    pub worst_index: Option<usize>,
    /// The attaining index pair, when pairs were supplied.
    pub worst_pair: Option<(usize, usize)>,
}

/// Losses of `estimates` against positive `truths`. An infinite estimate
/// contributes 1 and `+inf` respectively.
pub fn loss(estimates: &[f64], truths: &[f64]) -> Result<LossReport> {
    if estimates.len() != truths.len() {
        return Err(invalid(
            "estimates",
            format!("{} estimates for {} truths", estimates.len(), truths.len()),
        ));
    }
    let mut ell_inf: f64 = 0.0;
    let mut l_inf: f64 = 0.0;
    let mut worst = None;
    for (idx, (&e, &t)) in estimates.iter().zip(truths).enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(
                "truths",
                format!("truth #{idx} must be positive and finite, got {t}"),
            ));
        }
        if e.is_nan() || e < 0.0 {
            return Err(invalid("estimates", format!("estimate #{idx} is {e}")));
        }
        let (ell, l) = if e.is_infinite() {
            (1.0, f64::INFINITY)
        } else {
            ((e - t).abs() / e.max(t), (1.0 - e / t).abs())
        };
        if ell > ell_inf || worst.is_none() {
            ell_inf = ell_inf.max(ell);
            worst = Some(idx);
        }
        l_inf = l_inf.max(l);
    }
    Ok(LossReport {
        ell_inf,
        l_inf,
        pair_count: estimates.len(),
        worst_index: worst,
        worst_pair: None,
    })
}

/// [`loss`] with the attaining pair filled in.
pub fn loss_for_pairs(pairs: &[(usize, usize)], estimates: &[f64], truths: &[f64]) -> Result<LossReport> {
    if pairs.len() != estimates.len() {
        return Err(invalid(
            "pairs",
            format!("{} pairs for {} estimates", pairs.len(), estimates.len()),
        ));
    }
    let mut report = loss(estimates, truths)?;
    report.worst_pair = report.worst_index.map(|i| pairs[i]);
    Ok(report)
}

/// Upper bounds on `arcsin(t) - t` valid for `0 < t <= 1/2`.
pub fn arcsin_gap_upper_bounds(t: f64) -> [f64; 4] {
    let a = t.asin();
    let pi = std::f64::consts::PI;
    [
        a.powi(3) / 6.0,
        4.0 * (1.0 - 3.0 / pi) * a * t * t,
        4.0 * (pi / 3.0 - 1.0) * t.powi(3),
        ((2.0 * t).asin() - 2.0 * t) / 8.0,
    ]
}

/// Chain of lower bounds `arcsin(t) t^2 / 6 >= t^3 / 6` valid on `[0, 1]`.
pub fn arcsin_gap_lower_bounds(t: f64) -> [f64; 2] {
    [t.asin() * t * t / 6.0, t.powi(3) / 6.0]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrigReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `bound - gap` shortfall seen (non-positive when all pass).
    pub worst_excess: f64,
}

/// Evaluates the arcsin bounds on `grid` equally spaced points of
/// `(0, 1/2]` (upper) and `[0, 1]` (lower).
///
/// Two of the upper bounds meet `arcsin(t) - t` exactly at `t = 1/2`, so a
/// few ulps of slack are allowed.
pub fn check_trig_inequalities(grid: usize) -> TrigReport {
    let mut rep = TrigReport {
        worst_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    let slack = |scale: f64| 8.0 * f64::EPSILON * scale;
    let record = |excess: f64, tol: f64, rep: &mut TrigReport| {
        rep.checked += 1;
        rep.worst_excess = rep.worst_excess.max(excess);
        if excess > tol {
            rep.violations += 1;
        }
    };
    for i in 1..=grid {
        let t = 0.5 * i as f64 / grid as f64;
        let gap = t.asin() - t;
        for b in arcsin_gap_upper_bounds(t) {
            record(gap - b, slack(t), &mut rep);
        }
    }
    for i in 0..=grid {
        let t = i as f64 / grid as f64;
        let gap = t.asin() - t;
        let [lo1, lo2] = arcsin_gap_lower_bounds(t);
        record(lo1 - gap, slack(t), &mut rep);
        record(lo2 - lo1, slack(t), &mut rep);
    }
    rep
}
