//! Experiment drivers behind the CLI subcommands. Every driver is a pure
//! function of its config (including the seed) and returns a serializable
//! report; the CLI only parses flags and writes JSON.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domains::{
    carved_cube_fixture, hausdorff_tail_check, trial_rng, CarvedCubeFixture, DomainModel, HausdorffTail,
};
use crate::error::{invalid, Error, Result};
use crate::estimator::{
    estimate_pairs, loss_for_pairs, select_params, theorem_error_budget, EstimatorParams, LossReport, Rule,
};
use crate::factor::ConformalFactor;
use crate::geometry::{dist_sq, hausdorff_distance, PointCloud};
use crate::graph::{
    build_ball_graph, build_graph, build_knn_graph, is_subgraph, sandwich_failure_bound, sandwich_radii, GraphKind,
    Resolution, WeightedGraph,
};

/// Size of the reference net used to measure the Hausdorff distance.
pub const REFERENCE_NET_SIZE: usize = 10_000;

/// Which index pairs to estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSpec {
    /// Every pair `i < j`.
    All,
    /// About `N` random pairs drawn from `ceil(sqrt(N))` random sources, so
    /// the cost is `sqrt(N)` Dijkstra runs.
    Random(usize),
    /// A CSV file of `i,j` lines.
    File(PathBuf),
}

impl FromStr for PairSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(PairSpec::All);
        }
        if let Some(count) = s.strip_prefix("random:") {
            let count: usize = count
                .parse()
                .map_err(|_| invalid("pairs", format!("bad pair count in `{s}`")))?;
            if count == 0 {
                return Err(invalid("pairs", "random pair count must be positive"));
            }
            return Ok(PairSpec::Random(count));
        }
        Ok(PairSpec::File(PathBuf::from(s)))
    }
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn random_pairs<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    if count >= n * (n - 1) / 2 {
        return all_pairs(n);
    }
    let sources = ((count as f64).sqrt().ceil() as usize).min(n);
    let chosen = sample_indices(rng, n, sources).into_vec();
    let mut pairs = Vec::with_capacity(count);
    for (slot, &s) in chosen.iter().enumerate() {
        let share = count / sources + usize::from(slot < count % sources);
        for _ in 0..share {
            let mut t = rng.random_range(0..n - 1);
            if t >= s {
                t += 1;
            }
            pairs.push((s, t));
        }
    }
    pairs
}

fn read_pairs(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno as u64 + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(parse_err(format!("expected `i,j`, got `{line}`")));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(format!("`{s}` is not a vertex index")))
                .and_then(|i| {
                    if i < n {
                        Ok(i)
                    } else {
                        Err(parse_err(format!("index {i} out of range for {n} points")))
                    }
                })
        };
        pairs.push((idx(fields[0])?, idx(fields[1])?));
    }
    Ok(pairs)
}

/// Resolves a pair spec against a cloud of `n` points.
pub fn select_pairs(spec: &PairSpec, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    match spec {
        PairSpec::All => Ok(all_pairs(n)),
        // Stream 1 keeps pair draws independent of the stream-0 sampler.
        PairSpec::Random(count) => Ok(random_pairs(n, *count, &mut trial_rng(seed, 1))),
        PairSpec::File(path) => read_pairs(path, n),
    }
}

/// Graph parameters: a rule or explicit values.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamChoice {
    Rule(Rule),
    Manual { kind: GraphKind, q: Resolution },
}

/// Where the point cloud comes from.
#[derive(Debug, Clone)]
pub enum CloudSource {
    Csv(PathBuf),
    /// Sample `n` points of the domain with the config seed.
    Domain {
        n: usize,
    },
}

#[derive(Debug, Clone)]
pub struct EstimateConfig {
    pub source: CloudSource,
    /// Truth oracle and constants for the rules; required for
    /// `CloudSource::Domain`, optional for CSV input.
    pub domain: Option<DomainModel>,
    pub factor: ConformalFactor,
    pub params: ParamChoice,
    pub pairs: PairSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub rho: f64,
    #[serde(serialize_with = "crate::json::num")]
    pub t_mf: f64,
    #[serde(serialize_with = "crate::json::num")]
    pub value: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub source: String,
    pub domain: Option<&'static str>,
    pub n: usize,
    pub seed: u64,
    pub factor: String,
    pub kappa: f64,
    pub f_min: f64,
    pub params: EstimatorParams,
    pub edge_count: usize,
    pub pairs: Vec<(usize, usize)>,
    #[serde(serialize_with = "crate::json::nums")]
    pub estimates: Vec<f64>,
    /// `null` where no oracle exists for the pair.
    #[serde(serialize_with = "crate::json::opt_nums")]
    pub truths: Vec<Option<f64>>,
    pub loss: Option<LossReport>,
    pub ell_inf: Option<f64>,
    #[serde(serialize_with = "crate::json::opt_num")]
    pub l_inf: Option<f64>,
    pub budget: Option<BudgetReport>,
    /// Full distance matrix, emitted for `--pairs all` on small clouds.
    #[serde(serialize_with = "crate::json::opt_matrix")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

/// Largest cloud for which `--pairs all` also emits the square matrix.
pub const MATRIX_LIMIT: usize = 2000;

fn resolve_params(
    choice: &ParamChoice,
    n: usize,
    domain: Option<&DomainModel>,
    f: &ConformalFactor,
) -> Result<EstimatorParams> {
    match choice {
        ParamChoice::Manual { kind, q } => Ok(EstimatorParams::manual(*kind, *q)),
        ParamChoice::Rule(Rule::Manual) => Err(invalid("rule", "`manual` needs explicit --r/--k and --q")),
        ParamChoice::Rule(Rule::KnnDefault) => {
            // The kNN rule is dimension free; d only feeds a warning.
            let d = domain.map_or(2, |m| m.intrinsic_dim);
            select_params(Rule::KnnDefault, n, d, 1.0, 1.0)
        }
        ParamChoice::Rule(rule) => {
            let m =
                domain.ok_or_else(|| invalid("rule", format!("{rule} needs a domain for d, L_mu and the reach")))?;
            select_params(*rule, n, m.intrinsic_dim, m.l_mu, m.conformal_reach(f))
        }
    }
}

/// Truth for each pair (None where the domain has no oracle or the pair is
/// degenerate), plus the loss over the pairs that have one.
fn score(
    domain: &DomainModel,
    cloud: &PointCloud,
    f: &ConformalFactor,
    pairs: &[(usize, usize)],
    estimates: &[f64],
) -> Result<(Vec<Option<f64>>, Option<LossReport>)> {
    let mut cache: HashMap<(usize, usize), Option<f64>> = HashMap::new();
    let mut truths = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let key = (i.min(j), i.max(j));
        let t = match cache.get(&key) {
            Some(t) => *t,
            None => {
                let t = match domain.truth(cloud.point(i), cloud.point(j), f) {
                    Ok(t) if t > 0.0 => Some(t),
                    Ok(_) | Err(Error::NoOracle(_)) => None,
                    Err(e) => return Err(e),
                };
                cache.insert(key, t);
                t
            }
        };
        truths.push(t);
    }
    let keep: Vec<usize> = (0..pairs.len()).filter(|&k| truths[k].is_some()).collect();
    if keep.is_empty() {
        return Ok((truths, None));
    }
    let p: Vec<_> = keep.iter().map(|&k| pairs[k]).collect();
    let e: Vec<_> = keep.iter().map(|&k| estimates[k]).collect();
    let t: Vec<_> = keep.iter().map(|&k| truths[k].unwrap()).collect();
    Ok((truths, Some(loss_for_pairs(&p, &e, &t)?)))
}

fn ball_budget(
    domain: &DomainModel,
    cloud: &PointCloud,
    params: &EstimatorParams,
    f: &ConformalFactor,
) -> Result<Option<BudgetReport>> {
    let GraphKind::Ball(r) = params.kind else {
        return Ok(None);
    };
    let net = domain.reference_net(REFERENCE_NET_SIZE);
    let rho = hausdorff_distance(&net, cloud)?;
    let t_mf = domain.conformal_reach(f);
    let b = theorem_error_budget(r, params.q, t_mf, rho);
    Ok(Some(BudgetReport {
        rho,
        t_mf,
        value: b.value,
        feasible: b.feasible,
    }))
}

pub fn cmd_estimate(cfg: &EstimateConfig) -> Result<EstimateReport> {
    let (cloud, source) = match &cfg.source {
        CloudSource::Csv(path) => (PointCloud::load_csv(path)?, path.display().to_string()),
        CloudSource::Domain { n } => {
            let dom = cfg
                .domain
                .as_ref()
                .ok_or_else(|| invalid("domain", "sampling needs a domain"))?;
            (
                dom.sample(cfg.seed, *n),
                format!("{} (n = {n}, seed = {})", dom.name(), cfg.seed),
            )
        }
    };
    let cloud = Arc::new(cloud);
    let n = cloud.len();
    let params = resolve_params(&cfg.params, n, cfg.domain.as_ref(), &cfg.factor)?;
    let graph = build_graph(Arc::clone(&cloud), params.kind, &cfg.factor, params.q)?;
    let pairs = select_pairs(&cfg.pairs, n, cfg.seed)?;
    let estimates = estimate_pairs(&graph, &pairs)?;

    let (truths, loss, budget) = match &cfg.domain {
        Some(dom) => {
            if let Some(p) = cloud.points().position(|p| !dom.contains(p)) {
                return Err(invalid(
                    "input",
                    format!("point {p} does not lie on the {}", dom.name()),
                ));
            }
            let (truths, loss) = score(dom, &cloud, &cfg.factor, &pairs, &estimates)?;
            (truths, loss, ball_budget(dom, &cloud, &params, &cfg.factor)?)
        }
        None => (vec![None; pairs.len()], None, None),
    };

    let matrix = (cfg.pairs == PairSpec::All && n <= MATRIX_LIMIT).then(|| {
        let mut m = vec![vec![0.0; n]; n];
        for (&(i, j), &e) in pairs.iter().zip(&estimates) {
            m[i][j] = e;
            m[j][i] = e;
        }
        m
    });

    Ok(EstimateReport {
        source,
        domain: cfg.domain.as_ref().map(|d| d.name()),
        n,
        seed: cfg.seed,
        factor: cfg.factor.kind_name().to_string(),
        kappa: cfg.factor.kappa(),
        f_min: cfg.factor.f_min(),
        edge_count: graph.edge_count(),
        ell_inf: loss.as_ref().map(|l| l.ell_inf),
        l_inf: loss.as_ref().map(|l| l.l_inf),
        loss,
        params,
        pairs,
        estimates,
        truths,
        budget,
        matrix,
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub domain: DomainModel,
    pub factor: ConformalFactor,
    pub params: ParamChoice,
    /// Strictly increasing sample sizes.
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Random sample pairs per trial.
    pub pair_budget: usize,
    /// Extra pairs from the reference net, snapped to their nearest samples.
    pub net_pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergencePoint {
    pub n: usize,
    pub params: EstimatorParams,
    pub clamped: bool,
    pub ell_inf: Vec<f64>,
    #[serde(serialize_with = "crate::json::nums")]
    pub l_inf: Vec<f64>,
    pub mean_ell_inf: f64,
    pub se_ell_inf: f64,
    #[serde(serialize_with = "crate::json::num")]
    pub mean_l_inf: f64,
    pub scored_pairs: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub domain: &'static str,
    pub factor: String,
    pub rule: Option<Rule>,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<ConvergencePoint>,
    /// Least squares on `(ln n, ln mean ell_inf)`; absent with fewer than two
    /// grid points.
    pub fit: Option<SlopeFit>,
    pub predicted_slope: Option<f64>,
    pub tolerance: f64,
    pub within_tolerance: Option<bool>,
    /// Soft check: means never increase by more than two standard errors.
    pub monotone_within_2se: bool,
}

pub const SLOPE_TOLERANCE: f64 = 0.15;

/// Least-squares line through `(x, y)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some(SlopeFit {
        slope,
        intercept: my - slope * mx,
    })
}

fn net_pairs(net: &PointCloud, cloud: &PointCloud, count: usize, seed: u64) -> Vec<(usize, usize)> {
    if count == 0 {
        return Vec::new();
    }
    let mut rng = trial_rng(seed, 2);
    let picks = sample_indices(&mut rng, net.len(), (2 * count).min(net.len())).into_vec();
    let nearest = |p: &[f64]| {
        (0..cloud.len())
            .min_by(|&a, &b| {
                dist_sq(p, cloud.point(a))
                    .total_cmp(&dist_sq(p, cloud.point(b)))
                    .then(a.cmp(&b))
            })
            .expect("non-empty cloud")
    };
    picks
        .chunks_exact(2)
        .map(|c| (nearest(net.point(c[0])), nearest(net.point(c[1]))))
        .filter(|(a, b)| a != b)
        .collect()
}

/// One `(n, trial)` cell: sample, build, estimate, score.
fn convergence_cell(
    cfg: &ConvergenceConfig,
    n: usize,
    trial: usize,
    net: &PointCloud,
) -> Result<(EstimatorParams, LossReport)> {
    let seed = cfg.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let cloud = Arc::new(cfg.domain.sample_with(&mut trial_rng(seed, 3 * trial as u64), n));
    let params = resolve_params(&cfg.params, n, Some(&cfg.domain), &cfg.factor)?;
    let graph = build_graph(Arc::clone(&cloud), params.kind, &cfg.factor, params.q)?;
    let mut pairs = random_pairs(n, cfg.pair_budget, &mut trial_rng(seed, 3 * trial as u64 + 1));
    pairs.extend(net_pairs(net, &cloud, cfg.net_pairs, seed.wrapping_add(trial as u64)));
    let estimates = estimate_pairs(&graph, &pairs)?;
    let (_, loss) = score(&cfg.domain, &cloud, &cfg.factor, &pairs, &estimates)?;
    let loss = loss.ok_or_else(|| Error::NoOracle(format!("no scorable pairs at n = {n}")))?;
    Ok((params, loss))
}

pub fn cmd_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("n_grid", "must be non-empty and strictly increasing"));
    }
    let net = cfg.domain.reference_net(REFERENCE_NET_SIZE);
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    let results: Vec<(EstimatorParams, LossReport)> = jobs
        .par_iter()
        .map(|&(n, t)| convergence_cell(cfg, n, t, &net))
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let cell = &results[g * cfg.trials..(g + 1) * cfg.trials];
        let ell: Vec<f64> = cell.iter().map(|(_, l)| l.ell_inf).collect();
        let l: Vec<f64> = cell.iter().map(|(_, l)| l.l_inf).collect();
        let t = cfg.trials as f64;
        let mean = ell.iter().sum::<f64>() / t;
        let se = if cfg.trials > 1 {
            (ell.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0) / t).sqrt()
        } else {
            0.0
        };
        let params = cell[0].0.clone();
        points.push(ConvergencePoint {
            n,
            clamped: cell.iter().any(|(p, _)| p.clamped),
            params,
            mean_ell_inf: mean,
            se_ell_inf: se,
            mean_l_inf: l.iter().sum::<f64>() / t,
            scored_pairs: cell.iter().map(|(_, l)| l.pair_count).collect(),
            ell_inf: ell,
            l_inf: l,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.mean_ell_inf > 0.0)
        .map(|p| ((p.n as f64).ln(), p.mean_ell_inf.ln()))
        .unzip();
    let fit = if xs.len() == points.len() {
        fit_line(&xs, &ys)
    } else {
        None
    };
    let d = cfg.domain.intrinsic_dim as f64;
    let rule = match cfg.params {
        ParamChoice::Rule(r) => Some(r),
        ParamChoice::Manual { .. } => None,
    };
    let predicted_slope = match rule {
        Some(Rule::KnnDefault) | Some(Rule::BallRate1) => Some(-1.0 / d),
        Some(Rule::BallRate2) => Some(-2.0 / (3.0 * d)),
        _ => None,
    };
    let within_tolerance = match (&fit, predicted_slope) {
        (Some(f), Some(p)) => Some((f.slope - p).abs() <= SLOPE_TOLERANCE),
        _ => None,
    };
    let monotone = points
        .windows(2)
        .all(|w| w[1].mean_ell_inf <= w[0].mean_ell_inf + 2.0 * w[0].se_ell_inf.max(w[1].se_ell_inf));
    Ok(ConvergenceReport {
        domain: cfg.domain.name(),
        factor: cfg.factor.kind_name().to_string(),
        rule,
        trials: cfg.trials,
        seed: cfg.seed,
        points,
        fit,
        predicted_slope,
        tolerance: SLOPE_TOLERANCE,
        within_tolerance,
        monotone_within_2se: monotone,
    })
}

/// Whitespace-separated table for log-log plots:
/// `n mean_ell_inf se_ell_inf mean_l_inf`.
pub fn write_convergence_table<W: Write>(report: &ConvergenceReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# n mean_ell_inf se_ell_inf mean_l_inf")?;
    for p in &report.points {
        writeln!(out, "{} {} {} {}", p.n, p.mean_ell_inf, p.se_ell_inf, p.mean_l_inf)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GraphEquivConfig {
    pub domain: DomainModel,
    pub n: usize,
    pub k: usize,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    /// Where to write the trial-0 edge lists (`ball_minus.jsonl`,
    /// `knn.jsonl`, `ball_plus.jsonl`).
    pub dump_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphEquivReport {
    pub domain: &'static str,
    pub n: usize,
    pub k: usize,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub lower_inclusions: usize,
    pub upper_inclusions: usize,
    pub both: usize,
    pub frequency: f64,
    /// `1 - 2 n exp(-eps^2 k / 2)`; may be negative (vacuous).
    pub predicted_min_frequency: f64,
    pub vacuous: bool,
    pub consistent: bool,
}

fn graph_triplet(
    cloud: Arc<PointCloud>,
    k: usize,
    r_minus: f64,
    r_plus: f64,
) -> Result<(WeightedGraph, WeightedGraph, WeightedGraph)> {
    let one = ConformalFactor::constant(1.0)?;
    let q = Resolution::Finite(2);
    Ok((
        build_ball_graph(Arc::clone(&cloud), r_minus, &one, q)?,
        build_knn_graph(Arc::clone(&cloud), k, &one, q)?,
        build_ball_graph(cloud, r_plus, &one, q)?,
    ))
}

pub fn cmd_graph_equiv(cfg: &GraphEquivConfig) -> Result<GraphEquivReport> {
    if cfg.trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    let dom = &cfg.domain;
    let (r_minus, r_plus) = sandwich_radii(cfg.k, cfg.n, cfg.eps, dom.c_mu, dom.big_c_mu, dom.intrinsic_dim)?;
    let outcomes: Vec<(bool, bool)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let cloud = Arc::new(dom.sample_with(&mut trial_rng(cfg.seed, t as u64), cfg.n));
            let (lo, knn, hi) = graph_triplet(cloud, cfg.k, r_minus, r_plus)?;
            if t == 0 {
                if let Some(dir) = &cfg.dump_dir {
                    for (name, g) in [("ball_minus", &lo), ("knn", &knn), ("ball_plus", &hi)] {
                        let path = dir.join(format!("{name}.jsonl"));
                        let io_err = |source| Error::Io {
                            path: path.clone(),
                            source,
                        };
                        let file = std::fs::File::create(&path).map_err(io_err)?;
                        g.write_edges_jsonl(std::io::BufWriter::new(file)).map_err(io_err)?;
                    }
                }
            }
            Ok((is_subgraph(&lo, &knn)?, is_subgraph(&knn, &hi)?))
        })
        .collect::<Result<_>>()?;
    let lower = outcomes.iter().filter(|o| o.0).count();
    let upper = outcomes.iter().filter(|o| o.1).count();
    let both = outcomes.iter().filter(|o| o.0 && o.1).count();
    let predicted = 1.0 - sandwich_failure_bound(cfg.n, cfg.k, cfg.eps);
    let frequency = both as f64 / cfg.trials as f64;
    Ok(GraphEquivReport {
        domain: dom.name(),
        n: cfg.n,
        k: cfg.k,
        eps: cfg.eps,
        trials: cfg.trials,
        seed: cfg.seed,
        r_minus,
        r_plus,
        lower_inclusions: lower,
        upper_inclusions: upper,
        both,
        frequency,
        predicted_min_frequency: predicted,
        vacuous: predicted <= 0.0,
        // With a non-vacuous bound this close to 1, any failure contradicts it.
        consistent: predicted <= 0.0 || frequency >= predicted || both + 1 > cfg.trials,
    })
}

#[derive(Debug, Clone)]
pub struct CarvedCubeConfig {
    pub d: usize,
    pub l: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CarvedCubeReport {
    pub fixture: CarvedCubeFixture,
    pub distortion_holds: bool,
    pub samples: usize,
    pub seed: u64,
    pub carved_fraction: f64,
    pub carved_fraction_se: f64,
    /// `carved_fraction - 3 se <= tv_upper_bound`.
    pub tv_bound_holds: bool,
}

pub fn cmd_carved_cube(cfg: &CarvedCubeConfig) -> Result<CarvedCubeReport> {
    let fixture = carved_cube_fixture(cfg.d, cfg.l, cfg.tau, cfg.epsilon)?;
    if cfg.samples == 0 {
        return Err(invalid("samples", "must be >= 1"));
    }
    let (frac, se) = fixture.carved_fraction_mc(cfg.samples, cfg.seed);
    Ok(CarvedCubeReport {
        distortion_holds: fixture.distortion >= fixture.distortion_lower_bound,
        tv_bound_holds: frac - 3.0 * se <= fixture.tv_upper_bound,
        fixture,
        samples: cfg.samples,
        seed: cfg.seed,
        carved_fraction: frac,
        carved_fraction_se: se,
    })
}

#[derive(Debug, Clone)]
pub struct HausdorffConfig {
    pub domain: DomainModel,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HausdorffReport {
    pub rows: Vec<HausdorffTail>,
    pub all_within_bounds: bool,
}

pub fn cmd_hausdorff(cfg: &HausdorffConfig) -> Result<HausdorffReport> {
    let rows: Vec<HausdorffTail> = cfg
        .n_grid
        .iter()
        .map(|&n| hausdorff_tail_check(&cfg.domain, n, cfg.trials, cfg.seed))
        .collect::<Result<_>>()?;
    Ok(HausdorffReport {
        all_within_bounds: rows.iter().all(|r| r.within_bounds.iter().all(|&b| b)),
        rows,
    })
}
