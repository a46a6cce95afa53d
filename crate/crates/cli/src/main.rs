use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use conformetric::domains::DomainModel;
use conformetric::estimator::Rule;
use conformetric::experiments::{
    cmd_carved_cube, cmd_convergence, cmd_estimate, cmd_graph_equiv, cmd_hausdorff, write_convergence_table,
    CarvedCubeConfig, CloudSource, ConvergenceConfig, EstimateConfig, GraphEquivConfig, HausdorffConfig, PairSpec,
    ParamChoice, REFERENCE_NET_SIZE,
};
use conformetric::selftest::{run_selftest, SelftestHooks};
use conformetric::{ConformalFactor, FactorConfig, GraphKind, Resolution};
use serde::Serialize;

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

/// Conformal geodesic distance estimation on point clouds.
#[derive(Parser)]
#[command(name = "conformetric", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate distances between pairs of points of a cloud.
    Estimate(EstimateArgs),
    /// Loss against n on a synthetic domain, with a log-log slope fit.
    Convergence(ConvergenceArgs),
    /// Frequency of the ball/kNN/ball sandwich over random samples.
    GraphEquiv(GraphEquivArgs),
    /// Analytic carved-cube distances and a Monte Carlo volume estimate.
    CarvedCube(CarvedCubeArgs),
    /// Empirical Hausdorff moments against their bounds.
    Hausdorff(HausdorffArgs),
    /// Run the built-in property suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FactorArg {
    /// Factor config: a JSON file, or inline JSON starting with `{`.
    /// Defaults to the constant 1.
    #[arg(long)]
    factor: Option<String>,
}

#[derive(Args)]
struct ParamArgs {
    /// Parameter rule: knn_default, ball_rate1 or ball_rate2.
    #[arg(long, conflicts_with_all = ["r", "k"])]
    rule: Option<Rule>,
    /// Ball radius.
    #[arg(long, conflicts_with = "k")]
    r: Option<f64>,
    /// Neighbors per vertex.
    #[arg(long)]
    k: Option<usize>,
    /// Samples per edge (integer >= 2, or `inf`).
    #[arg(long, conflicts_with = "rule")]
    q: Option<Resolution>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, conflicts_with = "domain", required_unless_present = "domain")]
    input: Option<PathBuf>,
    /// circle, sphere, segment or square. With --input, enables scoring
    /// against the analytic truth.
    #[arg(long)]
    domain: Option<String>,
    /// Sample size when sampling the domain.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[command(flatten)]
    factor: FactorArg,
    #[command(flatten)]
    params: ParamArgs,
    /// `all`, `random:N`, or a CSV file of `i,j` lines.
    #[arg(long, default_value = "random:1000")]
    pairs: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long)]
    domain: String,
    #[command(flatten)]
    factor: FactorArg,
    #[command(flatten)]
    params: ParamArgs,
    /// Comma-separated, strictly increasing sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000,8000")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Random pairs per trial.
    #[arg(long, default_value_t = 2000)]
    pair_budget: usize,
    /// Extra pairs from the reference net per trial.
    #[arg(long, default_value_t = 100)]
    net_pairs: usize,
    /// Also write an `n mean se` table for log-log plots.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GraphEquivArgs {
    #[arg(long, default_value = "square")]
    domain: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 400)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Directory for the trial-0 edge lists (JSON lines).
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CarvedCubeArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Cube side length.
    #[arg(long, default_value_t = 1.0)]
    l: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct HausdorffArgs {
    #[arg(long, default_value = "circle")]
    domain: String,
    #[arg(long, value_delimiter = ',', default_value = "200,1000")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Also write the reference net as CSV.
    #[arg(long)]
    export_net: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SelftestArgs {
    /// Corrupt one edge weight; the run must then fail.
    #[arg(long, hide = true)]
    inject_weight_asymmetry: bool,
    #[command(flatten)]
    common: Common,
}

fn load_factor(arg: &FactorArg) -> anyhow::Result<ConformalFactor> {
    let Some(spec) = &arg.factor else {
        return Ok(ConformalFactor::constant(1.0)?);
    };
    let (text, base) = if spec.trim_start().starts_with('{') {
        (spec.clone(), PathBuf::from("."))
    } else {
        let path = Path::new(spec);
        let text = fs::read_to_string(path).map_err(|source| conformetric::Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        (text, path.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    Ok(FactorConfig::from_json(&text)?.build(&base)?)
}

fn param_choice(p: &ParamArgs) -> anyhow::Result<ParamChoice> {
    let q = p.q.unwrap_or(Resolution::Finite(2));
    match (p.rule, p.r, p.k) {
        (Some(Rule::Manual), ..) => bail!("`--rule manual` is spelled `--r` or `--k` plus `--q`"),
        (Some(rule), ..) => Ok(ParamChoice::Rule(rule)),
        (None, Some(r), None) => Ok(ParamChoice::Manual {
            kind: GraphKind::Ball(r),
            q,
        }),
        (None, None, Some(k)) => Ok(ParamChoice::Manual {
            kind: GraphKind::Knn(k),
            q,
        }),
        (None, None, None) if p.q.is_none() => Ok(ParamChoice::Rule(Rule::KnnDefault)),
        _ => bail!("`--q` needs `--r` or `--k`"),
    }
}

fn domain(name: &str) -> anyhow::Result<DomainModel> {
    Ok(DomainModel::by_name(name)?)
}

fn emit<T: Serialize>(report: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Runs a subcommand; `Ok(false)` means a reported check failed.
fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Estimate(a) => {
            let dom = a.domain.as_deref().map(domain).transpose()?;
            let source = match &a.input {
                Some(p) => CloudSource::Csv(p.clone()),
                None => CloudSource::Domain { n: a.n },
            };
            let cfg = EstimateConfig {
                source,
                domain: dom,
                factor: load_factor(&a.factor)?,
                params: param_choice(&a.params)?,
                pairs: a.pairs.parse::<PairSpec>()?,
                seed: a.common.seed,
            };
            let rep = cmd_estimate(&cfg)?;
            log::info!(
                "{} pairs over {} points, {} edges",
                rep.pairs.len(),
                rep.n,
                rep.edge_count
            );
            emit(&rep, a.common.out.as_deref())?;
            Ok(true)
        }
        Command::Convergence(a) => {
            let cfg = ConvergenceConfig {
                domain: domain(&a.domain)?,
                factor: load_factor(&a.factor)?,
                params: param_choice(&a.params)?,
                n_grid: a.n_grid,
                trials: a.trials,
                seed: a.common.seed,
                pair_budget: a.pair_budget,
                net_pairs: a.net_pairs,
            };
            let rep = cmd_convergence(&cfg)?;
            if let Some(path) = &a.table {
                let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                write_convergence_table(&rep, io::BufWriter::new(file))?;
            }
            emit(&rep, a.common.out.as_deref())?;
            Ok(rep.within_tolerance != Some(false))
        }
        Command::GraphEquiv(a) => {
            let cfg = GraphEquivConfig {
                domain: domain(&a.domain)?,
                n: a.n,
                k: a.k,
                eps: a.eps,
                trials: a.trials,
                seed: a.common.seed,
                dump_dir: a.dump_dir,
            };
            let rep = cmd_graph_equiv(&cfg)?;
            emit(&rep, a.common.out.as_deref())?;
            Ok(rep.consistent)
        }
        Command::CarvedCube(a) => {
            let rep = cmd_carved_cube(&CarvedCubeConfig {
                d: a.d,
                l: a.l,
                tau: a.tau,
                epsilon: a.eps,
                samples: a.samples,
                seed: a.common.seed,
            })?;
            emit(&rep, a.common.out.as_deref())?;
            Ok(rep.distortion_holds && rep.tv_bound_holds)
        }
        Command::Hausdorff(a) => {
            let dom = domain(&a.domain)?;
            if let Some(path) = &a.export_net {
                dom.reference_net(REFERENCE_NET_SIZE).save_csv(path)?;
            }
            let rep = cmd_hausdorff(&HausdorffConfig {
                domain: dom,
                n_grid: a.n_grid,
                trials: a.trials,
                seed: a.common.seed,
            })?;
            emit(&rep, a.common.out.as_deref())?;
            Ok(rep.all_within_bounds)
        }
        Command::Selftest(a) => {
            let hooks = SelftestHooks {
                inject_weight_asymmetry: a.inject_weight_asymmetry,
            };
            let rep = run_selftest(a.common.seed, hooks)?;
            for s in &rep.suites {
                log::info!("{}: {}/{} violations", s.name, s.violations, s.checked);
            }
            emit(&rep, a.common.out.as_deref())?;
            Ok(rep.passed)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<conformetric::Error>() {
            return match e {
                conformetric::Error::Io { .. } | conformetric::Error::Parse { .. } | conformetric::Error::Json(_) => {
                    EXIT_IO
                }
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("conformetric: check failed (see report)");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(e) => {
            // Library errors already embed their cause; skip repeats.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("conformetric: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
