//! Synthetic domains with known reach, Ahlfors constants and exact
//! geodesic oracles, plus the carved-cube two-measure fixture.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::factor::{ConformalFactor, Density, FactorKind};
use crate::geometry::{dist, hausdorff_distance, PointCloud};
use crate::quadrature::gauss_kronrod;

/// Tolerance for "lies on the domain" checks.
const ON_DOMAIN_TOL: f64 = 1e-9;

/// Seeded generator for one trial: the seed picks the key, the trial index
/// picks the stream, so trials never share randomness.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    /// Unit circle in R^2.
    Circle,
    /// Unit sphere in R^3.
    Sphere,
    /// `[0, 1]` in R.
    Segment,
    /// `[0, 1]^2`.
    Square,
}

impl DomainKind {
    pub const ALL: [DomainKind; 4] = [
        DomainKind::Circle,
        DomainKind::Sphere,
        DomainKind::Segment,
        DomainKind::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Circle => "circle",
            DomainKind::Sphere => "sphere",
            DomainKind::Segment => "segment",
            DomainKind::Square => "square",
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DomainKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            invalid(
                "domain",
                format!("unknown domain `{s}` (circle, sphere, segment, square)"),
            )
        })
    }
}

/// A domain with its uniform measure.
///
/// Ahlfors constants bound the mass of Euclidean balls centered on the
/// domain: `c_mu r^d <= mu(B(x, r)) <= big_c_mu r^d` for radii up to the
/// diameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainModel {
    pub kind: DomainKind,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    /// Reach; `+inf` for convex sets.
    #[serde(serialize_with = "crate::json::num")]
    pub tau_m: f64,
    pub c_mu: f64,
    pub big_c_mu: f64,
    pub l_mu: f64,
}

impl DomainModel {
    pub fn new(kind: DomainKind) -> Self {
        let (ambient_dim, intrinsic_dim, tau_m, c_mu, big_c_mu) = match kind {
            // Ball mass 2 arcsin(r / 2) / pi lies in [r / pi, r / 2].
            DomainKind::Circle => (2, 1, 1.0, 1.0 / PI, 0.5),
            // Cap mass is exactly r^2 / 4.
            DomainKind::Sphere => (3, 2, 1.0, 0.25, 0.25),
            DomainKind::Segment => (1, 1, f64::INFINITY, 1.0, 2.0),
            // A corner quarter disk has area pi r^2 / 4 >= r^2 / 2 up to
            // r = sqrt(2); an interior disk has pi r^2.
            DomainKind::Square => (2, 2, f64::INFINITY, 0.5, PI),
        };
        Self {
            kind,
            ambient_dim,
            intrinsic_dim,
            tau_m,
            c_mu,
            big_c_mu,
            l_mu: c_mu.powf(-1.0 / intrinsic_dim as f64),
        }
    }

    pub fn circle() -> Self {
        Self::new(DomainKind::Circle)
    }

    pub fn sphere() -> Self {
        Self::new(DomainKind::Sphere)
    }

    pub fn segment() -> Self {
        Self::new(DomainKind::Segment)
    }

    pub fn square() -> Self {
        Self::new(DomainKind::Square)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            DomainKind::Circle | DomainKind::Sphere => 2.0,
            DomainKind::Segment => 1.0,
            DomainKind::Square => 2f64.sqrt(),
        }
    }

    /// Draws one point of the uniform measure.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            DomainKind::Circle => {
                let th: f64 = rng.random::<f64>() * TAU;
                vec![th.cos(), th.sin()]
            }
            DomainKind::Sphere => loop {
                let v: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-12 {
                    break v.iter().map(|c| c / norm).collect();
                }
            },
            DomainKind::Segment => vec![rng.random()],
            DomainKind::Square => vec![rng.random(), rng.random()],
        }
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> PointCloud {
        let mut flat = Vec::with_capacity(n * self.ambient_dim);
        for _ in 0..n {
            flat.extend(self.draw(rng));
        }
        PointCloud::from_flat(self.ambient_dim, flat).expect("sampler output is finite")
    }

    /// `n` i.i.d. uniform points; a pure function of `(seed, n)`.
    pub fn sample(&self, seed: u64, n: usize) -> PointCloud {
        self.sample_with(&mut trial_rng(seed, 0), n)
    }

    /// Deterministic net of about `resolution` points.
    pub fn reference_net(&self, resolution: usize) -> PointCloud {
        let m = resolution.max(2);
        let pts: Vec<Vec<f64>> = match self.kind {
            DomainKind::Circle => (0..m)
                .map(|k| {
                    let th = TAU * k as f64 / m as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect(),
            DomainKind::Sphere => {
                // Fibonacci lattice.
                let golden = PI * (3.0 - 5f64.sqrt());
                (0..m)
                    .map(|k| {
                        let z = 1.0 - (2.0 * k as f64 + 1.0) / m as f64;
                        let rad = (1.0 - z * z).sqrt();
                        let th = golden * k as f64;
                        vec![rad * th.cos(), rad * th.sin(), z]
                    })
                    .collect()
            }
            DomainKind::Segment => (0..m).map(|k| vec![k as f64 / (m - 1) as f64]).collect(),
            DomainKind::Square => {
                let side = grid_side(m);
                let h = 1.0 / (side - 1) as f64;
                (0..side * side)
                    .map(|k| vec![(k % side) as f64 * h, (k / side) as f64 * h])
                    .collect()
            }
        };
        PointCloud::from_points(&pts).expect("net is finite")
    }

    /// Upper bound on the distance from any domain point to the net of the
    /// given resolution, when one is known in closed form.
    pub fn net_covering_radius(&self, resolution: usize) -> Option<f64> {
        let m = resolution.max(2);
        match self.kind {
            DomainKind::Circle => Some(2.0 * (PI / (2.0 * m as f64)).sin()),
            DomainKind::Sphere => None,
            DomainKind::Segment => Some(0.5 / (m - 1) as f64),
            DomainKind::Square => Some(std::f64::consts::FRAC_1_SQRT_2 / (grid_side(m) - 1) as f64),
        }
    }

    /// Whether `p` lies on the domain up to `ON_DOMAIN_TOL`.
    pub fn contains(&self, p: &[f64]) -> bool {
        if p.len() != self.ambient_dim {
            return false;
        }
        let t = ON_DOMAIN_TOL;
        match self.kind {
            DomainKind::Circle | DomainKind::Sphere => (p.iter().map(|c| c * c).sum::<f64>().sqrt() - 1.0).abs() <= t,
            DomainKind::Segment | DomainKind::Square => p.iter().all(|&c| (-t..=1.0 + t).contains(&c)),
        }
    }

    fn check_on_domain(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                found: p.len(),
            });
        }
        if !self.contains(p) {
            return Err(invalid("point", format!("{p:?} does not lie on the {}", self.name())));
        }
        Ok(())
    }

    /// Conformal reach bound for `f` on this domain.
    pub fn conformal_reach(&self, f: &ConformalFactor) -> f64 {
        crate::factor::conformal_reach_bound(self.tau_m, f.kappa(), f.f_min()).expect("domain reach is positive")
    }

    /// Exact conformal distance between two domain points.
    ///
    /// Available for: any factor on the circle and the segment; constant
    /// factors on the sphere and the square; the inverse-distance factor on
    /// the square when the connecting logarithmic spiral stays inside it.
    pub fn truth(&self, x: &[f64], y: &[f64], f: &ConformalFactor) -> Result<f64> {
        self.check_on_domain(x)?;
        self.check_on_domain(y)?;
        match self.kind {
            DomainKind::Circle => Ok(circle_truth(angle_of(x), angle_of(y), f)),
            DomainKind::Sphere => match f.as_constant() {
                Some(c) => Ok(c * sphere_truth(x, y)?),
                None => Err(Error::NoOracle(
                    "the sphere only has a truth oracle for constant factors".into(),
                )),
            },
            DomainKind::Segment => Ok(flat_truth(x, y, f)),
            DomainKind::Square => {
                if let Some(c) = f.as_constant() {
                    return Ok(c * dist(x, y));
                }
                if let Some(center) = inverse_distance_center(f) {
                    return log_spiral_truth(x, y, center, [0.0, 1.0])
                        .ok_or_else(|| Error::NoOracle("spiral geodesic leaves the square".into()));
                }
                Err(Error::NoOracle(format!(
                    "no square oracle for the {} factor",
                    f.kind_name()
                )))
            }
        }
    }
}

fn grid_side(m: usize) -> usize {
    ((m as f64).sqrt().ceil() as usize).max(2)
}

/// Angle of a point of the unit circle, in `[0, 2 pi)`.
pub fn angle_of(p: &[f64]) -> f64 {
    let a = p[1].atan2(p[0]);
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

/// Conformal distance on the unit circle: the cheaper of the two arcs, each
/// integrated by adaptive Gauss-Kronrod.
pub fn circle_truth(theta_x: f64, theta_y: f64, f: &ConformalFactor) -> f64 {
    let fwd = (theta_y - theta_x).rem_euclid(TAU);
    if fwd == 0.0 {
        return 0.0;
    }
    if let Some(c) = f.as_constant() {
        return c * fwd.min(TAU - fwd);
    }
    let along = |start: f64, len: f64| {
        let g = |s: f64| {
            let th = start + s;
            f.value(&[th.cos(), th.sin()])
        };
        let scale = len * (g(0.0).abs() + g(len).abs()).max(f.f_min());
        gauss_kronrod(&g, 0.0, len, 1e-13 * scale, 4096)
    };
    along(theta_x, fwd).min(along(theta_y, TAU - fwd))
}

/// Great-circle distance on the unit sphere.
pub fn sphere_truth(x: &[f64], y: &[f64]) -> Result<f64> {
    for p in [x, y] {
        if p.len() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: p.len(),
            });
        }
        let norm = p.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > ON_DOMAIN_TOL {
            return Err(invalid("point", format!("{p:?} is off the unit sphere (norm {norm})")));
        }
    }
    // atan2 of |x × y| and x·y is the arccos of the clamped inner product,
    // without its loss of precision for nearby points.
    let cross = [
        x[1] * y[2] - x[2] * y[1],
        x[2] * y[0] - x[0] * y[2],
        x[0] * y[1] - x[1] * y[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).clamp(-1.0, 1.0);
    Ok(sin.atan2(cos))
}

/// Conformal length of the straight segment `[x, y]`. This is the
/// distance whenever straight segments are geodesics (a segment domain, or
/// a convex domain with a constant factor).
pub fn flat_truth(x: &[f64], y: &[f64], f: &ConformalFactor) -> f64 {
    let len = dist(x, y);
    if len == 0.0 {
        return 0.0;
    }
    if let Some(c) = f.as_constant() {
        return c * len;
    }
    let g = |t: f64| {
        let p: Vec<f64> = x.iter().zip(y).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        f.value(&p)
    };
    let scale = (g(0.0).abs() + g(1.0).abs()).max(f.f_min());
    len * gauss_kronrod(&g, 0.0, 1.0, 1e-13 * scale, 4096)
}

/// Center `c` when `f(x) = 1 / ||x - c||` exactly.
fn inverse_distance_center(f: &ConformalFactor) -> Option<&[f64]> {
    match f.kind() {
        FactorKind::DensityPower {
            density: Density::Distance { center },
            beta,
        } if *beta == 1.0 && f.offset() == 0.0 && center.len() == 2 => Some(center),
        _ => None,
    }
}

/// Distance for `f(z) = 1 / |z - c|` in the plane minus `c`.
///
/// In log-polar coordinates `w = ln|z - c| + i arg(z - c)` the metric is
/// flat, so geodesics are logarithmic spirals and the distance is
/// `sqrt(ln(r_y / r_x)^2 + dtheta^2)`. Returns `None` when the spiral leaves
/// the box `[lo, hi]^2` (the constrained distance would then be larger).
pub fn log_spiral_truth(x: &[f64], y: &[f64], center: &[f64], bounds: [f64; 2]) -> Option<f64> {
    let (ax, ay) = (x[0] - center[0], x[1] - center[1]);
    let (bx, by) = (y[0] - center[0], y[1] - center[1]);
    let (rx, ry) = (ax.hypot(ay), bx.hypot(by));
    if rx == 0.0 || ry == 0.0 {
        return None;
    }
    let dlog = (ry / rx).ln();
    // Signed angle from a to b in (-pi, pi].
    let dth = (ax * by - ay * bx).atan2(ax * bx + ay * by);
    let th0 = ay.atan2(ax);
    let steps = 256;
    for i in 1..steps {
        let t = i as f64 / steps as f64;
        let r = rx * (t * dlog).exp();
        let th = th0 + t * dth;
        let p = [center[0] + r * th.cos(), center[1] + r * th.sin()];
        if p.iter().any(|&c| c < bounds[0] - 1e-12 || c > bounds[1] + 1e-12) {
            return None;
        }
    }
    Some(dlog.hypot(dth))
}

/// The carving construction: a cube whose edge is carved by a ball of
/// radius `tau`, lengthening the distance between two edge points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarvedCubeFixture {
    pub d: usize,
    pub l: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub alpha: f64,
    /// Carving ball center `(0, t, ..., t)`.
    pub center: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pre_distance: f64,
    pub post_distance: f64,
    pub distortion: f64,
    pub distortion_lower_bound: f64,
    pub tv_upper_bound: f64,
}

pub const CARVE_ALPHA: f64 = 0.25;

pub fn carved_cube_fixture(d: usize, l: f64, tau: f64, epsilon: f64) -> Result<CarvedCubeFixture> {
    let alpha = CARVE_ALPHA;
    if d < 2 {
        return Err(invalid("d", format!("must be >= 2, got {d}")));
    }
    if !(l > 0.0 && l.is_finite() && tau > 0.0 && tau.is_finite()) {
        return Err(invalid("L", "L and tau must be positive and finite"));
    }
    if !(epsilon > 0.0 && epsilon <= (alpha * l).min(tau)) {
        return Err(invalid(
            "epsilon",
            format!(
                "must lie in (0, min(alpha L, tau) = {}], got {epsilon}",
                (alpha * l).min(tau)
            ),
        ));
    }
    let a = alpha * l;
    let delta = (tau * tau - epsilon * epsilon).sqrt();
    let t = a + delta / ((d - 1) as f64).sqrt();
    let mut center = vec![t; d];
    center[0] = 0.0;
    let mut x = vec![a; d];
    let mut y = vec![a; d];
    x[0] = -epsilon;
    y[0] = epsilon;
    let s = (epsilon / tau).asin();
    let df = d as f64;
    let beta = 2.0 * alpha.powf(-df) * ((d - 1) as f64).powf(-(df - 1.0) / 2.0);
    Ok(CarvedCubeFixture {
        d,
        l,
        tau,
        epsilon,
        alpha,
        center,
        x,
        y,
        pre_distance: 2.0 * epsilon,
        post_distance: 2.0 * tau * s,
        distortion: (s - epsilon / tau) / s,
        distortion_lower_bound: epsilon * epsilon / (6.0 * tau * tau),
        tv_upper_bound: beta * epsilon.powf(2.0 * df - 1.0) / (l.powf(df) * tau.powf(df - 1.0)),
    })
}

impl CarvedCubeFixture {
    fn half_side(&self) -> f64 {
        self.alpha * self.l
    }

    pub fn in_cube(&self, p: &[f64]) -> bool {
        let a = self.half_side();
        p.len() == self.d && p.iter().all(|&c| (-a..=a).contains(&c))
    }

    /// Inside the removed region.
    pub fn is_carved(&self, p: &[f64]) -> bool {
        self.in_cube(p) && dist(p, &self.center) < self.tau
    }

    /// Uniform samples of the carved domain by rejection.
    pub fn sample_carved_domain(&self, seed: u64, n: usize) -> PointCloud {
        let mut rng = trial_rng(seed, 0);
        let a = self.half_side();
        let mut flat = Vec::with_capacity(n * self.d);
        let mut count = 0;
        while count < n {
            let p: Vec<f64> = (0..self.d).map(|_| rng.random_range(-a..=a)).collect();
            if !self.is_carved(&p) {
                flat.extend(p);
                count += 1;
            }
        }
        PointCloud::from_flat(self.d, flat).expect("finite samples")
    }

    /// Axis box containing the carved region: `|p_0| <= epsilon` and, for
    /// the other axes, `p_j >= t - sqrt(tau^2 - (d - 2) delta^2 / (d - 1))`.
    fn carved_box(&self) -> (Vec<f64>, Vec<f64>) {
        let a = self.half_side();
        let df1 = (self.d - 1) as f64;
        let delta2 = self.tau * self.tau - self.epsilon * self.epsilon;
        let t = self.center[1];
        let reach = (self.tau * self.tau - (df1 - 1.0) * delta2 / df1).sqrt();
        let lo_j = (t - reach).max(-a);
        let mut lo = vec![lo_j; self.d];
        let mut hi = vec![a; self.d];
        lo[0] = -self.epsilon;
        hi[0] = self.epsilon;
        (lo, hi)
    }

    /// Monte Carlo estimate of the carved fraction of the cube volume and its
    /// standard error. Points are drawn uniformly in a box that encloses the
    /// carved region, then rescaled by the box-to-cube volume ratio.
    pub fn carved_fraction_mc(&self, samples: usize, seed: u64) -> (f64, f64) {
        let (lo, hi) = self.carved_box();
        let chunks = 64usize;
        let per = samples.div_ceil(chunks);
        let hits: usize = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = trial_rng(seed, c as u64);
                let take = per.min(samples.saturating_sub(c * per));
                let mut p = vec![0.0; self.d];
                (0..take)
                    .filter(|_| {
                        for (j, pj) in p.iter_mut().enumerate() {
                            *pj = rng.random_range(lo[j]..=hi[j]);
                        }
                        self.is_carved(&p)
                    })
                    .count()
            })
            .sum();
        let ratio: f64 = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) / (2.0 * self.half_side()))
            .product();
        let p = hits as f64 / samples as f64;
        (p * ratio, ratio * (p * (1.0 - p) / samples as f64).sqrt())
    }
}

/// Empirical Hausdorff moments against the closed-form moment bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HausdorffTail {
    pub domain: &'static str,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub net_size: usize,
    /// Added to every measured distance to cover the gap between the net
    /// and the continuum.
    pub net_correction: f64,
    /// `[E H, E H^2]`.
    pub moments: [f64; 2],
    pub std_errors: [f64; 2],
    pub bounds: [f64; 2],
    pub within_bounds: [bool; 2],
}

/// `2^(3p/2) c_mu^(-p/d) (log n / n)^(p/d)`.
pub fn hausdorff_moment_bound(c_mu: f64, d: usize, n: usize, p: f64) -> f64 {
    let df = d as f64;
    let nf = n as f64;
    2f64.powf(1.5 * p) * c_mu.powf(-p / df) * (nf.ln() / nf).powf(p / df)
}

/// Monte Carlo check of the Hausdorff moment bound for `p in {1, 2}`.
pub fn hausdorff_tail_check(domain: &DomainModel, n: usize, trials: usize, seed: u64) -> Result<HausdorffTail> {
    if n < 8 {
        return Err(invalid("n", format!("the moment bound needs n >= 8, got {n}")));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    if 2 > 2 * domain.intrinsic_dim {
        return Err(invalid("p", "p = 2 exceeds 2d"));
    }
    let net_size = 10_000usize.max(20 * n);
    let net = domain.reference_net(net_size);
    let correction = domain.net_covering_radius(net_size).unwrap_or(0.0);
    let hs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x = domain.sample_with(&mut trial_rng(seed, t as u64), n);
            hausdorff_distance(&net, &x).map(|h| h + correction)
        })
        .collect::<Result<_>>()?;
    let mut moments = [0.0; 2];
    let mut std_errors = [0.0; 2];
    let mut bounds = [0.0; 2];
    let mut within = [false; 2];
    for (i, p) in [1.0, 2.0].into_iter().enumerate() {
        let vals: Vec<f64> = hs.iter().map(|h| h.powf(p)).collect();
        let mean = vals.iter().sum::<f64>() / trials as f64;
        let var = if trials > 1 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
        } else {
            0.0
        };
        moments[i] = mean;
        std_errors[i] = (var / trials as f64).sqrt();
        bounds[i] = hausdorff_moment_bound(domain.c_mu, domain.intrinsic_dim, n, p);
        within[i] = mean <= bounds[i];
    }
    Ok(HausdorffTail {
        domain: domain.name(),
        n,
        trials,
        seed,
        net_size: net.len(),
        net_correction: correction,
        moments,
        std_errors,
        bounds,
        within_bounds: within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArcAngleReport {
    pub delta: f64,
    pub tau: f64,
    /// Angle between the chord to `gamma(delta)` and the tangent at 0.
    pub angle: f64,
    pub angle_bound: f64,
    /// `|| v+/|v+| - v-/|v-| ||`.
    pub step_gap: f64,
    /// `min(|v+|, |v-|) / tau`.
    pub step_bound: f64,
    pub holds: bool,
}

/// Measures the chord/tangent angle and the two-sided step difference on a
/// circle of radius `tau`, where both bounds hold with equality.
pub fn arc_angle_check(delta: f64, tau: f64) -> Result<ArcAngleReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("must be positive, got {tau}")));
    }
    if !(delta > 0.0 && delta <= 0.5 * PI * tau) {
        return Err(invalid("delta", format!("must lie in (0, pi tau / 2], got {delta}")));
    }
    let gamma = |s: f64| [tau * (s / tau).cos(), tau * (s / tau).sin()];
    let p0 = gamma(0.0);
    let (pp, pm) = (gamma(delta), gamma(-delta));
    let vp = [pp[0] - p0[0], pp[1] - p0[1]];
    let vm = [p0[0] - pm[0], p0[1] - pm[1]];
    let tangent = [0.0, 1.0];
    let np = vp[0].hypot(vp[1]);
    let nm = vm[0].hypot(vm[1]);
    let cross = vp[0] * tangent[1] - vp[1] * tangent[0];
    let dot = vp[0] * tangent[0] + vp[1] * tangent[1];
    let angle = cross.abs().atan2(dot);
    let gap = [vp[0] / np - vm[0] / nm, vp[1] / np - vm[1] / nm];
    let step_gap = gap[0].hypot(gap[1]);
    let angle_bound = delta / (2.0 * tau);
    let step_bound = np.min(nm) / tau;
    let slack = 1e-12;
    Ok(ArcAngleReport {
        delta,
        tau,
        angle,
        angle_bound,
        step_gap,
        step_bound,
        holds: angle <= angle_bound + slack && step_gap <= step_bound + slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn cos_factor() -> ConformalFactor {
        ConformalFactor::radial_affine(2.0, 0, 1.0, 1.0).unwrap()
    }

    fn one() -> ConformalFactor {
        ConformalFactor::constant(1.0).unwrap()
    }

    /// Composite midpoint rule, independent of the adaptive integrators.
    fn midpoint<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, m: usize) -> f64 {
        let h = (b - a) / m as f64;
        (0..m).map(|i| g(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn circle_truth_examples() {
        assert_relative_eq!(circle_truth(0.0, PI / 2.0, &one()), PI / 2.0, max_relative = 1e-15);
        let v = circle_truth(0.0, PI / 2.0, &cos_factor());
        let fwd = midpoint(|t: f64| 2.0 + t.cos(), 0.0, PI / 2.0, 200_000);
        let back = midpoint(|t: f64| 2.0 + t.cos(), PI / 2.0, TAU, 200_000);
        assert_relative_eq!(fwd, PI + 1.0, max_relative = 1e-9);
        assert_relative_eq!(back, 3.0 * PI - 1.0, max_relative = 1e-9);
        assert_relative_eq!(v, fwd.min(back), max_relative = 1e-9);
        assert_relative_eq!(v, PI + 1.0, max_relative = 1e-13);
        assert_eq!(circle_truth(1.3, 1.3, &cos_factor()), 0.0);
        // The cheaper arc is chosen in either direction.
        assert_relative_eq!(
            circle_truth(PI / 2.0, 0.0, &cos_factor()),
            PI + 1.0,
            max_relative = 1e-13
        );
    }

    #[test]
    fn sphere_truth_examples() {
        assert_relative_eq!(sphere_truth(&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]).unwrap(), PI / 2.0);
        assert_relative_eq!(sphere_truth(&[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0]).unwrap(), PI);
        let s = DomainModel::sphere().sample(5, 200);
        for i in 0..100 {
            let (x, y) = (s.point(2 * i), s.point(2 * i + 1));
            let chord = 2.0 * (dist(x, y) / 2.0).asin();
            assert!((sphere_truth(x, y).unwrap() - chord).abs() <= 1e-12);
        }
        assert!(sphere_truth(&[0.0, 0.0, 2.0], &[1.0, 0.0, 0.0]).is_err());
        assert!(sphere_truth(&[0.0, 1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn flat_truth_examples() {
        let f = ConformalFactor::radial_affine(0.0, 0, 1.0, 1e-3).unwrap();
        let oracle = midpoint(|t| t, 0.0, 1.0, 1000);
        assert_relative_eq!(flat_truth(&[0.0], &[1.0], &f), oracle, max_relative = 1e-12);
        assert_relative_eq!(flat_truth(&[0.0], &[1.0], &f), 0.5, max_relative = 1e-14);
        assert_eq!(flat_truth(&[0.3, 0.2], &[0.3, 0.2], &f), 0.0);
        let s = DomainModel::square().sample(1, 40);
        for i in 0..20 {
            let (x, y) = (s.point(2 * i), s.point(2 * i + 1));
            assert_eq!(flat_truth(x, y, &one()), crate::euclidean_distance(x, y).unwrap());
        }
    }

    #[test]
    fn spiral_truth_against_direct_integration() {
        // Along the spiral the conformal speed is constant; integrate the
        // factor along a fine polyline of the spiral instead.
        let c = [-2.0, 0.5];
        let f = ConformalFactor::density_power(Density::Distance { center: c.to_vec() }, 1.0, 0.25, 0.3).unwrap();
        let mut rng = trial_rng(3, 0);
        let mut checked = 0;
        for _ in 0..50 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let y = [rng.random::<f64>(), rng.random::<f64>()];
            let Some(d) = log_spiral_truth(&x, &y, &c, [0.0, 1.0]) else {
                continue;
            };
            let (ax, ay) = (x[0] - c[0], x[1] - c[1]);
            let (bx, by) = (y[0] - c[0], y[1] - c[1]);
            let (rx, ry) = (ax.hypot(ay), bx.hypot(by));
            let th0 = ay.atan2(ax);
            let dth = (ax * by - ay * bx).atan2(ax * bx + ay * by);
            let m = 20_000;
            let pt = |t: f64| {
                let r = rx * (t * (ry / rx).ln()).exp();
                [c[0] + r * (th0 + t * dth).cos(), c[1] + r * (th0 + t * dth).sin()]
            };
            let mut total = 0.0;
            for i in 0..m {
                let (p, q) = (pt(i as f64 / m as f64), pt((i + 1) as f64 / m as f64));
                let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
                total += dist(&p, &q) * f.value(&mid);
            }
            assert_relative_eq!(total, d, max_relative = 1e-7);
            // The spiral beats the straight segment.
            assert!(d <= flat_truth(&x, &y, &f) * (1.0 + 1e-12));
            checked += 1;
        }
        assert!(checked > 30);
        // Equidistant from c, the geodesic is an arc centered at c; between
        // the right corners it bulges out of the square.
        assert!(log_spiral_truth(&[1.0, 0.0], &[1.0, 1.0], &c, [0.0, 1.0]).is_none());
        let sq = DomainModel::square();
        assert!(matches!(
            sq.truth(&[1.0, 0.0], &[1.0, 1.0], &f),
            Err(Error::NoOracle(_))
        ));
        let r = 4.25f64.sqrt();
        let arc = 2.0 * (0.5 / r).asin();
        assert_relative_eq!(
            sq.truth(&[0.0, 0.0], &[0.0, 1.0], &f).unwrap(),
            arc,
            max_relative = 1e-14
        );
        assert!(sq.truth(&[0.0, 0.0], &[0.0, 1.0], &cos_factor()).is_err());
    }

    #[test]
    fn samplers_lie_on_domain_and_are_reproducible() {
        for kind in DomainKind::ALL {
            let dom = DomainModel::new(kind);
            let s = dom.sample(11, 500);
            assert_eq!(s, dom.sample(11, 500));
            assert_ne!(s, dom.sample(12, 500));
            for p in s.points() {
                match kind {
                    DomainKind::Circle | DomainKind::Sphere => {
                        assert!((p.iter().map(|c| c * c).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12)
                    }
                    _ => assert!(p.iter().all(|&c| (0.0..=1.0).contains(&c))),
                }
            }
            for p in dom.reference_net(1000).points() {
                assert!(dom.contains(p));
            }
        }
    }

    #[test]
    fn truth_is_a_metric_dominating_euclid() {
        let f = cos_factor();
        for kind in DomainKind::ALL {
            let dom = DomainModel::new(kind);
            let s = dom.sample(21, 30);
            let factor = if matches!(kind, DomainKind::Circle | DomainKind::Segment) {
                &f
            } else {
                &one_static()
            };
            let d = |i: usize, j: usize| dom.truth(s.point(i), s.point(j), factor).unwrap();
            for i in 0..10 {
                for j in 0..10 {
                    assert_relative_eq!(d(i, j), d(j, i), max_relative = 1e-12);
                    assert!(
                        dom.truth(s.point(i), s.point(j), &one()).unwrap()
                            >= dist(s.point(i), s.point(j)) * (1.0 - 1e-12)
                    );
                    for k in 0..10 {
                        assert!(d(i, k) <= d(i, j) + d(j, k) + 1e-12);
                    }
                }
            }
        }
    }

    fn one_static() -> ConformalFactor {
        one()
    }

    #[test]
    fn arcsin_inequality_on_domains() {
        for kind in DomainKind::ALL {
            let dom = DomainModel::new(kind);
            let s = dom.sample(31, 400);
            for i in 0..200 {
                let (x, y) = (s.point(2 * i), s.point(2 * i + 1));
                let e = dist(x, y);
                let bound = if dom.tau_m.is_infinite() {
                    e
                } else {
                    if e >= 2.0 * dom.tau_m {
                        continue;
                    }
                    2.0 * dom.tau_m * (e / (2.0 * dom.tau_m)).asin()
                };
                assert!(dom.truth(x, y, &one()).unwrap() <= bound * (1.0 + 1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn ahlfors_probes() {
        let n = 20_000;
        for kind in DomainKind::ALL {
            let dom = DomainModel::new(kind);
            let s = dom.sample(41, n);
            let mut rng = trial_rng(42, 0);
            let d = dom.intrinsic_dim as i32;
            for _ in 0..20 {
                let c = dom.draw(&mut rng);
                let r = rng.random_range(0.02..dom.diameter());
                let hits = s.points().filter(|p| dist(p, &c) <= r).count() as f64 / n as f64;
                let lo = (dom.c_mu * r.powi(d)).min(1.0);
                let hi = (dom.big_c_mu * r.powi(d)).min(1.0);
                let sd = |p: f64| 3.0 * (p * (1.0 - p) / n as f64).sqrt();
                assert!(hits >= lo - sd(lo), "{kind}: mass {hits} < {lo} at r = {r}");
                assert!(hits <= hi + sd(hi), "{kind}: mass {hits} > {hi} at r = {r}");
            }
        }
    }

    #[test]
    fn l_mu_from_c_mu() {
        assert_relative_eq!(DomainModel::circle().l_mu, PI);
        assert_relative_eq!(DomainModel::sphere().l_mu, 2.0);
        assert_relative_eq!(DomainModel::square().l_mu, 2f64.sqrt());
        assert_eq!(DomainModel::by_name("sphere").unwrap().kind, DomainKind::Sphere);
        assert!(DomainModel::by_name("torus").is_err());
    }

    #[test]
    fn net_covering_radius_is_an_upper_bound() {
        for kind in [DomainKind::Circle, DomainKind::Segment, DomainKind::Square] {
            let dom = DomainModel::new(kind);
            let net = dom.reference_net(400);
            let cover = dom.net_covering_radius(400).unwrap();
            let probe = dom.sample(51, 5000);
            let h = hausdorff_distance(&probe, &net).unwrap();
            assert!(h <= cover * (1.0 + 1e-12), "{kind}: {h} > {cover}");
            assert!(h >= 0.5 * cover, "{kind}: cover {cover} is loose against {h}");
        }
    }

    #[test]
    fn carved_cube_examples() {
        let fx = carved_cube_fixture(3, 1.0, 1.0, 0.1).unwrap();
        assert_relative_eq!(
            fx.distortion,
            (0.1f64.asin() - 0.1) / 0.1f64.asin(),
            max_relative = 1e-15
        );
        assert!((fx.distortion - 0.0016714).abs() < 1e-7);
        assert!(fx.distortion >= fx.distortion_lower_bound);
        assert_relative_eq!(fx.distortion_lower_bound, 0.01 / 6.0, max_relative = 1e-15);
        assert_eq!(fx.pre_distance, 0.2);
        assert!((fx.post_distance - 0.2003348).abs() < 1e-7);
        // x and y sit on the carving sphere and on the cube edge.
        assert_relative_eq!(dist(&fx.x, &fx.center), 1.0, max_relative = 1e-14);
        assert_relative_eq!(dist(&fx.y, &fx.center), 1.0, max_relative = 1e-14);
        assert!(fx.in_cube(&fx.x) && fx.in_cube(&fx.y));
        let tiny = carved_cube_fixture(2, 1.0, 1.0, 1e-6).unwrap();
        assert!(tiny.distortion < 1e-12);
        assert!(carved_cube_fixture(3, 1.0, 1.0, 0.0).is_err());
        assert!(carved_cube_fixture(3, 1.0, 1.0, 0.3).is_err());
        assert!(carved_cube_fixture(1, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn carved_area_in_the_plane() {
        // For d = 2 the carved set is a circular segment of height tau - delta.
        for eps in [0.05, 0.1, 0.2] {
            let fx = carved_cube_fixture(2, 1.0, 1.0, eps).unwrap();
            let delta: f64 = (1.0 - eps * eps).sqrt();
            let area = (delta).acos() - delta * eps;
            let exact = area / 0.25;
            let (est, se) = fx.carved_fraction_mc(400_000, 7);
            assert!(
                (est - exact).abs() <= 4.0 * se + 1e-12,
                "eps {eps}: {est} vs {exact} (se {se})"
            );
            assert!(exact <= fx.tv_upper_bound);
        }
    }

    #[test]
    fn carved_sampler_avoids_the_ball() {
        let fx = carved_cube_fixture(3, 1.0, 1.0, 0.2).unwrap();
        let s = fx.sample_carved_domain(3, 2000);
        assert!(s.points().all(|p| fx.in_cube(p) && !fx.is_carved(p)));
    }

    #[test]
    fn hausdorff_tail_examples() {
        let circle = DomainModel::circle();
        let rep = hausdorff_tail_check(&circle, 1000, 20, 1).unwrap();
        assert!(rep.within_bounds[0], "{rep:?}");
        let b1 = hausdorff_moment_bound(circle.c_mu, 1, 1000, 1.0);
        assert_relative_eq!(b1, 2f64.powf(1.5) * PI * (1000f64.ln() / 1000.0), max_relative = 1e-14);
        assert!(hausdorff_moment_bound(circle.c_mu, 1, 2000, 1.0) < b1);
        let one = hausdorff_tail_check(&circle, 50, 1, 2).unwrap();
        assert!(one.moments[0].is_finite() && one.moments[0] >= 0.0);
        assert!(hausdorff_tail_check(&circle, 7, 1, 2).is_err());
        assert_eq!(rep, hausdorff_tail_check(&circle, 1000, 20, 1).unwrap());
    }

    #[test]
    fn arc_angle_examples() {
        let rep = arc_angle_check(0.5, 1.0).unwrap();
        assert!(rep.holds);
        assert!((rep.angle - 0.25).abs() < 1e-15);
        assert!((rep.step_gap - 2.0 * 0.25f64.sin()).abs() < 1e-15);
        assert!((rep.step_gap - rep.step_bound).abs() < 1e-15);
        assert!(arc_angle_check(1e-9, 1.0).unwrap().angle < 1e-9);
        assert!(arc_angle_check(0.0, 1.0).is_err());
        assert!(arc_angle_check(2.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn arc_angle_is_saturated(delta_frac in 0.001f64..1.0, tau in 0.1f64..10.0) {
            let delta = delta_frac * 0.5 * PI * tau;
            let rep = arc_angle_check(delta, tau).unwrap();
            prop_assert!(rep.holds);
            prop_assert!((rep.angle - rep.angle_bound).abs() <= 1e-12);
            prop_assert!((rep.step_gap - rep.step_bound).abs() <= 1e-12);
        }
    }
}
