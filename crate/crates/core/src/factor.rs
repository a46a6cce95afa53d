//! Conformal factors: positive Lipschitz functions that reweight path speed.
//!
//! Every factor carries a declared Lipschitz constant `kappa` and lower bound
//! `f_min`. The declarations feed the conformal reach bound and the error
//! budgets; they are checked by sampling ([`validate_declared`]), never
//! derived symbolically.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dist, dist_sq, PointCloud};

/// Default floor applied to the empirical distance-to-measure.
pub const DEFAULT_DTM_FLOOR: f64 = 1e-6;

pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Density callback used by the density-power (Fermat) factor.
#[derive(Clone)]
pub enum Density {
    /// Constant density 1.
    Uniform,
    /// Standard normal density in the ambient dimension.
    Gaussian,
    /// `rho(x) = ||x - center||`. Combined with `beta = 1` this yields the
    /// inverse-distance factor whose geodesics are logarithmic spirals.
    Distance {
        center: Vec<f64>,
    },
    Custom(DensityFn),
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Uniform => f.write_str("Uniform"),
            Density::Gaussian => f.write_str("Gaussian"),
            Density::Distance { center } => f.debug_struct("Distance").field("center", center).finish(),
            Density::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Density {
    pub fn custom(rho: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Density::Custom(Arc::new(rho))
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::Gaussian => {
                let n = x.len() as f64;
                let sq: f64 = x.iter().map(|c| c * c).sum();
                (-0.5 * sq).exp() / (std::f64::consts::TAU).powf(0.5 * n)
            }
            Density::Distance { center } => dist(x, center),
            Density::Custom(rho) => rho(x),
        }
    }
}

/// Distance-to-measure of the empirical measure on an anchor cloud, with
/// mass parameter `m = k / n`.
#[derive(Debug, Clone)]
pub struct DtmParams {
    anchors: PointCloud,
    k: usize,
    floor: f64,
}

impl DtmParams {
    pub fn new(anchors: PointCloud, k: usize, floor: f64) -> Result<Self> {
        if k == 0 || k > anchors.len() {
            return Err(invalid("k", format!("must lie in [1, {}], got {k}", anchors.len())));
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(invalid("floor", format!("must be positive, got {floor}")));
        }
        Ok(Self { anchors, k, floor })
    }

    pub fn anchors(&self) -> &PointCloud {
        &self.anchors
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Mass parameter `m = k / n`.
    pub fn mass(&self) -> f64 {
        self.k as f64 / self.anchors.len() as f64
    }

    /// Unfloored value `sqrt(mean of the k smallest squared distances)`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        let mut d2: Vec<f64> = self.anchors.points().map(|a| dist_sq(x, a)).collect();
        let k = self.k;
        if k < d2.len() {
            d2.select_nth_unstable_by(k - 1, f64::total_cmp);
        }
        let sum: f64 = d2[..k].iter().sum();
        (sum / k as f64).sqrt()
    }
}

/// Empirical distance-to-measure, floored at `params.floor`.
pub fn evaluate_dtm(params: &DtmParams, x: &[f64]) -> Result<f64> {
    params.anchors.check_dim(x)?;
    Ok(params.raw(x).max(params.floor))
}

#[derive(Debug, Clone)]
pub enum FactorKind {
    Constant {
        value: f64,
    },
    /// `base + slope * x[axis]`.
    RadialAffine {
        base: f64,
        axis: usize,
        slope: f64,
    },
    /// `rho(x)^(-beta)`.
    DensityPower {
        density: Density,
        beta: f64,
    },
    Dtm(Arc<DtmParams>),
}

/// A positive conformal factor `f` with declared `(kappa, f_min)`.
///
/// `offset` is added to the base function; it is how [`perturb_factor`]
/// realizes a sup-norm perturbation without changing the kind.
#[derive(Debug, Clone)]
pub struct ConformalFactor {
    kind: FactorKind,
    offset: f64,
    kappa: f64,
    f_min: f64,
}

impl ConformalFactor {
    fn checked(kind: FactorKind, kappa: f64, f_min: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", format!("must be finite and >= 0, got {kappa}")));
        }
        if !(f_min > 0.0 && f_min.is_finite()) {
            return Err(invalid("f_min", format!("must be positive, got {f_min}")));
        }
        Ok(Self {
            kind,
            offset: 0.0,
            kappa,
            f_min,
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::checked(FactorKind::Constant { value }, 0.0, value)
    }

    pub fn radial_affine(base: f64, axis: usize, slope: f64, f_min: f64) -> Result<Self> {
        Self::checked(FactorKind::RadialAffine { base, axis, slope }, slope.abs(), f_min)
    }

    pub fn density_power(density: Density, beta: f64, kappa: f64, f_min: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(invalid("beta", format!("must be positive, got {beta}")));
        }
        Self::checked(FactorKind::DensityPower { density, beta }, kappa, f_min)
    }

    /// Floored empirical DTM; 1-Lipschitz with lower bound `floor`.
    pub fn dtm(params: DtmParams) -> Result<Self> {
        let floor = params.floor;
        Self::checked(FactorKind::Dtm(Arc::new(params)), 1.0, floor)
    }

    pub fn kind(&self) -> &FactorKind {
        &self.kind
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            FactorKind::Constant { .. } => "constant",
            FactorKind::RadialAffine { .. } => "radial_affine",
            FactorKind::DensityPower { .. } => "density_power",
            FactorKind::Dtm(_) => "dtm",
        }
    }

    /// The constant value when the factor is constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.kind {
            FactorKind::Constant { value } => Some(value + self.offset),
            _ => None,
        }
    }

    /// True when `f` is affine along every segment, so that the two-point
    /// trapezoid is already the exact segment integral.
    pub fn is_affine(&self) -> bool {
        matches!(self.kind, FactorKind::Constant { .. } | FactorKind::RadialAffine { .. })
    }

    /// Ambient dimension the factor is tied to, if any.
    pub fn ambient_dim(&self) -> Option<usize> {
        match &self.kind {
            FactorKind::Dtm(p) => Some(p.anchors.dim()),
            FactorKind::DensityPower {
                density: Density::Distance { center },
                ..
            } => Some(center.len()),
            _ => None,
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        match (&self.kind, self.ambient_dim()) {
            (_, Some(n)) if n != x.len() => Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            }),
            (FactorKind::RadialAffine { axis, .. }, _) if *axis >= x.len() => Err(Error::DimensionMismatch {
                expected: axis + 1,
                found: x.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Evaluates `f(x)` after checking the dimension.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.value(x))
    }

    /// Unchecked evaluation for hot loops.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let base = match &self.kind {
            FactorKind::Constant { value } => *value,
            FactorKind::RadialAffine { base, axis, slope } => base + slope * x[*axis],
            FactorKind::DensityPower { density, beta } => density.eval(x).powf(-beta),
            FactorKind::Dtm(p) => p.raw(x).max(p.floor),
        };
        base + self.offset
    }
}

/// Lower bound `min(tau_M / 2, f_min / (8 kappa))` on the reach of every
/// conformal geodesic. `kappa = 0` makes the second branch `+inf`.
pub fn conformal_reach_bound(tau_m: f64, kappa: f64, f_min: f64) -> Result<f64> {
    if !(tau_m > 0.0) {
        return Err(invalid("tau_M", format!("must be positive, got {tau_m}")));
    }
    if !(kappa >= 0.0) {
        return Err(invalid("kappa", format!("must be >= 0, got {kappa}")));
    }
    if !(f_min > 0.0) {
        return Err(invalid("f_min", format!("must be positive, got {f_min}")));
    }
    let factor_branch = if kappa == 0.0 {
        f64::INFINITY
    } else {
        f_min / (8.0 * kappa)
    };
    Ok((tau_m / 2.0).min(factor_branch))
}

/// Returns `g = f + eta`, so that `||g - f||_inf = eta` exactly.
pub fn perturb_factor(f: &ConformalFactor, eta: f64) -> Result<ConformalFactor> {
    if !(eta >= 0.0) || eta > 0.5 * f.f_min {
        return Err(invalid(
            "eta",
            format!("must lie in [0, f_min/2 = {}], got {eta}", 0.5 * f.f_min),
        ));
    }
    let mut g = f.clone();
    g.offset += eta;
    g.f_min += eta;
    Ok(g)
}

/// Outcome of a sampled check of `(kappa, f_min)` declarations.
#[derive(Debug, Clone, Serialize)]
pub struct DeclarationCheck {
    pub samples: usize,
    pub observed_min: f64,
    pub observed_max_slope: f64,
    pub lower_bound_ok: bool,
    pub lipschitz_ok: bool,
}

impl DeclarationCheck {
    pub fn ok(&self) -> bool {
        self.lower_bound_ok && self.lipschitz_ok
    }
}

/// Samples `pairs` random point pairs in the axis-aligned box `[lo, hi]`
/// and compares the observed minimum and slopes against the declarations.
pub fn validate_declared(
    f: &ConformalFactor,
    lo: &[f64],
    hi: &[f64],
    pairs: usize,
    seed: u64,
) -> Result<DeclarationCheck> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            found: hi.len(),
        });
    }
    f.check_dim(lo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        lo.iter()
            .zip(hi)
            .map(|(a, b)| if a == b { *a } else { rng.random_range(*a..*b) })
            .collect()
    };
    let mut observed_min = f64::INFINITY;
    let mut max_slope: f64 = 0.0;
    for _ in 0..pairs {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let (fx, fy) = (f.value(&x), f.value(&y));
        observed_min = observed_min.min(fx).min(fy);
        let d = dist(&x, &y);
        if d > 0.0 {
            max_slope = max_slope.max((fx - fy).abs() / d);
        }
    }
    // Relative slack absorbs rounding in the slope quotient.
    let tol = 1e-9;
    Ok(DeclarationCheck {
        samples: pairs,
        observed_min,
        observed_max_slope: max_slope,
        lower_bound_ok: observed_min >= f.f_min * (1.0 - tol),
        lipschitz_ok: max_slope <= f.kappa * (1.0 + tol) + tol,
    })
}

/// JSON factor configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorConfig {
    Constant {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f_min: Option<f64>,
    },
    RadialAffine {
        base: f64,
        axis: usize,
        slope: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
        f_min: f64,
    },
    Dtm {
        anchors: String,
        k: usize,
        #[serde(default = "default_floor")]
        floor: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        f_min: Option<f64>,
    },
    DensityPower {
        beta: f64,
        density: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        kappa: f64,
        f_min: f64,
    },
}

fn default_floor() -> f64 {
    DEFAULT_DTM_FLOOR
}

impl FactorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds the factor; relative anchor paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<ConformalFactor> {
        let factor = match self {
            FactorConfig::Constant { value, .. } => ConformalFactor::constant(*value)?,
            FactorConfig::RadialAffine {
                base,
                axis,
                slope,
                f_min,
                ..
            } => ConformalFactor::radial_affine(*base, *axis, *slope, *f_min)?,
            FactorConfig::Dtm { anchors, k, floor, .. } => {
                let cloud = PointCloud::load_csv(base_dir.join(anchors))?;
                ConformalFactor::dtm(DtmParams::new(cloud, *k, *floor)?)?
            }
            FactorConfig::DensityPower {
                beta,
                density,
                center,
                kappa,
                f_min,
            } => {
                let density = match (density.as_str(), center) {
                    ("uniform", _) => Density::Uniform,
                    ("gaussian", _) => Density::Gaussian,
                    ("distance", Some(c)) => Density::Distance { center: c.clone() },
                    ("distance", None) => return Err(invalid("center", "density `distance` needs a center")),
                    (other, _) => return Err(invalid("density", format!("unknown built-in `{other}`"))),
                };
                ConformalFactor::density_power(density, *beta, *kappa, *f_min)?
            }
        };
        // Declared overrides for the kinds whose constants are derivable.
        let (kappa, f_min) = match self {
            FactorConfig::Constant { kappa, f_min, .. } | FactorConfig::Dtm { kappa, f_min, .. } => (*kappa, *f_min),
            FactorConfig::RadialAffine { kappa, .. } => (*kappa, None),
            FactorConfig::DensityPower { .. } => (None, None),
        };
        let kappa = kappa.unwrap_or(factor.kappa);
        let f_min = f_min.unwrap_or(factor.f_min);
        ConformalFactor::checked(factor.kind, kappa, f_min)
    }
}
