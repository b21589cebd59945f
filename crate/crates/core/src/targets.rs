//! Target densities and a trapezoidal quadrature oracle for low-dimensional
//! ground truth.
//!
//! Samplers only ever see the unnormalized log-density of a [`Target`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmix::{Covariance, GaussianComponent, MixtureProposal};

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// All of R^d.
    Unbounded,
    /// Axis-aligned box `[lo_k, hi_k]` per coordinate.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Support {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Support::Unbounded => true,
            Support::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
        }
    }
}

/// An unnormalized target density `p(x)`, known up to a constant.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// `log p(x)`; `-inf` outside the support.
    fn log_density(&self, x: &[f64]) -> f64;

    fn support(&self) -> Support {
        Support::Unbounded
    }
}

impl<T: Target + ?Sized> Target for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn support(&self) -> Support {
        (**self).support()
    }
}

impl<T: Target + ?Sized> Target for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn support(&self) -> Support {
        (**self).support()
    }
}

/// Wraps a closure as a target on R^d.
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Target for FnTarget<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// `p(x) = exp(-(x^2 - 4)^2 / 4)`, modes at `x = ±2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuarticBimodal;

impl Target for QuarticBimodal {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let s = x[0] * x[0] - 4.0;
        -0.25 * s * s
    }
}

pub fn quartic_bimodal() -> QuarticBimodal {
    QuarticBimodal
}

/// Weights, means and covariances of a Gaussian mixture target.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTargetSpec {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl MixtureTargetSpec {
    /// Equal-weight 1-D mixture with a shared variance.
    pub fn equal_weight_1d(means: &[f64], variance: f64) -> Self {
        let m = means.len();
        Self {
            weights: vec![1.0 / m as f64; m],
            means: means.iter().map(|&v| DVector::from_element(1, v)).collect(),
            covariances: vec![DMatrix::from_element(1, 1, variance); m],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Analytic mean `sum_i a_i eta_i`.
    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(DVector::zeros(self.dim()), |acc, (w, m)| acc + m * *w)
    }
}

/// Normalized Gaussian mixture target, so its true normalizing constant is 1.
#[derive(Debug, Clone)]
pub struct GaussianMixtureTarget {
    spec: MixtureTargetSpec,
    density: MixtureProposal,
}

impl GaussianMixtureTarget {
    pub fn new(spec: MixtureTargetSpec) -> Result<Self> {
        if spec.means.len() != spec.covariances.len() {
            return Err(Error::InvalidConfig(format!(
                "mixture target has {} means but {} covariances",
                spec.means.len(),
                spec.covariances.len()
            )));
        }
        let components = spec
            .means
            .iter()
            .zip(&spec.covariances)
            .map(|(m, c)| GaussianComponent::new(m.clone(), Covariance::new(c.clone())?))
            .collect::<Result<Vec<_>>>()?;
        let density = MixtureProposal::new(spec.weights.clone(), components)?;
        Ok(Self { spec, density })
    }

    pub fn spec(&self) -> &MixtureTargetSpec {
        &self.spec
    }
}

impl Target for GaussianMixtureTarget {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.density.log_density_unchecked(x)
    }
}

pub fn gaussian_mixture_target(spec: MixtureTargetSpec) -> Result<GaussianMixtureTarget> {
    GaussianMixtureTarget::new(spec)
}

/// Serializable description of a built-in target, as it appears in
/// experiment config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    QuarticBimodal {},
    GaussianMixture {
        weights: Vec<f64>,
        /// One row per component.
        means: Vec<Vec<f64>>,
        /// Full `d x d` matrices, nested row-major.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariances: Option<Vec<Vec<Vec<f64>>>>,
        /// Shorthand for 1-D targets.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variances: Option<Vec<f64>>,
    },
}

/// A built-in target plus the ground truth used to score estimates.
pub struct BuiltTarget {
    pub target: Box<dyn Target>,
    pub true_mean: DVector<f64>,
    pub true_z: f64,
}

impl TargetSpec {
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::QuarticBimodal {} => 1,
            TargetSpec::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
        }
    }

    pub fn mixture_spec(&self) -> Result<Option<MixtureTargetSpec>> {
        let TargetSpec::GaussianMixture {
            weights,
            means,
            covariances,
            variances,
        } = self
        else {
            return Ok(None);
        };
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidConfig("mixture target needs at least one mean".into()));
        }
        if means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidConfig("mixture target means differ in length".into()));
        }
        let covs = match (covariances, variances) {
            (Some(c), None) => c
                .iter()
                .map(|rows| {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(Error::InvalidConfig(format!(
                            "mixture target covariance must be {d}x{d}"
                        )));
                    }
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    Ok(DMatrix::from_row_slice(d, d, &flat))
                })
                .collect::<Result<Vec<_>>>()?,
            (None, Some(v)) if d == 1 => v.iter().map(|&s| DMatrix::from_element(1, 1, s)).collect(),
            (None, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "`variances` is only valid for 1-D targets; use `covariances`".into(),
                ))
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "mixture target needs exactly one of `covariances` or `variances`".into(),
                ))
            }
        };
        Ok(Some(MixtureTargetSpec {
            weights: weights.clone(),
            means: means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            covariances: covs,
        }))
    }

    pub fn build(&self) -> Result<BuiltTarget> {
        match self.mixture_spec()? {
            None => {
                let moments = quadrature_moments(&QuarticBimodal, &[(-6.0, 6.0)], 4001)?;
                Ok(BuiltTarget {
                    target: Box::new(QuarticBimodal),
                    // symmetric target
                    true_mean: DVector::zeros(1),
                    true_z: moments.z,
                })
            }
            Some(spec) => {
                let true_mean = spec.mean();
                Ok(BuiltTarget {
                    target: Box::new(GaussianMixtureTarget::new(spec)?),
                    true_mean,
                    true_z: 1.0,
                })
            }
        }
    }
}

/// Normalizing constant, mean and covariance of a target.
#[derive(Debug, Clone)]
pub struct Moments {
    pub z: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Convergence tolerance between a grid and its 2x refinement.
pub const QUADRATURE_TOL: f64 = 1e-8;

/// Trapezoidal-rule moments of a 1-D or 2-D target over `region`, using
/// `points` nodes per axis. The result is recomputed at half the spacing
/// and rejected unless the two agree to [`QUADRATURE_TOL`].
pub fn quadrature_moments<T: Target + ?Sized>(
    target: &T,
    region: &[(f64, f64)],
    points: usize,
) -> Result<Moments> {
    let d = target.dim();
    if d == 0 || d > 2 {
        return Err(Error::Quadrature(format!("dimension {d} not supported (1 or 2 only)")));
    }
    if region.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: region.len(),
        });
    }
    if points < 3 {
        return Err(Error::Quadrature("need at least 3 grid points per axis".into()));
    }
    if region.iter().any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo >= hi) {
        return Err(Error::Quadrature("empty integration box".into()));
    }
    let coarse = trapezoid(target, region, points);
    let fine = trapezoid(target, region, 2 * points - 1);

    let scale = |v: f64| v.abs().max(1.0);
    let mut worst = (fine.z - coarse.z).abs() / scale(fine.z);
    for (a, b) in fine.mean.iter().zip(coarse.mean.iter()) {
        worst = worst.max((a - b).abs() / scale(*a));
    }
    for (a, b) in fine.cov.iter().zip(coarse.cov.iter()) {
        worst = worst.max((a - b).abs() / scale(*a));
    }
    if worst.is_nan() || worst >= QUADRATURE_TOL || !fine.z.is_finite() || fine.z <= 0.0 {
        return Err(Error::Quadrature(format!(
            "refinement changed results by {worst:e} (Z = {})",
            fine.z
        )));
    }
    Ok(fine)
}

fn axis(lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (n - 1) as f64;
    let nodes = (0..n).map(|i| lo + h * i as f64).collect();
    let weights = (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect();
    (nodes, weights)
}

fn trapezoid<T: Target + ?Sized>(target: &T, region: &[(f64, f64)], n: usize) -> Moments {
    let axes: Vec<_> = region.iter().map(|&(lo, hi)| axis(lo, hi, n)).collect();
    let d = axes.len();

    // (point, quadrature weight, log p)
    let mut nodes: Vec<([f64; 2], f64, f64)> = Vec::with_capacity(n.pow(d as u32));
    if d == 1 {
        for (x, w) in axes[0].0.iter().zip(&axes[0].1) {
            nodes.push(([*x, 0.0], *w, target.log_density(&[*x])));
        }
    } else {
        for (x, wx) in axes[0].0.iter().zip(&axes[0].1) {
            for (y, wy) in axes[1].0.iter().zip(&axes[1].1) {
                nodes.push(([*x, *y], wx * wy, target.log_density(&[*x, *y])));
            }
        }
    }
    let shift = nodes
        .iter()
        .map(|n| n.2)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut mass = 0.0;
    let mut first = [0.0; 2];
    let mut second = [[0.0; 2]; 2];
    for (p, w, lp) in &nodes {
        let f = w * (lp - shift).exp();
        mass += f;
        for i in 0..d {
            first[i] += f * p[i];
            for j in 0..d {
                second[i][j] += f * p[i] * p[j];
            }
        }
    }
    let mean = DVector::from_fn(d, |i, _| first[i] / mass);
    let cov = DMatrix::from_fn(d, d, |i, j| second[i][j] / mass - mean[i] * mean[j]);
    Moments {
        z: mass * shift.exp(),
        mean,
        cov,
    }
}

/// Probability mass of a 1-D target in each of `bins` equal bins over
/// `[lo, hi]`, normalized to sum to one. Each bin is integrated with a
/// trapezoidal rule on `per_bin` sub-intervals.
pub fn bin_probabilities<T: Target + ?Sized>(
    target: &T,
    lo: f64,
    hi: f64,
    bins: usize,
    per_bin: usize,
) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let h = width / per_bin as f64;
    let mut out: Vec<f64> = (0..bins)
        .map(|b| {
            let a = lo + width * b as f64;
            let f = |k: usize| target.log_density(&[a + h * k as f64]).exp();
            let inner: f64 = (1..per_bin).map(f).sum();
            h * (0.5 * f(0) + inner + 0.5 * f(per_bin))
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}
