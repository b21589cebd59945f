//! Dense Gaussian and Gaussian-mixture mathematics.
//!
//! Every density here is the fully normalized one, evaluated in log space.
//! Covariances carry their Cholesky factor so repeated density evaluations
//! only pay for a triangular solve.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative tolerance used when checking that a covariance is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Cholesky factorization `cov = L Lᵀ`.
///
/// Returns [`Error::NotPositiveDefinite`] instead of panicking so the sampler
/// can try its regularization path.
pub fn cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            got: cov.ncols(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let asym = max_asymmetry(cov);
    if asym > SYMMETRY_TOL * cov.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    nalgebra::Cholesky::new(cov.clone())
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// A positive definite covariance together with its cached lower Cholesky
/// factor and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Covariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let chol = cholesky(&matrix)?;
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            matrix,
            chol,
            log_det,
        })
    }

    /// `sigma2 * I_d`.
    pub fn isotropic(dim: usize, sigma2: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * sigma2)
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

/// One mixture component. `count` is the number of chain states credited to
/// the component, starting at 1 for the initial mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: Covariance,
    count: u64,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, cov: Covariance) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean"));
        }
        Ok(Self {
            mean,
            cov,
            count: 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub(crate) fn set_count(&mut self, count: u64) {
        self.count = count;
    }

    pub(crate) fn set_params(&mut self, mean: DVector<f64>, cov: Covariance) {
        debug_assert_eq!(mean.len(), cov.dim());
        self.mean = mean;
        self.cov = cov;
    }

    /// Normalized log-density without input validation.
    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let l = &self.cov.chol;
        // forward substitution for L z = x - mean
        let mut z = vec![0.0; d];
        let mut quad = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
            quad += z[i] * z[i];
        }
        -0.5 * (d as f64 * LN_2PI + self.cov.log_det + quad)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim())?;
        Ok(self.log_density_unchecked(x))
    }

    /// `mean + L z` for a fresh standard-normal `z` (exactly `d` normal draws).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.cov.chol * z
    }
}

fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point"));
    }
    Ok(())
}

/// Log of the normalized multivariate normal density `N(x | mean, cov)`.
pub fn gaussian_log_density(x: &[f64], g: &GaussianComponent) -> Result<f64> {
    g.log_density(x)
}

/// A finite Gaussian mixture `sum_i w_i N(x | mu_i, C_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureProposal {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl MixtureProposal {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidWeights("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        let dim = components[0].dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        validate_weights(&weights)?;
        Ok(Self {
            weights,
            components,
        })
    }

    /// Equal weights `1/N`.
    pub fn uniform(components: Vec<GaussianComponent>) -> Result<Self> {
        let n = components.len().max(1);
        Self::new(vec![1.0 / n as f64; components.len()], components)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &GaussianComponent {
        &self.components[i]
    }

    pub(crate) fn component_mut(&mut self, i: usize) -> &mut GaussianComponent {
        &mut self.components[i]
    }

    pub(crate) fn set_weights(&mut self, weights: Vec<f64>) {
        debug_assert_eq!(weights.len(), self.components.len());
        self.weights = weights;
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut terms = [0.0f64; 16];
        let mut heap;
        let terms: &mut [f64] = if self.components.len() <= terms.len() {
            &mut terms[..self.components.len()]
        } else {
            heap = vec![0.0; self.components.len()];
            &mut heap
        };
        let mut max = f64::NEG_INFINITY;
        for ((t, w), c) in terms.iter_mut().zip(&self.weights).zip(&self.components) {
            *t = if *w > 0.0 {
                w.ln() + c.log_density_unchecked(x)
            } else {
                f64::NEG_INFINITY
            };
            max = max.max(*t);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// `log q(x)`, computed with a max-shift so widely separated components
    /// never underflow to `-inf`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim())?;
        Ok(self.log_density_unchecked(x))
    }

    /// Draws the component index from the weights with one uniform, then the
    /// point with `d` standard normals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, DVector<f64>) {
        let k = self.pick_component(rng.random::<f64>());
        (k, self.components[k].sample(rng))
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_live = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_live = i;
                if u < acc {
                    return i;
                }
            }
        }
        // rounding left u above the final cumulative sum
        last_live
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if sum == 0.0 {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

pub fn mixture_log_density(x: &[f64], q: &MixtureProposal) -> Result<f64> {
    q.log_density(x)
}

pub fn mixture_sample<R: Rng + ?Sized>(q: &MixtureProposal, rng: &mut R) -> DVector<f64> {
    q.sample(rng).1
}
