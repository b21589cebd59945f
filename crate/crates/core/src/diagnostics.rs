//! Chain statistics and experiment metrics.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussmix::MixtureProposal;
use crate::sampler::ChainRecord;
use crate::targets::Target;

/// Per-coordinate Pearson correlation between `x_t` and `x_{t+1}`.
///
/// A coordinate whose leading or trailing series has zero variance has no
/// defined correlation and is reported as `None`.
pub fn lag1_correlation(chain: &[DVector<f64>]) -> Result<Vec<Option<f64>>> {
    if chain.len() < 3 {
        return Err(Error::Diagnostics(format!(
            "lag-1 correlation needs at least 3 states, got {}",
            chain.len()
        )));
    }
    let d = chain[0].len();
    Ok((0..d)
        .map(|k| {
            let xs: Vec<f64> = chain.iter().map(|v| v[k]).collect();
            pearson(&xs[..xs.len() - 1], &xs[1..])
        })
        .collect())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `(1/R) sum_r (estimate_r - truth)^2`.
pub fn mse_over_runs(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Diagnostics("MSE over zero runs".into()));
    }
    Ok(estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64)
}

/// Below this fraction of `n`, an importance-sampling estimate is flagged.
pub const MIN_ESS_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZEstimate {
    pub value: f64,
    /// Kish effective sample size of the importance weights.
    pub ess: f64,
    /// Set when `ess < MIN_ESS_FRACTION * n`.
    pub flagged: bool,
}

/// Importance-sampling estimate of `Z = ∫ p(x) dx` with fresh draws from
/// `q`: `Z ≈ (1/n) sum p(x_i) / q(x_i)`, accumulated in log space.
pub fn estimate_normalizing_constant<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    q: &MixtureProposal,
    n_draws: usize,
    rng: &mut R,
) -> Result<ZEstimate> {
    if n_draws == 0 {
        return Err(Error::Diagnostics("importance sampling needs at least one draw".into()));
    }
    if target.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: q.dim(),
        });
    }
    let support = target.support();
    let log_w: Vec<f64> = (0..n_draws)
        .map(|_| {
            let (_, x) = q.sample(rng);
            let lp = if support.contains(x.as_slice()) {
                target.log_density(x.as_slice())
            } else {
                f64::NEG_INFINITY
            };
            lp - q.log_density_unchecked(x.as_slice())
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(ZEstimate {
            value: 0.0,
            ess: 0.0,
            flagged: true,
        });
    }
    let (s1, s2) = log_w.iter().fold((0.0, 0.0), |(s1, s2), lw| {
        let w = (lw - max).exp();
        (s1 + w, s2 + w * w)
    });
    let value = (max + s1.ln() - (n_draws as f64).ln()).exp();
    let ess = s1 * s1 / s2;
    Ok(ZEstimate {
        value,
        ess,
        flagged: ess < MIN_ESS_FRACTION * n_draws as f64,
    })
}

/// Per-iteration mean of `alpha` across equal-length runs.
pub fn alpha_trace_average(traces: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = traces.first() else {
        return Err(Error::Diagnostics("no runs to average".into()));
    };
    let len = first.len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Diagnostics("alpha traces differ in length".into()));
    }
    let r = traces.len() as f64;
    Ok((0..len)
        .map(|i| traces.iter().map(|t| t[i]).sum::<f64>() / r)
        .collect())
}

pub fn alpha_trace(records: &[ChainRecord]) -> Vec<f64> {
    records.iter().map(|r| r.alpha).collect()
}

pub fn acceptance_rate(records: &[ChainRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.accepted).count() as f64 / records.len() as f64
}

/// Mean of all chain states, no burn-in discarded.
pub fn chain_mean(records: &[ChainRecord]) -> Option<DVector<f64>> {
    let first = records.first()?;
    let sum = records
        .iter()
        .fold(DVector::zeros(first.state.len()), |acc, r| acc + &r.state);
    Some(sum / records.len() as f64)
}

/// Metrics of one completed chain.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: usize,
    pub seed: u64,
    pub mean_estimate: DVector<f64>,
    pub z_estimate: ZEstimate,
    pub lag1_corr: Vec<Option<f64>>,
    pub accept_rate_overall: f64,
    pub alpha_trace: Vec<f64>,
    pub initial_proposal: MixtureProposal,
    pub final_proposal: MixtureProposal,
}
