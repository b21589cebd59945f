//! Config-driven experiment runner: many independent chains, aggregated
//! metrics, and CSV outputs for tables and plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineSampler;
use crate::diagnostics::{
    acceptance_rate, alpha_trace, alpha_trace_average, chain_mean, estimate_normalizing_constant,
    lag1_correlation, mse_over_runs, RunSummary,
};
use crate::error::{Error, Result};
use crate::gaussmix::MixtureProposal;
use crate::sampler::{AgmSampler, SamplerConfig};
use crate::targets::{BuiltTarget, Target, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Agm,
    Baseline,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub sampler: SamplerKind,
    pub runs: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    /// Fresh proposal draws for the normalizing-constant estimate;
    /// defaults to `chain.t_tot`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_draws: Option<usize>,
    pub target: TargetSpec,
    /// `chain.seed` must be left unset: run seeds derive from `master_seed`.
    pub chain: SamplerConfig,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.chain.seed != 0 {
            return Err(Error::InvalidConfig(
                "chain.seed is derived per run from master_seed; do not set it".into(),
            ));
        }
        if self.z_draws == Some(0) {
            return Err(Error::InvalidConfig("z_draws must be positive".into()));
        }
        if self.chain.t_tot < 3 {
            return Err(Error::InvalidConfig("t_tot must be at least 3 for lag-1 correlation".into()));
        }
        self.chain.validate(self.target.dim())?;
        self.target.mixture_spec()?;
        Ok(())
    }

    pub fn z_draws(&self) -> usize {
        self.z_draws.unwrap_or(self.chain.t_tot as usize)
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, r: usize) -> u64 {
        derive_seed(self.master_seed, r as u64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the master seed and run index into a per-run seed.
pub fn derive_seed(master: u64, run: u64) -> u64 {
    splitmix64(splitmix64(master) ^ run)
}

/// Chain records plus the proposals at the start and the end of a run.
pub struct ChainOutput {
    pub records: Vec<crate::sampler::ChainRecord>,
    pub initial: MixtureProposal,
    pub final_proposal: MixtureProposal,
}

/// Runs one chain of the configured kind with the given seed.
pub fn run_chain<T: Target>(
    target: T,
    kind: SamplerKind,
    chain: &SamplerConfig,
    seed: u64,
) -> Result<ChainOutput> {
    let mut cfg = chain.clone();
    cfg.seed = seed;
    let mut sampler = match kind {
        SamplerKind::Agm => AgmSampler::new(target, cfg)?,
        SamplerKind::Baseline => BaselineSampler::new(target, cfg)?.into_inner(),
    };
    let records = sampler.run()?;
    Ok(ChainOutput {
        records,
        initial: sampler.initial_proposal().clone(),
        final_proposal: sampler.proposal().clone(),
    })
}

fn run_one(cfg: &ExperimentConfig, target: &dyn Target, run_id: usize) -> Result<RunSummary> {
    let seed = cfg.run_seed(run_id);
    let out = run_chain(target, cfg.sampler, &cfg.chain, seed)?;
    let states: Vec<DVector<f64>> = out.records.iter().map(|r| r.state.clone()).collect();
    let mut z_rng = ChaCha8Rng::seed_from_u64(seed);
    z_rng.set_stream(1);
    let z_estimate = estimate_normalizing_constant(target, &out.final_proposal, cfg.z_draws(), &mut z_rng)?;
    Ok(RunSummary {
        run_id,
        seed,
        mean_estimate: chain_mean(&out.records).expect("t_tot >= 3"),
        z_estimate,
        lag1_corr: lag1_correlation(&states)?,
        accept_rate_overall: acceptance_rate(&out.records),
        alpha_trace: alpha_trace(&out.records),
        initial_proposal: out.initial,
        final_proposal: out.final_proposal,
    })
}

/// Metrics over all runs of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub runs: usize,
    /// Per-coordinate MSE of the chain-mean estimate.
    pub mse_mean: Vec<f64>,
    pub mse_z: f64,
    /// Per-coordinate mean lag-1 correlation over runs where it is defined.
    pub mean_lag1: Vec<f64>,
    /// Runs with an undefined lag-1 correlation, per coordinate.
    pub undefined_lag1: Vec<usize>,
    pub mean_accept_rate: f64,
    pub flagged_z: usize,
}

/// Aggregates in run-id order, so the result does not depend on the order
/// in which runs are supplied.
pub fn aggregate(summaries: &[RunSummary], true_mean: &DVector<f64>, true_z: f64) -> Result<Aggregate> {
    let mut sorted: Vec<&RunSummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.run_id);
    let d = true_mean.len();
    let mse_mean = (0..d)
        .map(|k| {
            let est: Vec<f64> = sorted.iter().map(|s| s.mean_estimate[k]).collect();
            mse_over_runs(&est, true_mean[k])
        })
        .collect::<Result<Vec<_>>>()?;
    let z: Vec<f64> = sorted.iter().map(|s| s.z_estimate.value).collect();
    let mut mean_lag1 = Vec::with_capacity(d);
    let mut undefined_lag1 = Vec::with_capacity(d);
    for k in 0..d {
        let defined: Vec<f64> = sorted.iter().filter_map(|s| s.lag1_corr[k]).collect();
        undefined_lag1.push(sorted.len() - defined.len());
        mean_lag1.push(if defined.is_empty() {
            f64::NAN
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        });
    }
    Ok(Aggregate {
        runs: sorted.len(),
        mse_mean,
        mse_z: mse_over_runs(&z, true_z)?,
        mean_lag1,
        undefined_lag1,
        mean_accept_rate: sorted.iter().map(|s| s.accept_rate_overall).sum::<f64>() / sorted.len() as f64,
        flagged_z: sorted.iter().filter(|s| s.z_estimate.flagged).count(),
    })
}

pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub true_mean: DVector<f64>,
    pub true_z: f64,
    pub summaries: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

/// Validates `cfg`, then runs all chains on a pool of `cfg.workers`
/// threads. Summaries come back in run-id order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let BuiltTarget {
        target,
        true_mean,
        true_z,
    } = cfg.target.build()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let target_ref: &dyn Target = target.as_ref();
    let summaries = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|r| run_one(cfg, target_ref, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let aggregate = aggregate(&summaries, &true_mean, true_z)?;
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        true_mean,
        true_z,
        summaries,
        aggregate,
    })
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), fmt_num)
}

/// Per-run rows followed by one `aggregate` row. In the aggregate row the
/// `mean_*` columns hold the MSE of the mean estimate, `z_estimate` holds
/// the MSE of the Z estimate, and the remaining columns hold run averages.
pub fn summary_csv(outcome: &ExperimentOutcome) -> String {
    let d = outcome.true_mean.len();
    let mut out = String::from("run_id,seed");
    for k in 0..d {
        let _ = write!(out, ",mean_{k}");
    }
    out.push_str(",z_estimate");
    for k in 0..d {
        let _ = write!(out, ",lag1_corr_{k}");
    }
    out.push_str(",accept_rate\n");

    let mut rows: Vec<&RunSummary> = outcome.summaries.iter().collect();
    rows.sort_by_key(|s| s.run_id);
    for s in rows {
        let _ = write!(out, "{},{}", s.run_id, s.seed);
        for v in s.mean_estimate.iter() {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        let _ = write!(out, ",{}", fmt_num(s.z_estimate.value));
        for c in &s.lag1_corr {
            let _ = write!(out, ",{}", fmt_opt(*c));
        }
        let _ = writeln!(out, ",{}", fmt_num(s.accept_rate_overall));
    }
    let a = &outcome.aggregate;
    out.push_str("aggregate,");
    for v in &a.mse_mean {
        let _ = write!(out, ",{}", fmt_num(*v));
    }
    let _ = write!(out, ",{}", fmt_num(a.mse_z));
    for v in &a.mean_lag1 {
        let _ = write!(out, ",{}", fmt_num(*v));
    }
    let _ = writeln!(out, ",{}", fmt_num(a.mean_accept_rate));
    out
}

/// One row per component: weight, count, mean, covariance (row-major),
/// for the initial and final proposal of every run.
pub fn proposals_csv(summaries: &[RunSummary]) -> String {
    let Some(first) = summaries.first() else {
        return String::new();
    };
    let d = first.final_proposal.dim();
    let mut out = String::from("run_id,stage,component,weight,count");
    for k in 0..d {
        let _ = write!(out, ",mean_{k}");
    }
    for i in 0..d {
        for j in 0..d {
            let _ = write!(out, ",cov_{i}{j}");
        }
    }
    out.push('\n');
    let mut rows: Vec<&RunSummary> = summaries.iter().collect();
    rows.sort_by_key(|s| s.run_id);
    for s in rows {
        for (stage, q) in [("initial", &s.initial_proposal), ("final", &s.final_proposal)] {
            for (i, (w, c)) in q.weights().iter().zip(q.components()).enumerate() {
                let _ = write!(out, "{},{stage},{i},{},{}", s.run_id, fmt_num(*w), c.count());
                for v in c.mean().iter() {
                    let _ = write!(out, ",{}", fmt_num(*v));
                }
                let m = c.cov().matrix();
                for r in 0..d {
                    for col in 0..d {
                        let _ = write!(out, ",{}", fmt_num(m[(r, col)]));
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Shape of a component's one-sigma ellipse.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipse {
    /// Square roots of the covariance eigenvalues, largest first.
    pub axes: Vec<f64>,
    /// Angle of the major axis from the first coordinate axis, in radians.
    /// Zero for 1-D components, `None` above two dimensions.
    pub orientation: Option<f64>,
}

pub fn ellipse(cov: &nalgebra::DMatrix<f64>) -> Ellipse {
    let d = cov.nrows();
    match d {
        1 => Ellipse {
            axes: vec![cov[(0, 0)].sqrt()],
            orientation: Some(0.0),
        },
        2 => {
            let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            Ellipse {
                axes: vec![(mid + rad).sqrt(), (mid - rad).max(0.0).sqrt()],
                orientation: Some(0.5 * (2.0 * b).atan2(a - c)),
            }
        }
        _ => {
            let mut ev: Vec<f64> = cov.clone().symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|x, y| y.total_cmp(x));
            Ellipse {
                axes: ev.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
                orientation: None,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseRow {
    pub run_id: usize,
    pub stage: &'static str,
    pub component: usize,
    pub weight: f64,
    pub mean: Vec<f64>,
    pub ellipse: Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    /// `(t, mean alpha over runs)`.
    pub alpha: Vec<(u64, f64)>,
    pub ellipses: Vec<EllipseRow>,
}

/// Averaged alpha trace and per-component ellipses at the start and end of
/// every run.
pub fn emit_plot_data(results: &[RunSummary]) -> Result<PlotData> {
    let mut rows: Vec<&RunSummary> = results.iter().collect();
    rows.sort_by_key(|s| s.run_id);
    let traces: Vec<Vec<f64>> = rows.iter().map(|s| s.alpha_trace.clone()).collect();
    let alpha = alpha_trace_average(&traces)?
        .into_iter()
        .enumerate()
        .map(|(t, a)| (t as u64, a))
        .collect();
    let mut ellipses = Vec::new();
    for s in rows {
        for (stage, q) in [("initial", &s.initial_proposal), ("final", &s.final_proposal)] {
            for (i, (w, c)) in q.weights().iter().zip(q.components()).enumerate() {
                ellipses.push(EllipseRow {
                    run_id: s.run_id,
                    stage,
                    component: i,
                    weight: *w,
                    mean: c.mean().iter().copied().collect(),
                    ellipse: ellipse(c.cov().matrix()),
                });
            }
        }
    }
    Ok(PlotData { alpha, ellipses })
}

pub fn alpha_csv(plot: &PlotData) -> String {
    let mut out = String::from("t,mean_alpha\n");
    for (t, a) in &plot.alpha {
        let _ = writeln!(out, "{t},{}", fmt_num(*a));
    }
    out
}

pub fn ellipses_csv(plot: &PlotData) -> String {
    let Some(first) = plot.ellipses.first() else {
        return String::new();
    };
    let d = first.mean.len();
    let mut out = String::from("run_id,stage,component,weight");
    for k in 0..d {
        let _ = write!(out, ",mean_{k}");
    }
    for k in 0..d {
        let _ = write!(out, ",axis_{k}");
    }
    out.push_str(",orientation\n");
    for row in &plot.ellipses {
        let _ = write!(out, "{},{},{},{}", row.run_id, row.stage, row.component, fmt_num(row.weight));
        for v in &row.mean {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        for v in &row.ellipse.axes {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        let _ = writeln!(out, ",{}", fmt_opt(row.ellipse.orientation));
    }
    out
}

/// Writes `summary.csv`, `proposals.csv`, `alpha_trace.csv` and
/// `ellipses.csv` into `dir`, creating it if needed.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let plot = emit_plot_data(&outcome.summaries)?;
    let files = [
        ("summary.csv", summary_csv(outcome)),
        ("proposals.csv", proposals_csv(&outcome.summaries)),
        ("alpha_trace.csv", alpha_csv(&plot)),
        ("ellipses.csv", ellipses_csv(&plot)),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

/// Checks that `dir` can be created and written before any chain starts.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(probe)?;
    Ok(())
}
