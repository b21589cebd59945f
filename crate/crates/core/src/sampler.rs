//! Adaptive independent Metropolis-Hastings with a Gaussian-mixture proposal
//! whose weights, means and covariances are learned from the chain.
//!
//! Each iteration proposes from the current mixture, accepts or rejects
//! with the independent-MH ratio, and then (while `t < t_stop`) credits the
//! new state to the component with the nearest mean. Component parameters
//! are only republished once `t > t_train`; before that the chain merely
//! collects assignments.
//!
//! Two update paths exist. [`AdaptiveState::block_update`] recomputes a
//! component from its full history of assigned points. The production path,
//! [`AdaptiveState::recursive_update`], publishes from running moments that
//! are folded in point by point, so history need not be stored. The two
//! agree to rounding error.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmix::{Covariance, GaussianComponent, MixtureProposal};
use crate::targets::Target;

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Extra diagonal loading, in multiples of epsilon, applied on the single
/// retry after a failed covariance factorization.
pub const RETRY_LOADING: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "box has bounds of length {}/{}, expected {dim}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h)
        {
            return Err(Error::InvalidConfig("box bounds must be finite with lo <= hi".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.lo.len(),
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>()),
        )
    }

    pub fn widest_side(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .fold(0.0, f64::max)
    }
}

/// How the initial component means are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMeans {
    Explicit { means: Vec<Vec<f64>> },
    /// Every mean drawn uniformly from the same box.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Mean `i` drawn uniformly from `boxes[i]`.
    PerComponentBox { boxes: Vec<BoxRegion> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    StandardNormal,
    Point { point: Vec<f64> },
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// Schedule and initialization of one chain.
///
/// `t_stop = None` means adaptation runs for the whole chain. `t_stop = 0`
/// freezes the proposal from the start, which is the non-adaptive baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub components: usize,
    pub t_train: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_stop: Option<u64>,
    pub t_tot: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub init_means: InitMeans,
    pub init_sigma2: f64,
    #[serde(default)]
    pub x0: InitialState,
    #[serde(default)]
    pub seed: u64,
}

impl SamplerConfig {
    pub fn t_stop(&self) -> u64 {
        self.t_stop.unwrap_or(self.t_tot)
    }

    pub fn adaptive(&self) -> bool {
        self.t_stop() > 0
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if dim == 0 {
            return bad("target dimension must be positive".into());
        }
        if self.components == 0 {
            return bad("need at least one mixture component".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.init_sigma2 > 0.0 && self.init_sigma2.is_finite()) {
            return bad(format!("init_sigma2 must be positive, got {}", self.init_sigma2));
        }
        if self.t_tot == 0 {
            return bad("t_tot must be positive".into());
        }
        let t_stop = self.t_stop();
        if t_stop > self.t_tot {
            return bad(format!("t_stop ({t_stop}) exceeds t_tot ({})", self.t_tot));
        }
        if t_stop > 0 && self.t_train >= t_stop {
            return bad(format!(
                "t_train ({}) must be below t_stop ({t_stop})",
                self.t_train
            ));
        }
        match &self.init_means {
            InitMeans::Explicit { means } => {
                if means.len() != self.components {
                    return bad(format!(
                        "{} explicit means for {} components",
                        means.len(),
                        self.components
                    ));
                }
                if means.iter().any(|m| m.len() != dim || m.iter().any(|v| !v.is_finite())) {
                    return bad(format!("explicit means must be finite vectors of length {dim}"));
                }
            }
            InitMeans::UniformBox { lo, hi } => BoxRegion::new(lo.clone(), hi.clone()).validate(dim)?,
            InitMeans::PerComponentBox { boxes } => {
                if boxes.len() != self.components {
                    return bad(format!(
                        "{} boxes for {} components",
                        boxes.len(),
                        self.components
                    ));
                }
                for b in boxes {
                    b.validate(dim)?;
                }
            }
        }
        if let InitialState::Point { point } = &self.x0 {
            if point.len() != dim || point.iter().any(|v| !v.is_finite()) {
                return bad(format!("x0 must be a finite vector of length {dim}"));
            }
        }
        Ok(())
    }

    /// Draws (or copies) the initial means and builds the equal-weight
    /// proposal with `C_i = init_sigma2 * I`.
    pub fn initial_proposal<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<MixtureProposal> {
        self.validate(dim)?;
        let means: Vec<DVector<f64>> = match &self.init_means {
            InitMeans::Explicit { means } => means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            InitMeans::UniformBox { lo, hi } => {
                let b = BoxRegion::new(lo.clone(), hi.clone());
                (0..self.components).map(|_| b.sample(rng)).collect()
            }
            InitMeans::PerComponentBox { boxes } => boxes.iter().map(|b| b.sample(rng)).collect(),
        };
        let cov = Covariance::isotropic(dim, self.init_sigma2)?;
        let components = means
            .into_iter()
            .map(|m| GaussianComponent::new(m, cov.clone()))
            .collect::<Result<Vec<_>>>()?;
        MixtureProposal::uniform(components)
    }

    pub fn initial_point<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> DVector<f64> {
        match &self.x0 {
            InitialState::StandardNormal => {
                DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
            }
            InitialState::Point { point } => DVector::from_column_slice(point),
        }
    }
}

/// Black-box configuration when nothing is known about the target beyond a
/// region that should contain its mass: means uniform over `region`, a
/// broad isotropic `C_i = (widest side / 4)^2 I`, and `t_train = 100 d`.
pub fn blackbox_init<R: Rng + ?Sized>(
    dim: usize,
    region: &BoxRegion,
    components: usize,
    t_tot: u64,
    rng: &mut R,
) -> Result<SamplerConfig> {
    region.validate(dim)?;
    let means = (0..components)
        .map(|_| region.sample(rng).iter().copied().collect())
        .collect();
    let side = region.widest_side();
    let init_sigma2 = if side > 0.0 { (side / 4.0).powi(2) } else { 1.0 };
    let cfg = SamplerConfig {
        components,
        t_train: 100 * dim as u64,
        t_stop: None,
        t_tot,
        epsilon: DEFAULT_EPSILON,
        init_means: InitMeans::Explicit { means },
        init_sigma2,
        x0: InitialState::StandardNormal,
        seed: rng.random(),
    };
    cfg.validate(dim)?;
    Ok(cfg)
}

/// Running mean and scatter matrix `sum (s - mean)(s - mean)^T` of the
/// points credited to one component, including its initial mean.
#[derive(Debug, Clone, PartialEq)]
struct RunningMoments {
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl RunningMoments {
    fn seeded(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            mean,
            scatter: DMatrix::zeros(d, d),
        }
    }

    /// Folds in the `m`-th point. With `r = x - mean_new`:
    ///   mean_new = x / m + (m - 1) / m * mean_old
    ///   scatter += m / (m - 1) * r r^T
    ///
    /// Published as `C = scatter / (m - 1) + eps I`, this gives
    ///   C_new = (m - 2)/(m - 1) C_old + [m/(m - 1) r r^T + eps I] / (m - 1).
    fn push(&mut self, x: &DVector<f64>, m: u64) {
        debug_assert!(m >= 2);
        let mf = m as f64;
        self.mean = x / mf + &self.mean * ((mf - 1.0) / mf);
        let r = x - &self.mean;
        self.scatter += (&r * r.transpose()) * (mf / (mf - 1.0));
    }
}

/// Factorizes `cov`; on failure symmetrizes and adds `RETRY_LOADING * eps`
/// to the diagonal once. A second failure is a hard error.
fn regularized_covariance(cov: DMatrix<f64>, epsilon: f64, component: usize) -> Result<Covariance> {
    match Covariance::new(cov.clone()) {
        Ok(c) => Ok(c),
        Err(_) => {
            let d = cov.nrows();
            let sym = (&cov + cov.transpose()) * 0.5 + DMatrix::identity(d, d) * (RETRY_LOADING * epsilon);
            Covariance::new(sym).map_err(|_| Error::CovarianceBreakdown { component })
        }
    }
}

/// Everything the sampler learns: the published proposal, per-component
/// running moments, and (optionally) the full assignment history.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    proposal: MixtureProposal,
    moments: Vec<RunningMoments>,
    history: Option<Vec<Vec<DVector<f64>>>>,
    assignments: u64,
    t: u64,
}

impl AdaptiveState {
    /// Production state: no history is kept.
    pub fn new(proposal: MixtureProposal) -> Self {
        Self::build(proposal, false)
    }

    /// Keeps every assigned point so [`block_update`](Self::block_update)
    /// can be used. Memory grows linearly with the chain.
    pub fn with_history(proposal: MixtureProposal) -> Self {
        Self::build(proposal, true)
    }

    fn build(mut proposal: MixtureProposal, keep_history: bool) -> Self {
        for i in 0..proposal.len() {
            proposal.component_mut(i).set_count(1);
        }
        let moments = proposal
            .components()
            .iter()
            .map(|c| RunningMoments::seeded(c.mean().clone()))
            .collect();
        let history = keep_history.then(|| {
            proposal
                .components()
                .iter()
                .map(|c| vec![c.mean().clone()])
                .collect()
        });
        Self {
            proposal,
            moments,
            history,
            assignments: 0,
            t: 0,
        }
    }

    pub fn proposal(&self) -> &MixtureProposal {
        &self.proposal
    }

    pub fn counts(&self) -> Vec<u64> {
        self.proposal.components().iter().map(|c| c.count()).collect()
    }

    /// Number of assignment steps executed so far.
    pub fn assignments(&self) -> u64 {
        self.assignments
    }

    /// Index of the next iteration.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Per-component matrices of assigned points (columns), if retained.
    pub fn history(&self) -> Option<&[Vec<DVector<f64>>]> {
        self.history.as_deref()
    }

    /// Credits `x` to component `j`: increments `m_j`, appends `x` to the
    /// history if kept, and folds `x` into the running moments. Published
    /// parameters do not change.
    pub fn record(&mut self, j: usize, x: &DVector<f64>) {
        let comp = self.proposal.component_mut(j);
        let m = comp.count() + 1;
        comp.set_count(m);
        self.moments[j].push(x, m);
        if let Some(h) = &mut self.history {
            h[j].push(x.clone());
        }
        self.assignments += 1;
    }

    /// Publishes component `j` from its running moments and recomputes all
    /// weights as `m_i / sum m_k`.
    pub fn recursive_update(&mut self, j: usize, epsilon: f64) -> Result<()> {
        let m = self.proposal.component(j).count();
        if m >= 2 {
            let d = self.proposal.dim();
            let mom = &self.moments[j];
            let cov = &mom.scatter / (m - 1) as f64 + DMatrix::identity(d, d) * epsilon;
            let cov = regularized_covariance(cov, epsilon, j)?;
            self.proposal.component_mut(j).set_params(mom.mean.clone(), cov);
        }
        self.reweight();
        Ok(())
    }

    /// Recomputes component `j` from its full history:
    /// `mu = column mean`, `C = (S~ S~^T + (m - 1) eps I) / (m - 1)` where
    /// `S~` is the history with `mu` subtracted from every column. Weights
    /// are recomputed as in [`recursive_update`](Self::recursive_update).
    pub fn block_update(&mut self, j: usize, epsilon: f64) -> Result<()> {
        let history = self
            .history
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("block_update needs a state with history".into()))?;
        let cols = &history[j];
        let m = cols.len();
        debug_assert_eq!(m as u64, self.proposal.component(j).count());
        if m >= 2 {
            let d = self.proposal.dim();
            let s = DMatrix::from_columns(cols);
            let mean = s.column_mean();
            let mut centered = s;
            for mut col in centered.column_iter_mut() {
                col -= &mean;
            }
            let mf = (m - 1) as f64;
            let cov = (&centered * centered.transpose() + DMatrix::identity(d, d) * (mf * epsilon)) / mf;
            let cov = regularized_covariance(cov, epsilon, j)?;
            self.proposal.component_mut(j).set_params(mean, cov);
        }
        self.reweight();
        Ok(())
    }

    fn reweight(&mut self) {
        let counts = self.counts();
        let total: u64 = counts.iter().sum();
        self.proposal
            .set_weights(counts.iter().map(|&m| m as f64 / total as f64).collect());
    }
}

/// Index of the component whose mean is closest to `x` in Euclidean
/// distance. Ties go to the lowest index.
pub fn assign_component(x: &[f64], q: &MixtureProposal) -> usize {
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (i, c) in q.components().iter().enumerate() {
        let d2: f64 = c.mean().iter().zip(x).map(|(m, v)| (m - v) * (m - v)).sum();
        if d2 < best_d2 {
            best = i;
            best_d2 = d2;
        }
    }
    best
}

fn target_log_density<T: Target + ?Sized>(target: &T, x: &[f64]) -> f64 {
    if !target.support().contains(x) {
        return f64::NEG_INFINITY;
    }
    let lp = target.log_density(x);
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// `min(1, exp(log_num - log_den))` with `log_num = log p(x') + log q(x_t)`.
fn acceptance_from_logs(lp_prop: f64, lq_curr: f64, lp_curr: f64, lq_prop: f64) -> f64 {
    if lp_prop == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_ratio = (lp_prop + lq_curr) - (lp_curr + lq_prop);
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// Independent-MH acceptance probability for moving from `x_curr` to
/// `x_prop` under proposal `q`.
pub fn acceptance_probability<T: Target + ?Sized>(
    x_curr: &[f64],
    x_prop: &[f64],
    target: &T,
    q: &MixtureProposal,
) -> Result<f64> {
    let lp_curr = target_log_density(target, x_curr);
    if lp_curr == f64::NEG_INFINITY {
        return Err(Error::InvalidChainState);
    }
    let lp_prop = target_log_density(target, x_prop);
    let lq_curr = q.log_density(x_curr)?;
    let lq_prop = q.log_density(x_prop)?;
    Ok(acceptance_from_logs(lp_prop, lq_curr, lp_curr, lq_prop))
}

/// One iteration's trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub t: u64,
    /// `x_{t+1}`.
    pub state: DVector<f64>,
    pub proposed: DVector<f64>,
    pub alpha: f64,
    pub accepted: bool,
    /// Component credited with `x_{t+1}`; `None` once adaptation has stopped.
    pub assigned_component: Option<usize>,
}

/// Propose from `q`, then accept or reject. Consumes `d + 2` draws: one
/// categorical, `d` normals, one uniform for the accept test.
pub(crate) fn mh_transition<T: Target + ?Sized, R: Rng + ?Sized>(
    x_t: &DVector<f64>,
    q: &MixtureProposal,
    target: &T,
    rng: &mut R,
) -> Result<(DVector<f64>, f64, bool, DVector<f64>)> {
    let lp_curr = target_log_density(target, x_t.as_slice());
    if lp_curr == f64::NEG_INFINITY {
        return Err(Error::InvalidChainState);
    }
    let (_, proposed) = q.sample(rng);
    let lp_prop = target_log_density(target, proposed.as_slice());
    let lq_curr = q.log_density_unchecked(x_t.as_slice());
    let lq_prop = q.log_density_unchecked(proposed.as_slice());
    let alpha = acceptance_from_logs(lp_prop, lq_curr, lp_curr, lq_prop);
    let accepted = rng.random::<f64>() < alpha;
    let next = if accepted { proposed.clone() } else { x_t.clone() };
    Ok((next, alpha, accepted, proposed))
}

/// One full AGM-MH iteration at `t = state.t()`.
pub fn step<T: Target + ?Sized, R: Rng + ?Sized>(
    state: &mut AdaptiveState,
    x_t: &DVector<f64>,
    target: &T,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(DVector<f64>, ChainRecord)> {
    let t = state.t;
    let (next, alpha, accepted, proposed) = mh_transition(x_t, &state.proposal, target, rng)?;
    let mut assigned = None;
    if t < cfg.t_stop() {
        let j = assign_component(next.as_slice(), &state.proposal);
        state.record(j, &next);
        if t > cfg.t_train {
            state.recursive_update(j, cfg.epsilon)?;
        }
        assigned = Some(j);
    }
    state.t += 1;
    let record = ChainRecord {
        t,
        state: next.clone(),
        proposed,
        alpha,
        accepted,
        assigned_component: assigned,
    };
    Ok((next, record))
}

/// A single AGM-MH chain that owns its target, state and random stream.
pub struct AgmSampler<T> {
    target: T,
    config: SamplerConfig,
    initial: MixtureProposal,
    x0: DVector<f64>,
    state: AdaptiveState,
    current: DVector<f64>,
    rng: ChaCha8Rng,
}

impl<T: Target> AgmSampler<T> {
    /// Seeds a ChaCha8 stream from `config.seed`, then draws the initial
    /// means followed by `x0`.
    pub fn new(target: T, config: SamplerConfig) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::with_rng(target, config, rng)
    }

    pub fn with_rng(target: T, config: SamplerConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        let dim = target.dim();
        let initial = config.initial_proposal(dim, &mut rng)?;
        let x0 = config.initial_point(dim, &mut rng);
        if target_log_density(&target, x0.as_slice()) == f64::NEG_INFINITY {
            return Err(Error::InvalidChainState);
        }
        Ok(Self {
            target,
            state: AdaptiveState::new(initial.clone()),
            initial,
            current: x0.clone(),
            x0,
            config,
            rng,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn target(&self) -> &T {
        &self.target
    }

    pub fn initial_proposal(&self) -> &MixtureProposal {
        &self.initial
    }

    pub fn proposal(&self) -> &MixtureProposal {
        self.state.proposal()
    }

    pub fn state(&self) -> &AdaptiveState {
        &self.state
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn current(&self) -> &DVector<f64> {
        &self.current
    }

    pub fn t(&self) -> u64 {
        self.state.t
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.config.t_tot
    }

    pub fn step(&mut self) -> Result<ChainRecord> {
        let (next, record) = step(
            &mut self.state,
            &self.current,
            &self.target,
            &self.config,
            &mut self.rng,
        )?;
        self.current = next;
        Ok(record)
    }

    /// Runs the remaining iterations up to `t_tot`.
    pub fn run(&mut self) -> Result<Vec<ChainRecord>> {
        let remaining = self.config.t_tot.saturating_sub(self.state.t) as usize;
        let mut out = Vec::with_capacity(remaining);
        while !self.is_done() {
            out.push(self.step()?);
        }
        Ok(out)
    }
}
