//! Non-adaptive independent Metropolis-Hastings with a fixed mixture
//! proposal. This is the AGM sampler with adaptation switched off
//! (`t_stop = 0`), so both share one transition kernel.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gaussmix::MixtureProposal;
use crate::sampler::{mh_transition, AgmSampler, ChainRecord, SamplerConfig};
use crate::targets::Target;

/// One standard independent-MH iteration from `x_t` under `q_fixed`.
pub fn baseline_step<T: Target + ?Sized, R: Rng + ?Sized>(
    t: u64,
    x_t: &DVector<f64>,
    q_fixed: &MixtureProposal,
    target: &T,
    rng: &mut R,
) -> Result<(DVector<f64>, ChainRecord)> {
    let (next, alpha, accepted, proposed) = mh_transition(x_t, q_fixed, target, rng)?;
    let record = ChainRecord {
        t,
        state: next.clone(),
        proposed,
        alpha,
        accepted,
        assigned_component: None,
    };
    Ok((next, record))
}

/// Standard MH chain whose proposal stays at the initial configuration
/// described by `config`.
pub struct BaselineSampler<T> {
    inner: AgmSampler<T>,
}

impl<T: Target> BaselineSampler<T> {
    /// `config.t_stop` is overridden to 0; everything else (initial means,
    /// `x0`, seed) is used as given.
    pub fn new(target: T, config: SamplerConfig) -> Result<Self> {
        Ok(Self {
            inner: AgmSampler::new(target, Self::frozen(config))?,
        })
    }

    pub fn with_rng(target: T, config: SamplerConfig, rng: ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            inner: AgmSampler::with_rng(target, Self::frozen(config), rng)?,
        })
    }

    fn frozen(mut config: SamplerConfig) -> SamplerConfig {
        config.t_stop = Some(0);
        config
    }

    pub fn proposal(&self) -> &MixtureProposal {
        self.inner.proposal()
    }

    pub fn current(&self) -> &DVector<f64> {
        self.inner.current()
    }

    pub fn is_done(&self) -> bool {
        self.inner.is_done()
    }

    pub fn step(&mut self) -> Result<ChainRecord> {
        self.inner.step()
    }

    pub fn run(&mut self) -> Result<Vec<ChainRecord>> {
        self.inner.run()
    }

    pub fn into_inner(self) -> AgmSampler<T> {
        self.inner
    }
}
