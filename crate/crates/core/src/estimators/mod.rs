//! Estimators and upper bounds for small failure probabilities.

mod bounds;
mod cmc;
mod diagnostics;
mod gev;
mod importance;
mod mcmc;
mod scenario;
mod splitting;
mod subset;

use serde::{Deserialize, Serialize};

pub use bounds::{binomial_upper, clopper_pearson_upper, clt_error_bound, clt_width, hoeffding_upper};
pub use cmc::cmc_estimate;
pub use diagnostics::{diagnostics_csv, DIAGNOSTICS_HEADER};
pub use gev::{block_maxima, gev_estimate, gev_tail_fit, GevFit, GevParams};
pub use importance::importance_sampling;
pub use scenario::{var_scenario_bound, var_scenario_estimate, ScenarioVarBound};
pub use splitting::splitting_estimate;
pub use subset::subset_simulation;

use crate::error::{Error, Result};
use crate::risk::{Method, OutcomeFn, RiskEstimate, ScenarioDistribution};

/// Binomial upper bound used by crude Monte Carlo.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinomialBound {
    #[default]
    ClopperPearson,
    Hoeffding,
    /// Normal approximation; falls back to Clopper-Pearson when `k = 0`,
    /// `k = n` or `n < 30`.
    Clt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GevFitter {
    /// Probability-weighted moments.
    #[default]
    Pwm,
    /// Maximum likelihood started from the moment fit.
    Mle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Sample budget (per level for subset simulation, roots for splitting).
    pub n: usize,
    pub confidence: f64,
    pub seed: u64,
    pub bound: BinomialBound,
    /// Conditional level probability of subset simulation.
    pub rho: f64,
    pub max_levels: usize,
    /// Initial Metropolis step, in units of the per-component spread.
    pub step: f64,
    /// Offspring per survivor in multilevel splitting.
    pub split_factor: usize,
    /// Splitting levels on the metric, ascending; a final level 0 is
    /// appended when missing. `None` picks levels by a pilot run.
    pub split_levels: Option<Vec<f64>>,
    pub block_size: usize,
    pub epsilon: f64,
    pub gev_fitter: GevFitter,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            n: 10_000,
            confidence: 0.95,
            seed: 0,
            bound: BinomialBound::ClopperPearson,
            rho: 0.1,
            max_levels: 20,
            step: 1.0,
            split_factor: 10,
            split_levels: None,
            block_size: 50,
            epsilon: 0.01,
            gev_fitter: GevFitter::Pwm,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be >= 1"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho {} outside (0, 1)", self.rho)));
        }
        if self.block_size < 2 {
            return Err(Error::invalid("block size must be >= 2"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon {} outside (0, 1)", self.epsilon)));
        }
        if self.split_factor == 0 {
            return Err(Error::invalid("splitting factor must be >= 1"));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::invalid("Metropolis step must be positive"));
        }
        if self.max_levels == 0 {
            return Err(Error::invalid("max_levels must be >= 1"));
        }
        Ok(())
    }
}

/// Runs `method` on `dist`. Importance sampling needs a `proposal`.
pub fn run(
    method: Method,
    dist: &dyn ScenarioDistribution,
    f: &dyn OutcomeFn,
    cfg: &EstimatorConfig,
    proposal: Option<&dyn ScenarioDistribution>,
) -> Result<RiskEstimate> {
    match method {
        Method::Cmc => cmc_estimate(dist, f, cfg),
        Method::ImportanceSampling => {
            let q = proposal.ok_or_else(|| Error::invalid("importance sampling needs a proposal"))?;
            importance_sampling(dist, q, f, cfg)
        }
        Method::SubsetSimulation => subset_simulation(dist, f, cfg),
        Method::Splitting => splitting_estimate(dist, f, cfg),
        Method::VarScenario => var_scenario_estimate(dist, f, cfg),
        Method::Gev => gev_estimate(dist, f, cfg),
    }
}

/// Continuous metric at `x`, or an error naming the estimator that needs it.
pub(crate) fn require_metric(f: &dyn OutcomeFn, x: &[f64], who: &str) -> Result<f64> {
    match f.metric(x) {
        Some(y) if !y.is_nan() => Ok(y),
        Some(_) => Err(Error::invalid(format!("{who}: metric returned NaN at {x:?}"))),
        None => Err(Error::Unsupported(format!("{who} needs a continuous safety metric"))),
    }
}
