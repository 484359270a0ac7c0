use serde::{Deserialize, Serialize};

use super::{require_metric, EstimatorConfig};
use crate::error::{Error, Result};
use crate::risk::{BoundMethod, Method, OutcomeFn, RiskEstimate, ScenarioDistribution};
use crate::sampling::try_map_chunks;

/// Solution of the one-dimensional scenario program for the `(1 - eps)`
/// value-at-risk of a safety metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVarBound {
    /// Largest sampled metric value.
    pub zeta_star: f64,
    /// `1 - (1 - eps)^N`.
    pub confidence: f64,
    pub epsilon: f64,
    pub n: u64,
    /// `zeta_star <= 0`: the failure rate is at most `epsilon` with the
    /// stated confidence.
    pub certified: bool,
}

/// With probability `1 - (1 - eps)^N` over the sample, `P(Y > zeta_star)`
/// is at most `eps`.
pub fn var_scenario_bound(samples: &[f64], epsilon: f64) -> Result<ScenarioVarBound> {
    if samples.is_empty() {
        return Err(Error::invalid("scenario bound needs at least one sample"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside (0, 1)")));
    }
    if samples.iter().any(|y| y.is_nan()) {
        return Err(Error::invalid("NaN metric sample"));
    }
    let zeta_star = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = samples.len() as u64;
    let confidence = -(n as f64 * (-epsilon).ln_1p()).exp_m1();
    Ok(ScenarioVarBound { zeta_star, confidence, epsilon, n, certified: zeta_star <= 0.0 })
}

/// Draws `cfg.n` metric samples and applies [`var_scenario_bound`] at
/// `cfg.epsilon`. Certified runs report `epsilon` as the upper bound;
/// otherwise the bound is vacuous.
pub fn var_scenario_estimate(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, cfg: &EstimatorConfig) -> Result<RiskEstimate> {
    cfg.validate()?;
    let ys = try_map_chunks(cfg.seed, cfg.n, |range, rng| {
        range.map(|_| require_metric(f, &dist.sample(rng), "scenario VaR bound")).collect::<Result<Vec<_>>>()
    })?;
    let ys: Vec<f64> = ys.into_iter().flatten().collect();
    let bound = var_scenario_bound(&ys, cfg.epsilon)?;
    let k = ys.iter().filter(|&&y| y > 0.0).count();
    let (upper, method) = if bound.certified { (cfg.epsilon, BoundMethod::ScenarioVar) } else { (1.0, BoundMethod::Vacuous) };
    Ok(RiskEstimate::new(k as f64 / ys.len() as f64, upper, bound.confidence, Method::VarScenario, method, ys.len() as u64)
        .with_diag("zeta_star", bound.zeta_star)
        .with_diag("epsilon", cfg.epsilon)
        .with_diag("certified", if bound.certified { 1.0 } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_confidence() {
        let b = var_scenario_bound(&vec![-1.0; 1000], 0.01).unwrap();
        assert!(b.certified);
        assert!((b.confidence - 0.999957).abs() < 1e-6, "{}", b.confidence);
    }

    #[test]
    fn single_sample() {
        let b = var_scenario_bound(&[-3.0], 0.5).unwrap();
        assert_eq!(b.confidence, 0.5);
    }

    #[test]
    fn violated_scenario_is_not_certified() {
        let b = var_scenario_bound(&[-1.0, 0.2, -5.0], 0.1).unwrap();
        assert!(!b.certified);
        assert_eq!(b.zeta_star, 0.2);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(var_scenario_bound(&[], 0.1).is_err());
    }
}
