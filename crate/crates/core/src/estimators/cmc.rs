use super::{binomial_upper, EstimatorConfig};
use crate::error::Result;
use crate::risk::{Method, OutcomeFn, RiskEstimate, ScenarioDistribution, TraceRow};
use crate::sampling::map_chunks;

/// Crude Monte Carlo: `k / n` over `n` independent draws, with the
/// configured binomial upper bound. The trace has one row per chunk with
/// the running estimate and bound.
pub fn cmc_estimate(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, cfg: &EstimatorConfig) -> Result<RiskEstimate> {
    cfg.validate()?;
    let counts = map_chunks(cfg.seed, cfg.n, |range, rng| {
        let len = range.len() as u64;
        let k = range.filter(|_| f.is_failure(&dist.sample(rng))).count() as u64;
        (k, len)
    });

    let mut trace = Vec::with_capacity(counts.len());
    let (mut k, mut m) = (0u64, 0u64);
    for (c, &(kc, len)) in counts.iter().enumerate() {
        k += kc;
        m += len;
        let (bound, _) = binomial_upper(k, m, cfg.confidence, cfg.bound)?;
        trace.push(TraceRow { stage: "cmc", index: c as u64, estimate: k as f64 / m as f64, bound, aux: kc as f64 });
    }

    let n = cfg.n as u64;
    let (upper, bound_method) = binomial_upper(k, n, cfg.confidence, cfg.bound)?;
    let mut est = RiskEstimate::new(k as f64 / n as f64, upper, cfg.confidence, Method::Cmc, bound_method, n)
        .with_diag("k", k as f64);
    est.trace = trace;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::FnOutcome;
    use crate::testbeds::{GaussianThresholdBed, Testbed};

    #[test]
    fn constant_outcomes() {
        let bed = GaussianThresholdBed::new(1, 0.0).unwrap();
        let dist = bed.true_distribution();
        let cfg = EstimatorConfig { n: 1000, seed: 1, ..EstimatorConfig::default() };
        let never = FnOutcome(|_: &[f64]| false);
        let always = FnOutcome(|_: &[f64]| true);
        assert_eq!(cmc_estimate(&dist, &never, &cfg).unwrap().point, 0.0);
        let one = cmc_estimate(&dist, &always, &cfg).unwrap();
        assert_eq!(one.point, 1.0);
        assert_eq!(one.upper_bound, 1.0);
    }

    #[test]
    fn worker_count_does_not_matter() {
        let bed = GaussianThresholdBed::new(2, 1.0).unwrap();
        let dist = bed.true_distribution();
        let cfg = EstimatorConfig { n: 50_000, seed: 42, ..EstimatorConfig::default() };
        let one = crate::sampling::with_workers(1, || cmc_estimate(&dist, &bed, &cfg).unwrap()).unwrap();
        let many = crate::sampling::with_workers(7, || cmc_estimate(&dist, &bed, &cfg).unwrap()).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn trace_ends_at_the_estimate() {
        let bed = GaussianThresholdBed::new(1, 1.0).unwrap();
        let dist = bed.true_distribution();
        let cfg = EstimatorConfig { n: 10_000, seed: 3, ..EstimatorConfig::default() };
        let est = cmc_estimate(&dist, &bed, &cfg).unwrap();
        let last = est.trace.last().unwrap();
        assert_eq!(last.estimate, est.point);
        assert_eq!(last.bound, est.upper_bound);
    }
}
