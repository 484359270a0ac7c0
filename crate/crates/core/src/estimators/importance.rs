use super::EstimatorConfig;
use crate::error::{Error, Result};
use crate::numeric::{exact_sum, normal_quantile};
use crate::risk::{BoundMethod, Method, OutcomeFn, RiskEstimate, ScenarioDistribution, TraceRow};
use crate::sampling::try_map_chunks;

struct ChunkStats {
    /// Weighted terms at failures, in draw order.
    hits: Vec<f64>,
    sum_w: f64,
    sum_w2: f64,
    min_w: f64,
    max_w: f64,
}

fn log_density(d: &dyn ScenarioDistribution, x: &[f64], who: &str) -> Result<f64> {
    d.log_density(x).ok_or_else(|| Error::Unsupported(format!("{who} density is not evaluable")))
}

/// Importance sampling under `proposal`: the mean of `f(x) w(x)` with
/// `w = p_dist / p_proposal`, and a one-sided CLT bound on the weighted
/// terms. Fewer than two weighted failures give the vacuous bound 1.
///
/// A failure drawn where the proposal density is zero means the proposal
/// does not dominate `dist` there, and is reported as an error.
pub fn importance_sampling(
    dist: &dyn ScenarioDistribution,
    proposal: &dyn ScenarioDistribution,
    f: &dyn OutcomeFn,
    cfg: &EstimatorConfig,
) -> Result<RiskEstimate> {
    cfg.validate()?;
    if dist.dim() != proposal.dim() {
        return Err(Error::invalid("proposal and target dimensions differ"));
    }
    let chunks = try_map_chunks(cfg.seed, cfg.n, |range, rng| {
        let mut stats = ChunkStats { hits: Vec::new(), sum_w: 0.0, sum_w2: 0.0, min_w: f64::INFINITY, max_w: 0.0 };
        let mut ws = Vec::with_capacity(range.len());
        for _ in range {
            let x = proposal.sample(rng);
            let lq = log_density(proposal, &x, "proposal")?;
            let lp = log_density(dist, &x, "target")?;
            let fail = f.is_failure(&x);
            if lq == f64::NEG_INFINITY {
                if fail {
                    return Err(Error::DominationViolation { params: x });
                }
                continue;
            }
            let w = if lp == f64::NEG_INFINITY { 0.0 } else { (lp - lq).exp() };
            ws.push(w);
            if fail {
                stats.hits.push(w);
                stats.min_w = stats.min_w.min(w);
                stats.max_w = stats.max_w.max(w);
            }
        }
        stats.sum_w = exact_sum(ws.iter().copied());
        stats.sum_w2 = exact_sum(ws.iter().map(|w| w * w));
        Ok(stats)
    })?;

    let n = cfg.n as f64;
    let hits: Vec<f64> = chunks.iter().flat_map(|c| c.hits.iter().copied()).collect();
    let k = hits.len();
    let point = exact_sum(hits.iter().copied()) / n;
    // Zero terms contribute (0 - point)^2 each.
    let ss = exact_sum(hits.iter().map(|t| (t - point) * (t - point))) + (n - k as f64) * point * point;
    let sd = if cfg.n > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    let sum_w = exact_sum(chunks.iter().map(|c| c.sum_w));
    let sum_w2 = exact_sum(chunks.iter().map(|c| c.sum_w2));
    let ess = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };

    let (upper, bound_method) = if k < 2 {
        (1.0, BoundMethod::Vacuous)
    } else {
        ((point + normal_quantile(cfg.confidence) * sd / n.sqrt()).min(1.0), BoundMethod::ImportanceClt)
    };

    let mut trace = Vec::with_capacity(chunks.len());
    let mut running = Vec::new();
    let mut seen = 0usize;
    for (c, chunk) in chunks.iter().enumerate() {
        running.extend_from_slice(&chunk.hits);
        seen = (seen + crate::sampling::CHUNK_SIZE).min(cfg.n);
        let est = exact_sum(running.iter().copied()) / seen as f64;
        trace.push(TraceRow { stage: "is", index: c as u64, estimate: est, bound: f64::NAN, aux: chunk.hits.len() as f64 });
    }
    if let Some(last) = trace.last_mut() {
        last.bound = upper;
    }

    let min_w = chunks.iter().map(|c| c.min_w).fold(f64::INFINITY, f64::min);
    let max_w = chunks.iter().map(|c| c.max_w).fold(0.0, f64::max);
    let mut est = RiskEstimate::new(point, upper, cfg.confidence, Method::ImportanceSampling, bound_method, cfg.n as u64)
        .with_diag("ess", ess)
        .with_diag("hits", k as f64)
        .with_diag("term_sd", sd)
        .with_diag("degenerate", if k < 2 { 1.0 } else { 0.0 });
    if k > 0 {
        est = est.with_diag("min_weight_at_failure", min_w).with_diag("max_weight_at_failure", max_w);
    }
    est.trace = trace;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::cmc_estimate;
    use crate::risk::DynamicsLabel;
    use crate::testbeds::{GaussianDist, GaussianThresholdBed, ProposalFamily, Testbed};

    #[test]
    fn identity_proposal_matches_crude_monte_carlo() {
        let bed = GaussianThresholdBed::new(2, 2.0).unwrap();
        let dist = bed.true_distribution();
        let q = bed.proposal(&dist, ProposalFamily::default()).unwrap();
        let cfg = EstimatorConfig { n: 30_000, seed: 8, ..EstimatorConfig::default() };
        let is = importance_sampling(&dist, &q, &bed, &cfg).unwrap();
        let cmc = cmc_estimate(&dist, &bed, &cfg).unwrap();
        assert_eq!(is.point.to_bits(), cmc.point.to_bits());
        assert!((is.diagnostics["ess"] - 30_000.0).abs() < 1e-6);
    }

    #[test]
    fn shifted_proposal_is_accurate() {
        let tau = GaussianThresholdBed::tau_for(1e-3);
        let bed = GaussianThresholdBed::new(1, tau).unwrap();
        let dist = bed.true_distribution();
        let q = bed.proposal(&dist, ProposalFamily { shift: tau, scale: 1.0 }).unwrap();
        let cfg = EstimatorConfig { n: 10_000, seed: 2, ..EstimatorConfig::default() };
        let est = importance_sampling(&dist, &q, &bed, &cfg).unwrap();
        assert!(((est.point - 1e-3) / 1e-3).abs() < 0.05, "{}", est.point);
        assert!(est.upper_bound >= est.point);
    }

    #[test]
    fn zero_proposal_density_at_failure_is_an_error() {
        #[derive(Clone)]
        struct LeftHalf;
        impl ScenarioDistribution for LeftHalf {
            fn dim(&self) -> usize {
                1
            }
            fn label(&self) -> DynamicsLabel {
                DynamicsLabel::Proposal
            }
            fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
                let g = GaussianDist::standard(1);
                let x = g.sample(rng);
                vec![-x[0].abs()]
            }
            fn log_density(&self, x: &[f64]) -> Option<f64> {
                // Claims zero density everywhere above -1.
                Some(if x[0] > -1.0 { f64::NEG_INFINITY } else { 0.0 })
            }
        }
        let bed = GaussianThresholdBed::new(1, -0.5).unwrap();
        let dist = bed.true_distribution();
        let cfg = EstimatorConfig { n: 100, seed: 1, ..EstimatorConfig::default() };
        let err = importance_sampling(&dist, &LeftHalf, &bed, &cfg).unwrap_err();
        assert!(matches!(err, Error::DominationViolation { .. }));
    }
}
