use rayon::prelude::*;

use super::mcmc::{initial_state, spread, step, LevelSet, State};
use super::EstimatorConfig;
use crate::error::{Error, Result};
use crate::numeric::normal_quantile;
use crate::risk::{BoundMethod, Method, OutcomeFn, RiskEstimate, ScenarioDistribution, TraceRow};
use crate::sampling::{derive_seed, stream_rng, try_map_chunks};

const WHO: &str = "subset simulation";

/// Result of a subset run, with the intermediate thresholds.
pub(crate) struct SubsetRun {
    pub estimate: RiskEstimate,
    pub thresholds: Vec<f64>,
}

/// Subset simulation on the metric `Y` (failure iff `Y > 0`).
///
/// Each level keeps the `rho * n` largest metric values as seeds, sets the
/// next threshold at the smallest of them, and grows `1 / rho` states per
/// seed by component-wise Metropolis moves conditioned on the threshold.
/// Level 0 draws exactly the crude Monte Carlo sample of the same seed, so
/// a failure region of probability at least `rho` reproduces crude Monte
/// Carlo. The step multiplier shrinks by 0.6 after a level with acceptance
/// below 30% and grows by 1.5 above 50%.
///
/// The upper bound `p (1 + z delta)` uses the usual coefficient-of-variation
/// approximation with chain correlation; it is asymptotic, not exact.
pub fn subset_simulation(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, cfg: &EstimatorConfig) -> Result<RiskEstimate> {
    Ok(run(dist, f, cfg)?.estimate)
}

pub(crate) fn run(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, cfg: &EstimatorConfig) -> Result<SubsetRun> {
    cfg.validate()?;
    if dist.is_discrete() {
        return Err(Error::Unsupported("subset simulation needs a continuous scenario law".into()));
    }
    let n = cfg.n;
    let seeds = (cfg.rho * n as f64).round() as usize;
    if seeds == 0 || seeds >= n || n % seeds != 0 {
        return Err(Error::invalid(format!(
            "subset simulation needs rho * n to be a whole divisor of n (n = {n}, rho = {})",
            cfg.rho
        )));
    }
    let chain_len = n / seeds;

    let level0 = try_map_chunks(cfg.seed, n, |range, rng| {
        range.map(|_| initial_state(dist, f, dist.sample(rng), WHO)).collect::<Result<Vec<_>>>()
    })?;
    let mut pop: Vec<State> = level0.into_iter().flatten().collect();
    // Whether `pop` is laid out as consecutive chains (not at level 0).
    let mut chained = false;

    let z = normal_quantile(cfg.confidence);
    let mut p = 1.0;
    let mut delta2 = 0.0;
    let mut multiplier = cfg.step;
    let mut evaluations = n as u64;
    let mut thresholds = Vec::new();
    let mut trace = vec![];
    let mut est_diag = Vec::new();

    for level in 0.. {
        let fails = pop.iter().filter(|s| s.y > 0.0).count();
        if fails >= seeds {
            let pj = fails as f64 / n as f64;
            let gamma = if chained { correlation_factor(&pop, chain_len, |y| y > 0.0) } else { 0.0 };
            delta2 += (1.0 - pj) / (pj * n as f64) * (1.0 + gamma);
            p *= pj;
            est_diag.push((format!("gamma_{level}"), gamma));
            est_diag.push(("final_conditional".into(), pj));
            trace.push(TraceRow { stage: "subset_final", index: level as u64, estimate: p, bound: 0.0, aux: fails as f64 });
            break;
        }
        if level >= cfg.max_levels {
            return Err(Error::LevelLimit { max_levels: cfg.max_levels });
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| pop[b].y.total_cmp(&pop[a].y).then(a.cmp(&b)));
        let threshold = pop[order[seeds - 1]].y;
        let pj = seeds as f64 / n as f64;
        let gamma = if chained { correlation_factor(&pop, chain_len, |y| y >= threshold) } else { 0.0 };
        delta2 += (1.0 - pj) / (pj * n as f64) * (1.0 + gamma);
        p *= pj;
        thresholds.push(threshold);
        est_diag.push((format!("threshold_{}", level + 1), threshold));
        est_diag.push((format!("gamma_{level}"), gamma));

        let seed_states: Vec<&State> = order[..seeds].iter().map(|&i| &pop[i]).collect();
        let scales: Vec<f64> = spread(&seed_states).into_iter().map(|s| s * multiplier).collect();
        let set = LevelSet { threshold, strict: false };
        let level_seed = derive_seed(cfg.seed, 1 + level as u64);
        let chains: Vec<(Vec<State>, u64)> = seed_states
            .par_iter()
            .enumerate()
            .map(|(c, start)| {
                let mut rng = stream_rng(level_seed, c as u64);
                let mut state = (*start).clone();
                let mut states = Vec::with_capacity(chain_len);
                states.push(state.clone());
                let mut accepted = 0u64;
                for _ in 1..chain_len {
                    if step(dist, f, &mut state, set, &scales, &mut rng, WHO)? {
                        accepted += 1;
                    }
                    states.push(state.clone());
                }
                Ok((states, accepted))
            })
            .collect::<Result<Vec<_>>>()?;

        let moves = (seeds * (chain_len - 1)) as f64;
        let accepted: u64 = chains.iter().map(|c| c.1).sum();
        let acceptance = if moves > 0.0 { accepted as f64 / moves } else { 1.0 };
        evaluations += (seeds * (chain_len - 1)) as u64;
        est_diag.push((format!("acceptance_{}", level + 1), acceptance));
        trace.push(TraceRow { stage: "subset", index: level as u64 + 1, estimate: p, bound: threshold, aux: acceptance });
        if acceptance < 0.01 {
            return Err(Error::DegenerateChain { level: level + 1, acceptance });
        }
        if acceptance < 0.3 {
            multiplier *= 0.6;
        } else if acceptance > 0.5 {
            multiplier *= 1.5;
        }
        pop = chains.into_iter().flat_map(|c| c.0).collect();
        chained = true;
    }

    let cov = delta2.sqrt();
    let upper = (p * (1.0 + z * cov)).min(1.0);
    let mut estimate = RiskEstimate::new(p, upper, cfg.confidence, Method::SubsetSimulation, BoundMethod::SubsetCov, evaluations)
        .with_diag("levels", thresholds.len() as f64 + 1.0)
        .with_diag("cov", cov);
    for (k, v) in est_diag {
        estimate.diagnostics.insert(k, v);
    }
    estimate.trace = trace;
    Ok(SubsetRun { estimate, thresholds })
}

/// `gamma = 2 sum_k (1 - k/L) r_k / r_0` over chains of length `L` laid out
/// contiguously in `pop`, for the indicator `hit(y)`.
fn correlation_factor(pop: &[State], chain_len: usize, hit: impl Fn(f64) -> bool) -> f64 {
    let n = pop.len();
    let chains = n / chain_len;
    let ind: Vec<f64> = pop.iter().map(|s| if hit(s.y) { 1.0 } else { 0.0 }).collect();
    let p = ind.iter().sum::<f64>() / n as f64;
    let r0 = p * (1.0 - p);
    if r0 <= 0.0 {
        return 0.0;
    }
    let mut gamma = 0.0;
    for lag in 1..chain_len {
        let mut acc = 0.0;
        for c in 0..chains {
            let base = c * chain_len;
            for t in 0..chain_len - lag {
                acc += ind[base + t] * ind[base + t + lag];
            }
        }
        let r = acc / (n - lag * chains) as f64 - p * p;
        gamma += 2.0 * (1.0 - lag as f64 / chain_len as f64) * r / r0;
    }
    gamma.max(0.0)
}
