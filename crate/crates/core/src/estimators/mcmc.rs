//! Component-wise Metropolis moves restricted to a metric level set.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::require_metric;
use crate::error::{Error, Result};
use crate::risk::{OutcomeFn, ScenarioDistribution};

/// A chain state: parameters, metric value and log density.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub x: Vec<f64>,
    pub y: f64,
    pub log_density: f64,
}

/// Level set `{y >= threshold}` (or `{y > threshold}` when `strict`).
#[derive(Debug, Clone, Copy)]
pub(crate) struct LevelSet {
    pub threshold: f64,
    pub strict: bool,
}

impl LevelSet {
    pub fn contains(&self, y: f64) -> bool {
        if self.strict {
            y > self.threshold
        } else {
            y >= self.threshold
        }
    }
}

pub(crate) fn initial_state(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, x: Vec<f64>, who: &str) -> Result<State> {
    let y = require_metric(f, &x, who)?;
    let log_density = dist
        .log_density(&x)
        .ok_or_else(|| Error::Unsupported(format!("{who} needs an evaluable density")))?;
    Ok(State { x, y, log_density })
}

/// One modified-Metropolis move: each component is perturbed by a normal
/// step and accepted against the density ratio; the resulting candidate is
/// kept only if it stays in the level set. Returns whether the state moved.
pub(crate) fn step(
    dist: &dyn ScenarioDistribution,
    f: &dyn OutcomeFn,
    state: &mut State,
    level: LevelSet,
    scales: &[f64],
    rng: &mut dyn RngCore,
    who: &str,
) -> Result<bool> {
    let mut cand = state.x.clone();
    let mut cand_lp = state.log_density;
    let mut changed = false;
    for (i, &s) in scales.iter().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        let u: f64 = rng.random();
        let old = cand[i];
        cand[i] = old + s * z;
        let lp = dist
            .log_density(&cand)
            .ok_or_else(|| Error::Unsupported(format!("{who} needs an evaluable density")))?;
        if lp > f64::NEG_INFINITY && u.ln() < lp - cand_lp {
            cand_lp = lp;
            changed = true;
        } else {
            cand[i] = old;
        }
    }
    if !changed {
        return Ok(false);
    }
    let y = require_metric(f, &cand, who)?;
    if level.contains(y) {
        *state = State { x: cand, y, log_density: cand_lp };
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Per-component standard deviation of `states`, 1 where degenerate.
pub(crate) fn spread(states: &[&State]) -> Vec<f64> {
    let d = states[0].x.len();
    (0..d)
        .map(|i| {
            let v: Vec<f64> = states.iter().map(|s| s.x[i]).collect();
            let (_, var) = crate::numeric::mean_and_variance(&v);
            let sd = var.sqrt();
            if sd.is_finite() && sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect()
}
