use rayon::prelude::*;

use super::mcmc::{initial_state, spread, step, LevelSet, State};
use super::{subset, EstimatorConfig};
use crate::error::{Error, Result};
use crate::numeric::{exact_sum, normal_quantile};
use crate::risk::{BoundMethod, Method, OutcomeFn, RiskEstimate, ScenarioDistribution, TraceRow};
use crate::sampling::{derive_seed, stream_rng, try_map_chunks};

const WHO: &str = "multilevel splitting";
const PILOT_TAG: u64 = 0x9111;
const FAMILY_TAG: u64 = 0x5917;
/// Largest population a single root family may reach.
const FAMILY_CAP: usize = 1_000_000;

/// Per-root outcome: final-level count, then survivors, moves tried and
/// moves accepted per level.
struct Family {
    hits: u64,
    survivors: Vec<u64>,
    moves: Vec<u64>,
    accepted: Vec<u64>,
}

/// Generalized multilevel splitting with a fixed splitting factor `s`.
///
/// Levels `L_1 < .. < L_m = 0` on the metric. Each of the `n` root draws
/// that exceeds `L_1` starts a family: every member above `L_t` runs `s`
/// Metropolis moves that stay above `L_t`, and each of the `s` resulting
/// states above `L_{t+1}` survives. The estimate `hits / (n s^(m-1))` is
/// unbiased; its bound is a one-sided CLT over the independent root
/// families. With one level and any factor it is crude Monte Carlo.
///
/// Without explicit levels a pilot subset run with `rho = 1 / s` places
/// them.
pub fn splitting_estimate(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, cfg: &EstimatorConfig) -> Result<RiskEstimate> {
    cfg.validate()?;
    if dist.is_discrete() {
        return Err(Error::Unsupported("multilevel splitting needs a continuous scenario law".into()));
    }
    let s = cfg.split_factor;
    let (levels, pilot_evals) = match &cfg.split_levels {
        Some(l) => (l.clone(), 0),
        None => pilot_levels(dist, f, cfg)?,
    };
    let levels = normalize_levels(levels)?;
    let m = levels.len();

    let roots = try_map_chunks(cfg.seed, cfg.n, |range, rng| {
        range.map(|_| initial_state(dist, f, dist.sample(rng), WHO)).collect::<Result<Vec<_>>>()
    })?;
    let roots: Vec<State> = roots.into_iter().flatten().collect();
    let refs: Vec<&State> = roots.iter().collect();
    let scales: Vec<f64> = spread(&refs).into_iter().map(|v| v * cfg.step).collect();

    let family_seed = derive_seed(cfg.seed, FAMILY_TAG);
    let families: Vec<Family> = roots
        .par_iter()
        .enumerate()
        .map(|(i, root)| grow_family(dist, f, root, &levels, s, &scales, family_seed, i as u64))
        .collect::<Result<Vec<_>>>()?;

    let n = cfg.n as f64;
    let norm = (s as f64).powi(m as i32 - 1);
    let terms: Vec<f64> = families.iter().map(|fam| fam.hits as f64 / norm).collect();
    let point = exact_sum(terms.iter().copied()) / n;
    let ss = exact_sum(terms.iter().map(|t| (t - point) * (t - point)));
    let sd = if cfg.n > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    let productive = families.iter().filter(|fam| fam.hits > 0).count();
    let (upper, bound_method) = if productive < 2 {
        (1.0, BoundMethod::Vacuous)
    } else {
        ((point + normal_quantile(cfg.confidence) * sd / n.sqrt()).min(1.0), BoundMethod::SplittingClt)
    };

    let moves: u64 = families.iter().flat_map(|fam| fam.moves.iter()).sum();
    let mut est = RiskEstimate::new(point, upper, cfg.confidence, Method::Splitting, bound_method, cfg.n as u64 + moves + pilot_evals)
        .with_diag("levels", m as f64)
        .with_diag("split_factor", s as f64)
        .with_diag("productive_roots", productive as f64)
        .with_diag("degenerate", if productive < 2 { 1.0 } else { 0.0 });
    for (t, &level) in levels.iter().enumerate() {
        let survivors: u64 = families.iter().map(|fam| fam.survivors[t]).sum();
        let tried: u64 = families.iter().map(|fam| fam.moves[t]).sum();
        let ok: u64 = families.iter().map(|fam| fam.accepted[t]).sum();
        let acceptance = if tried > 0 { ok as f64 / tried as f64 } else { f64::NAN };
        est.diagnostics.insert(format!("level_{}", t + 1), level);
        est.trace.push(TraceRow {
            stage: "splitting",
            index: t as u64 + 1,
            estimate: survivors as f64 / (n * (s as f64).powi(t as i32)),
            bound: level,
            aux: acceptance,
        });
    }
    let accepted: u64 = families.iter().flat_map(|fam| fam.accepted.iter()).sum();
    if moves > 0 {
        est.diagnostics.insert("acceptance".into(), accepted as f64 / moves as f64);
    }
    Ok(est)
}

#[allow(clippy::too_many_arguments)]
fn grow_family(
    dist: &dyn ScenarioDistribution,
    f: &dyn OutcomeFn,
    root: &State,
    levels: &[f64],
    s: usize,
    scales: &[f64],
    family_seed: u64,
    index: u64,
) -> Result<Family> {
    let m = levels.len();
    let mut survivors = vec![0u64; m];
    let mut current: Vec<State> = if root.y > levels[0] { vec![root.clone()] } else { Vec::new() };
    survivors[0] = current.len() as u64;
    let mut rng = stream_rng(family_seed, index);
    let (mut moves, mut accepted) = (vec![0u64; m], vec![0u64; m]);
    for t in 1..m {
        if current.is_empty() {
            break;
        }
        let set = LevelSet { threshold: levels[t - 1], strict: true };
        let mut next = Vec::new();
        for member in current {
            let mut state = member;
            for _ in 0..s {
                moves[t] += 1;
                if step(dist, f, &mut state, set, scales, &mut rng, WHO)? {
                    accepted[t] += 1;
                }
                if state.y > levels[t] {
                    next.push(state.clone());
                }
            }
        }
        if next.len() > FAMILY_CAP {
            return Err(Error::invalid(format!(
                "splitting population above {FAMILY_CAP} at level {}; use a smaller factor or fewer levels",
                t + 1
            )));
        }
        survivors[t] = next.len() as u64;
        current = next;
    }
    Ok(Family { hits: survivors[m - 1], survivors, moves, accepted })
}

/// Levels from a pilot subset run with `rho = 1 / s`, plus the pilot's
/// metric evaluations.
fn pilot_levels(dist: &dyn ScenarioDistribution, f: &dyn OutcomeFn, cfg: &EstimatorConfig) -> Result<(Vec<f64>, u64)> {
    if cfg.split_factor < 2 {
        return Err(Error::invalid("pilot levels need a splitting factor >= 2"));
    }
    let pilot = EstimatorConfig {
        rho: 1.0 / cfg.split_factor as f64,
        seed: derive_seed(cfg.seed, PILOT_TAG),
        split_levels: None,
        ..cfg.clone()
    };
    let run = subset::run(dist, f, &pilot)?;
    Ok((run.thresholds, run.estimate.n_samples))
}

/// Strictly ascending, nonpositive, ending at 0.
fn normalize_levels(mut levels: Vec<f64>) -> Result<Vec<f64>> {
    if levels.iter().any(|l| !l.is_finite() || *l > 0.0) {
        return Err(Error::invalid("splitting levels must be finite and <= 0"));
    }
    // Pilot thresholds can repeat under ties; repeated levels add nothing.
    levels.dedup();
    if levels.last().is_none_or(|&l| l < 0.0) {
        levels.push(0.0);
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("splitting levels must be strictly ascending"));
    }
    Ok(levels)
}
