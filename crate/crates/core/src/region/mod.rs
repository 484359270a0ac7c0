//! Safe regions: verified scenario sets where the outcome is provably safe,
//! and estimation of the residual tail outside them.

mod experiment;
mod verify;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use experiment::{conditioning_variance_experiment, VarianceComparison};
pub use verify::{verify_region_grid, verify_region_halfspace, verify_region_interval};

use crate::error::{Error, Result};
use crate::estimators::{self, clopper_pearson_upper, EstimatorConfig};
use crate::risk::{union_bound_confidence, BoundMethod, DynamicsLabel, Method, OutcomeFn, RiskEstimate, ScenarioDistribution};
use crate::sampling::map_chunks;

/// Below this outside mass rejection sampling is considered impractical.
pub const MIN_REJECTION_ACCEPTANCE: f64 = 1e-4;

/// Axis-aligned closed box in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    pub fn contains(&self, params: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(params).all(|((lo, hi), x)| *x >= *lo && *x <= *hi)
    }
}

/// Decidable membership predicate for a region of scenario parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Membership {
    Empty,
    /// Start cells of a grid bed (the first scenario parameter).
    GridCells { cells: Vec<usize> },
    Boxes { boxes: Vec<ParamBox> },
    /// `params[coord] <= upper`.
    HalfSpace { coord: usize, upper: f64 },
}

impl Membership {
    pub fn contains(&self, params: &[f64]) -> bool {
        match self {
            Membership::Empty => false,
            Membership::GridCells { cells } => {
                let x = params[0];
                x >= 0.0 && x.fract() == 0.0 && cells.binary_search(&(x as usize)).is_ok()
            }
            Membership::Boxes { boxes } => boxes.iter().any(|b| b.contains(params)),
            Membership::HalfSpace { coord, upper } => params[*coord] <= *upper,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Membership::Empty => true,
            Membership::GridCells { cells } => cells.is_empty(),
            Membership::Boxes { boxes } => boxes.is_empty(),
            Membership::HalfSpace { .. } => false,
        }
    }
}

/// Probability of a region under a distribution, when available in closed
/// form, and the exact conditional law outside it on finite beds.
pub trait RegionMass {
    fn inside_mass(&self, region: &Membership) -> Option<f64>;

    /// Law conditioned on lying outside `region`, with the outside mass.
    fn conditioned_outside(&self, region: &Membership) -> Option<(Self, f64)>
    where
        Self: Sized,
    {
        let _ = region;
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationMethod {
    /// Worst-case backward reachability on a finite grid.
    BackwardReachability,
    /// Interval bound on the closing distance over parameter boxes.
    IntervalBound,
    /// Half-space contained in the complement of the failure set.
    HalfSpaceContainment,
}

/// Per-box outcome of the interval check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCheck {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub worst_gap: f64,
    pub safe: bool,
}

/// Audit record of a region verification. Deterministic: no wall-clock
/// fields, so identical inputs give identical documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub method: VerificationMethod,
    /// Fixed-point iterations (reachability) or boxes examined (interval).
    pub iterations: u64,
    /// Unsafe-set size after each reachability iteration.
    #[serde(default)]
    pub unsafe_counts: Vec<u64>,
    #[serde(default)]
    pub boxes: Vec<BoxCheck>,
    /// Cells or boxes in the certified region.
    pub inside_count: u64,
    pub total_count: u64,
    /// Scenarios replayed by the exhaustive soundness check, if run.
    pub exhaustive_scenarios: Option<u64>,
    pub exhaustive_failures: Option<u64>,
    pub notes: Vec<String>,
}

/// `P(x not in region)`, exact or with a one-sided upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutsideMass {
    Exact { value: f64 },
    Bounded { estimate: f64, upper: f64, confidence: f64, n_samples: u64 },
}

impl OutsideMass {
    pub fn point(&self) -> f64 {
        match *self {
            OutsideMass::Exact { value } => value,
            OutsideMass::Bounded { estimate, .. } => estimate,
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            OutsideMass::Exact { value } => value,
            OutsideMass::Bounded { upper, .. } => upper,
        }
    }

    pub fn confidence(&self) -> f64 {
        match *self {
            OutsideMass::Exact { .. } => 1.0,
            OutsideMass::Bounded { confidence, .. } => confidence,
        }
    }

    /// Reciprocal outside mass (the conditioning factor, `>= 1`).
    pub fn factor(&self) -> f64 {
        1.0 / self.point()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeRegion {
    pub membership: Membership,
    pub certificate: VerificationRecord,
    pub outside_mass: OutsideMass,
}

impl SafeRegion {
    /// Recomputes the outside mass under another law of the same bed.
    pub fn outside_mass_under<D: RegionMass>(&self, dist: &D) -> OutsideMass {
        match dist.inside_mass(&self.membership) {
            Some(m) => OutsideMass::Exact { value: (1.0 - m).max(0.0) },
            None => self.outside_mass,
        }
    }
}

/// Monte Carlo estimate of the outside mass with a Clopper-Pearson upper
/// bound, for laws without a closed-form region mass.
pub fn estimate_outside_mass(
    dist: &dyn ScenarioDistribution,
    region: &Membership,
    n: usize,
    confidence: f64,
    seed: u64,
) -> Result<OutsideMass> {
    if n == 0 {
        return Err(Error::invalid("outside-mass estimate needs n >= 1"));
    }
    let counts = map_chunks(seed, n, |range, rng| {
        range.filter(|_| !region.contains(&dist.sample(rng))).count() as u64
    });
    let k: u64 = counts.iter().sum();
    let upper = clopper_pearson_upper(k, n as u64, confidence)?;
    Ok(OutsideMass::Bounded { estimate: k as f64 / n as f64, upper, confidence, n_samples: n as u64 })
}

/// `dist` conditioned on `x not in region`, sampled by rejection.
struct RejectOutside<'a> {
    inner: &'a dyn ScenarioDistribution,
    region: &'a Membership,
    log_mass: f64,
}

impl ScenarioDistribution for RejectOutside<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn label(&self) -> DynamicsLabel {
        self.inner.label()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        loop {
            let x = self.inner.sample(rng);
            if !self.region.contains(&x) {
                return x;
            }
        }
    }

    fn log_density(&self, params: &[f64]) -> Option<f64> {
        if self.region.contains(params) {
            return Some(f64::NEG_INFINITY);
        }
        self.inner.log_density(params).map(|l| l - self.log_mass)
    }

    fn is_discrete(&self) -> bool {
        self.inner.is_discrete()
    }
}

/// Tail risk `P(fail, x not in region)` from a run of `method` on the
/// conditional law outside `region`, rescaled by the outside mass.
///
/// Finite beds sample the conditional law exactly; other beds use rejection
/// sampling. An empty region runs the estimator directly on `dist`. The
/// upper bound multiplies the outside-mass upper bound by the conditional
/// upper bound, with confidences joined by the union bound.
pub fn conditional_tail_estimate<D>(
    dist: &D,
    region: &SafeRegion,
    f: &dyn OutcomeFn,
    cfg: &EstimatorConfig,
    method: Method,
) -> Result<RiskEstimate>
where
    D: ScenarioDistribution + RegionMass,
{
    if !matches!(method, Method::Cmc | Method::SubsetSimulation | Method::Splitting) {
        return Err(Error::Unsupported(format!(
            "conditional tail estimation supports CMC, SUBSET and SPLITTING, not {method:?}"
        )));
    }
    if region.membership.is_empty() {
        return estimators::run(method, dist, f, cfg, None);
    }

    let exact = dist.conditioned_outside(&region.membership);
    let mass = match &exact {
        Some((_, m)) => OutsideMass::Exact { value: *m },
        None => region.outside_mass_under(dist),
    };
    if mass.upper() == 0.0 {
        let mut est = RiskEstimate::new(0.0, 0.0, cfg.confidence, method, BoundMethod::Exact, 0);
        est.diagnostics.insert("outside_mass".into(), 0.0);
        est.diagnostics.insert("vacuous_tail".into(), 1.0);
        return Ok(est);
    }

    let conditional = match &exact {
        Some((cond, _)) => estimators::run(method, cond, f, cfg, None)?,
        None => {
            if mass.point() < MIN_REJECTION_ACCEPTANCE {
                return Err(Error::ImpracticalConditioning { acceptance: mass.point() });
            }
            let reject = RejectOutside { inner: dist, region: &region.membership, log_mass: mass.point().ln() };
            estimators::run(method, &reject, f, cfg, None)?
        }
    };

    let confidence = union_bound_confidence(&[conditional.confidence, mass.confidence()])?;
    let mut est = RiskEstimate::new(
        mass.point() * conditional.point,
        (mass.upper() * conditional.upper_bound).min(1.0),
        confidence,
        method,
        conditional.bound_method,
        conditional.n_samples,
    );
    est.diagnostics = conditional.diagnostics.clone();
    est.diagnostics.insert("conditional_point".into(), conditional.point);
    est.diagnostics.insert("conditional_upper".into(), conditional.upper_bound);
    est.diagnostics.insert("outside_mass".into(), mass.point());
    est.diagnostics.insert("outside_mass_upper".into(), mass.upper());
    est.diagnostics.insert("exact_conditioning".into(), if exact.is_some() { 1.0 } else { 0.0 });
    est.trace = conditional.trace;
    Ok(est)
}
