//! Shared domain types and certificate assembly.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::exact_sum;
use crate::region::VerificationRecord;

/// One parameterized rollout of a testbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub params: Vec<f64>,
    /// Replay tag. Outcomes depend on `params` only.
    pub seed: u64,
}

/// Failure indicator plus an optional continuous safety metric `Y`
/// (failure iff `Y > 0`).
pub trait OutcomeFn: Send + Sync {
    fn is_failure(&self, params: &[f64]) -> bool;

    fn metric(&self, params: &[f64]) -> Option<f64> {
        let _ = params;
        None
    }

    /// Metric fed to extreme-value fits. Defaults to [`OutcomeFn::metric`].
    fn tail_metric(&self, params: &[f64]) -> Option<f64> {
        self.metric(params)
    }

    fn outcome(&self, scenario: &Scenario) -> u8 {
        u8::from(self.is_failure(&scenario.params))
    }
}

/// Adapts a closure into an [`OutcomeFn`] (binary only).
pub struct FnOutcome<F>(pub F);

impl<F> OutcomeFn for FnOutcome<F>
where
    F: Fn(&[f64]) -> bool + Send + Sync,
{
    fn is_failure(&self, params: &[f64]) -> bool {
        (self.0)(params)
    }
}

/// Adapts a metric closure into an [`OutcomeFn`]; failure iff metric > 0.
pub struct MetricOutcome<F>(pub F);

impl<F> OutcomeFn for MetricOutcome<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn is_failure(&self, params: &[f64]) -> bool {
        (self.0)(params) > 0.0
    }

    fn metric(&self, params: &[f64]) -> Option<f64> {
        Some((self.0)(params))
    }
}

/// Which dynamics a distribution stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsLabel {
    /// True system and environment dynamics.
    True,
    /// Practically used (simulated) dynamics.
    Surrogate,
    /// Importance-sampling proposal.
    Proposal,
}

/// Scenario sampler with an optional exact density (or mass function).
pub trait ScenarioDistribution: Send + Sync {
    fn dim(&self) -> usize;

    fn label(&self) -> DynamicsLabel;

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Natural log of the density; `Some(-inf)` off the support, `None`
    /// when the density is not available.
    fn log_density(&self, params: &[f64]) -> Option<f64>;

    fn density(&self, params: &[f64]) -> Option<f64> {
        self.log_density(params).map(f64::exp)
    }

    /// Discrete distributions cannot be explored by random-walk moves.
    fn is_discrete(&self) -> bool {
        false
    }
}

/// Estimation method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Cmc,
    #[serde(rename = "IS")]
    ImportanceSampling,
    #[serde(rename = "SUBSET")]
    SubsetSimulation,
    Splitting,
    VarScenario,
    Gev,
}

/// How an upper bound (or error term) was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundMethod {
    /// Known exactly, no sampling error.
    Exact,
    ClopperPearson,
    Hoeffding,
    Clt,
    /// CLT on importance-weighted terms.
    ImportanceClt,
    /// Coefficient-of-variation bound of subset simulation.
    SubsetCov,
    /// CLT over independent root families of multilevel splitting.
    SplittingClt,
    /// Scenario-optimization VaR certificate.
    ScenarioVar,
    /// Extreme-value fit; not a confidence bound.
    GevFit,
    ExactEnum,
    RatioIs,
    HistogramRatio,
    /// No informative bound (degenerate sample).
    Vacuous,
}

impl BoundMethod {
    /// Whether a term obtained this way may enter a PASS certificate.
    pub fn is_certified(self) -> bool {
        !matches!(self, BoundMethod::HistogramRatio | BoundMethod::GevFit)
    }
}

/// One row of an estimator's trace (per chunk, level or iteration).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub stage: &'static str,
    pub index: u64,
    pub estimate: f64,
    pub bound: f64,
    /// Effective sample size, acceptance rate or survivor count, depending
    /// on the stage.
    pub aux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub point: f64,
    pub upper_bound: f64,
    pub confidence: f64,
    pub method: Method,
    pub bound_method: BoundMethod,
    pub n_samples: u64,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl RiskEstimate {
    pub fn new(
        point: f64,
        upper_bound: f64,
        confidence: f64,
        method: Method,
        bound_method: BoundMethod,
        n_samples: u64,
    ) -> Self {
        RiskEstimate {
            point,
            upper_bound,
            confidence,
            method,
            bound_method,
            n_samples,
            diagnostics: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    pub fn with_diag(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    /// Statistical error term: distance from the point estimate to the bound.
    pub fn error_bound(&self) -> f64 {
        (self.upper_bound - self.point).max(0.0)
    }
}

/// A bounded, nonnegative error term with the confidence and method behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTerm {
    pub value: f64,
    pub confidence: f64,
    pub method: BoundMethod,
}

impl ErrorTerm {
    pub fn exact_zero() -> Self {
        ErrorTerm { value: 0.0, confidence: 1.0, method: BoundMethod::Exact }
    }
}

/// Empirical tail term plus the three bounded error terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorLedger {
    /// Failure rate outside the safe region under the practically used
    /// dynamics, scaled to the unconditional law.
    pub empirical: RiskEstimate,
    pub statistical: ErrorTerm,
    pub system_gap: ErrorTerm,
    pub environment_gap: ErrorTerm,
}

impl ErrorLedger {
    /// Builds a ledger whose statistical term is the estimate's own
    /// point-to-bound distance.
    pub fn from_estimate(empirical: RiskEstimate, system_gap: ErrorTerm, environment_gap: ErrorTerm) -> Self {
        let statistical = ErrorTerm {
            value: empirical.error_bound(),
            confidence: empirical.confidence,
            method: empirical.bound_method,
        };
        ErrorLedger { empirical, statistical, system_gap, environment_gap }
    }

    fn terms(&self) -> [&ErrorTerm; 3] {
        [&self.statistical, &self.system_gap, &self.environment_gap]
    }

    /// First term whose method may not enter a certificate.
    pub fn uncertified_term(&self) -> Option<(&'static str, BoundMethod)> {
        let names = ["statistical", "system_gap", "environment_gap"];
        names
            .into_iter()
            .zip(self.terms())
            .find(|(_, t)| !t.method.is_certified())
            .map(|(name, t)| (name, t.method))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub testbed: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub theta: f64,
    pub ledger: ErrorLedger,
    pub total: f64,
    pub joint_confidence: f64,
    pub verdict: Verdict,
    pub region_report: Option<VerificationRecord>,
    pub provenance: Provenance,
}

impl Certificate {
    pub fn with_region(mut self, record: VerificationRecord) -> Self {
        self.region_report = Some(record);
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// Bonferroni joint confidence `max(0, 1 - sum(1 - c_i))`.
///
/// Exact terms may pass confidence 1; they contribute nothing.
pub fn union_bound_confidence(confidences: &[f64]) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::invalid("union bound over an empty confidence list"));
    }
    for &c in confidences {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::invalid(format!("confidence {c} outside (0, 1]")));
        }
    }
    let miss = exact_sum(confidences.iter().map(|c| 1.0 - c));
    Ok((1.0 - miss).max(0.0))
}

/// Aggregates the ledger against `theta`: PASS iff the four-term total is
/// strictly below `theta`.
pub fn assemble_certificate(ledger: ErrorLedger, theta: f64) -> Result<Certificate> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("theta {theta} outside (0, 1]")));
    }
    let values = [
        ("empirical", ledger.empirical.point),
        ("statistical", ledger.statistical.value),
        ("system_gap", ledger.system_gap.value),
        ("environment_gap", ledger.environment_gap.value),
    ];
    for (name, v) in values {
        if !v.is_finite() {
            return Err(Error::invalid(format!("ledger term {name} is not finite ({v})")));
        }
        if v < 0.0 {
            return Err(Error::invalid(format!("ledger term {name} is negative ({v})")));
        }
    }
    let total = exact_sum(values.iter().map(|(_, v)| *v));
    let joint_confidence = union_bound_confidence(&ledger.terms().map(|t| t.confidence))?;
    let verdict = if total < theta { Verdict::Pass } else { Verdict::Fail };
    Ok(Certificate {
        theta,
        ledger,
        total,
        joint_confidence,
        verdict,
        region_report: None,
        provenance: Provenance::default(),
    })
}
