//! Provable probabilistic safety certification on exactly analyzable testbeds.
//!
//! Residual risk is split into a verified safe region (where the outcome is
//! provably safe) and a statistically bounded tail. The tail bound is
//! assembled from four terms: the empirical failure rate outside the safe
//! region, its statistical error, the system-behaviour gap, and the
//! environment-model gap. [`risk::assemble_certificate`] turns those terms
//! into a PASS/FAIL verdict against a risk threshold.
//!
//! Module map:
//!
//! - [`risk`]: shared domain types, certificate assembly.
//! - [`testbeds`]: Gaussian threshold, car following and grid world beds with
//!   exact ground truth.
//! - [`estimators`]: crude Monte Carlo, binomial bounds, importance sampling,
//!   subset simulation, multilevel splitting, scenario VaR bound, GEV fits.
//! - [`region`]: safe-region verification and conditional tail estimation.
//! - [`gap`]: bounds on the distribution-gap error terms.

pub mod canonical;
pub mod error;
pub mod estimators;
pub mod gap;
pub mod numeric;
pub mod region;
pub mod risk;
pub mod sampling;
pub mod testbeds;

pub use error::{Error, Result};
pub use risk::{
    assemble_certificate, union_bound_confidence, Certificate, DynamicsLabel, ErrorLedger,
    ErrorTerm, Method, OutcomeFn, RiskEstimate, Scenario, ScenarioDistribution, Verdict,
};
