//! Small embodied-system testbeds with exact ground truth.
//!
//! Every bed confines its randomness to the scenario parameters, so each
//! scenario distribution has an exact density (or mass function) and each
//! bed has an independent oracle for the true failure probability:
//!
//! | bed | params | oracle |
//! |-----|--------|--------|
//! | [`GaussianThresholdBed`] | `d` standard normals | closed-form tail mass |
//! | [`CarFollowingBed`] | `[decel_onset s, decel_mag m/s^2]` | adaptive trapezoid quadrature |
//! | [`GridWorldBed`] | `[start cell, action_1 .. action_H]` | exact chain propagation |

mod car;
mod gaussian;
mod grid;

use serde::{Deserialize, Serialize};

pub use car::{CarDist, CarFollowingBed, Rollout};
pub use gaussian::{GaussianDist, GaussianThresholdBed};
pub use grid::{GridDist, GridWorldBed, Move, Policy};
pub(crate) use grid::SLIPS;

use crate::error::Result;
use crate::risk::{DynamicsLabel, OutcomeFn, ScenarioDistribution};

/// Controlled perturbation away from the true dynamics.
///
/// `system` perturbs the embodied system's behaviour, `environment` the
/// environment model. Zero in both is the true dynamics. Each bed documents
/// what the two knobs mean and their admissible ranges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knob {
    #[serde(default)]
    pub system: f64,
    #[serde(default)]
    pub environment: f64,
}

impl Knob {
    pub const ZERO: Knob = Knob { system: 0.0, environment: 0.0 };

    /// The environment half of the perturbation, system left at truth.
    pub fn environment_only(self) -> Knob {
        Knob { system: 0.0, environment: self.environment }
    }
}

/// Parametric importance-sampling family: a location `shift` and a `scale`
/// tilt, interpreted per bed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalFamily {
    #[serde(default)]
    pub shift: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ProposalFamily {
    fn default() -> Self {
        ProposalFamily { shift: 0.0, scale: 1.0 }
    }
}

/// Ground-truth failure probability with its numerical error statement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub value: f64,
    /// Absolute error bound on `value`.
    pub abs_error: f64,
    pub method: OracleMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    Quadrature,
    ChainPropagation,
}

impl Truth {
    pub fn describe(&self) -> String {
        match self.method {
            OracleMethod::ClosedForm => format!("closed form, absolute error <= {:.1e}", self.abs_error),
            OracleMethod::ChainPropagation => {
                format!("exact chain propagation, absolute error <= {:.1e}", self.abs_error)
            }
            OracleMethod::Quadrature => format!(
                "adaptive trapezoid quadrature, successive refinements within 0.5%, error <= {:.1e}",
                self.abs_error
            ),
        }
    }
}

pub trait Testbed: OutcomeFn {
    type Dist: ScenarioDistribution + Clone + 'static;

    fn id(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Scenario law under the dynamics selected by `knob`.
    fn distribution(&self, knob: Knob, label: DynamicsLabel) -> Result<Self::Dist>;

    /// Proposal from the bed's declared parametric family.
    fn proposal(&self, base: &Self::Dist, family: ProposalFamily) -> Result<Self::Dist>;

    /// Exact failure probability under `dist`.
    fn truth(&self, dist: &Self::Dist) -> Result<Truth>;

    fn true_distribution(&self) -> Self::Dist {
        self.distribution(Knob::ZERO, DynamicsLabel::True)
            .expect("zero knob is always admissible")
    }
}

/// Ground-truth `E[f]` under `dist`.
pub fn truth_oracle<B: Testbed>(bed: &B, dist: &B::Dist) -> Result<Truth> {
    bed.truth(dist)
}

/// Surrogate (practically used) dynamics with a controlled gap to truth.
pub fn surrogate<B: Testbed>(bed: &B, knob: Knob) -> Result<B::Dist> {
    bed.distribution(knob, DynamicsLabel::Surrogate)
}

pub(crate) fn check_range(name: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(crate::Error::invalid(format!("{name} = {value} outside [{lo}, {hi}]")))
    }
}
