use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{check_range, Knob, OracleMethod, ProposalFamily, Testbed, Truth};
use crate::error::{Error, Result};
use crate::numeric::{exact_sum, normal_cdf, normal_sf};
use crate::region::{Membership, RegionMass};
use crate::risk::{DynamicsLabel, OutcomeFn, ScenarioDistribution};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `d` independent standard normals; failure iff the first exceeds `tau`.
///
/// Knobs: `environment` shifts the mean of the first coordinate
/// (|shift| <= 1), `system` rescales its standard deviation by
/// `1 + system` (|system| <= 0.5).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianThresholdBed {
    pub dim: usize,
    pub tau: f64,
    /// Default environment shift used for surrogate variants.
    pub perturb_shift: f64,
}

impl GaussianThresholdBed {
    pub fn new(dim: usize, tau: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("gaussian bed needs dim >= 1"));
        }
        if !tau.is_finite() {
            return Err(Error::invalid("gaussian bed needs a finite tau"));
        }
        Ok(GaussianThresholdBed { dim, tau, perturb_shift: 0.0 })
    }

    pub fn with_perturb_shift(mut self, shift: f64) -> Result<Self> {
        check_range("perturb_shift", shift, -1.0, 1.0)?;
        self.perturb_shift = shift;
        Ok(self)
    }

    /// Threshold giving tail mass `p` under the standard normal.
    pub fn tau_for(p: f64) -> f64 {
        crate::numeric::normal_quantile(1.0 - p)
    }
}

impl OutcomeFn for GaussianThresholdBed {
    fn is_failure(&self, params: &[f64]) -> bool {
        params[0] > self.tau
    }

    fn metric(&self, params: &[f64]) -> Option<f64> {
        Some(params[0] - self.tau)
    }
}

/// Product normal law; only the first coordinate can be shifted or scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub dim: usize,
    pub mean0: f64,
    pub scale0: f64,
    pub label: DynamicsLabel,
}

impl GaussianDist {
    pub fn standard(dim: usize) -> Self {
        GaussianDist { dim, mean0: 0.0, scale0: 1.0, label: DynamicsLabel::True }
    }

    fn coord_probability(&self, coord: usize, lo: f64, hi: f64) -> f64 {
        let (m, s) = if coord == 0 { (self.mean0, self.scale0) } else { (0.0, 1.0) };
        if hi <= lo {
            return 0.0;
        }
        let zl = (lo - m) / s;
        let zh = (hi - m) / s;
        // Difference of upper tails keeps precision far out in the tail.
        if zl > 0.0 {
            normal_sf(zl) - normal_sf(zh)
        } else {
            normal_cdf(zh) - normal_cdf(zl)
        }
    }
}

impl ScenarioDistribution for GaussianDist {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> DynamicsLabel {
        self.label
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
        x[0] = self.mean0 + self.scale0 * x[0];
        x
    }

    fn log_density(&self, params: &[f64]) -> Option<f64> {
        if params.len() != self.dim {
            return Some(f64::NEG_INFINITY);
        }
        let z0 = (params[0] - self.mean0) / self.scale0;
        let terms = std::iter::once(-0.5 * z0 * z0 - self.scale0.ln())
            .chain(params[1..].iter().map(|x| -0.5 * x * x));
        Some(exact_sum(terms) - self.dim as f64 * LN_SQRT_2PI)
    }
}

impl RegionMass for GaussianDist {
    fn inside_mass(&self, region: &Membership) -> Option<f64> {
        match region {
            Membership::Empty => Some(0.0),
            Membership::HalfSpace { coord, upper } if *coord < self.dim => {
                Some(self.coord_probability(*coord, f64::NEG_INFINITY, *upper))
            }
            Membership::Boxes { boxes } => {
                let masses = boxes.iter().map(|b| {
                    (0..self.dim)
                        .map(|c| match (b.lo.get(c), b.hi.get(c)) {
                            (Some(&lo), Some(&hi)) => self.coord_probability(c, lo, hi),
                            _ => 1.0,
                        })
                        .product::<f64>()
                });
                Some(exact_sum(masses))
            }
            _ => None,
        }
    }
}

impl Testbed for GaussianThresholdBed {
    type Dist = GaussianDist;

    fn id(&self) -> &'static str {
        "gaussian_threshold"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn distribution(&self, knob: Knob, label: DynamicsLabel) -> Result<GaussianDist> {
        check_range("environment mean shift", knob.environment, -1.0, 1.0)?;
        check_range("system scale change", knob.system, -0.5, 0.5)?;
        Ok(GaussianDist { dim: self.dim, mean0: knob.environment, scale0: 1.0 + knob.system, label })
    }

    fn proposal(&self, base: &GaussianDist, family: ProposalFamily) -> Result<GaussianDist> {
        check_range("proposal shift", family.shift, -20.0, 20.0)?;
        if !(family.scale > 0.0 && family.scale <= 10.0) {
            return Err(Error::invalid(format!("proposal scale {} outside (0, 10]", family.scale)));
        }
        Ok(GaussianDist {
            dim: base.dim,
            mean0: base.mean0 + family.shift,
            scale0: base.scale0 * family.scale,
            label: DynamicsLabel::Proposal,
        })
    }

    fn truth(&self, dist: &GaussianDist) -> Result<Truth> {
        let value = normal_sf((self.tau - dist.mean0) / dist.scale0);
        Ok(Truth { value, abs_error: 1e-15_f64.max(value * 1e-12), method: OracleMethod::ClosedForm })
    }
}
