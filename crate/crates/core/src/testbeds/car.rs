use rand::RngCore;
use rand_distr::Distribution;
use rayon::prelude::*;
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

use super::{check_range, Knob, OracleMethod, ProposalFamily, Testbed, Truth};
use crate::error::{Error, Result};
use crate::numeric::{exact_sum, CompensatedSum};
use crate::region::{Membership, RegionMass};
use crate::risk::{DynamicsLabel, OutcomeFn, ScenarioDistribution};

/// Speed floor (m/s) when converting gaps to time gaps.
const SPEED_FLOOR: f64 = 0.5;

/// Leader/follower longitudinal scenario.
///
/// Both vehicles start at constant speed, `g0` metres apart. At
/// `decel_onset` seconds the leader brakes at `decel_mag` m/s^2 until it
/// stops; the follower starts braking at `follower_decel` m/s^2
/// `reaction_delay` steps later. Braking that starts inside a step is
/// applied pro rata to that step, so positions are continuous in the
/// parameters. A crash is a gap `<= 0` at any step `0..=horizon_steps`.
///
/// Scenario params: `[decel_onset, decel_mag]`, with
/// `decel_onset ~ Uniform[onset_min, onset_max]` and
/// `decel_mag ~ mag_max * Beta(mag_shape.0, mag_shape.1)`.
///
/// Knobs: `environment` rescales `decel_mag` by `1 + environment`
/// (|environment| <= 0.5). The bed has no system knob.
#[derive(Debug, Clone, PartialEq)]
pub struct CarFollowingBed {
    pub horizon_steps: usize,
    pub dt: f64,
    pub v_follower: f64,
    pub v_leader: f64,
    pub g0: f64,
    pub reaction_delay: usize,
    pub follower_decel: f64,
    pub onset_range: (f64, f64),
    pub mag_max: f64,
    pub mag_shape: (f64, f64),
}

impl Default for CarFollowingBed {
    fn default() -> Self {
        CarFollowingBed {
            horizon_steps: 100,
            dt: 0.1,
            v_follower: 20.0,
            v_leader: 20.0,
            g0: 20.0,
            reaction_delay: 10,
            follower_decel: 7.0,
            onset_range: (0.0, 5.0),
            mag_max: 10.0,
            mag_shape: (2.0, 5.0),
        }
    }
}

/// Minimum gap (m) and minimum time gap (s) over a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub min_gap: f64,
    pub min_time_gap: f64,
}

/// Constant deceleration `decel` over `dt`, stopping at zero speed.
#[inline]
fn advance(x: f64, v: f64, decel: f64, dt: f64) -> (f64, f64) {
    if decel <= 0.0 || v <= 0.0 {
        return (x + v * dt, v);
    }
    let t_stop = v / decel;
    if t_stop >= dt {
        (x + v * dt - 0.5 * decel * dt * dt, v - decel * dt)
    } else {
        (x + 0.5 * v * t_stop, 0.0)
    }
}

/// Positive metric for a crash, with a tie at zero counted as a crash.
fn crash_metric(min_value: f64) -> f64 {
    if min_value == 0.0 {
        f64::MIN_POSITIVE
    } else {
        -min_value
    }
}

impl CarFollowingBed {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("mag_max", self.mag_max),
            ("mag_shape.0", self.mag_shape.0),
            ("mag_shape.1", self.mag_shape.1),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("car bed: {name} must be positive and finite")));
            }
        }
        let nonneg = [
            ("v_follower", self.v_follower),
            ("v_leader", self.v_leader),
            ("g0", self.g0),
            ("follower_decel", self.follower_decel),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("car bed: {name} must be nonnegative and finite")));
            }
        }
        let (lo, hi) = self.onset_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::invalid("car bed: onset range must be a bounded interval with max > min"));
        }
        Ok(())
    }

    /// Rollout with independent leader and follower timing. The scenario
    /// rollout uses the same onset for both; interval bounds separate them.
    pub fn simulate(&self, leader_onset: f64, leader_decel: f64, follower_onset: f64) -> Rollout {
        let dt = self.dt;
        let brake_at = follower_onset + self.reaction_delay as f64 * dt;
        let (mut xl, mut vl) = (self.g0, self.v_leader);
        let (mut xf, mut vf) = (0.0, self.v_follower);
        let mut min_gap = self.g0;
        let mut min_time_gap = self.g0 / vf.max(SPEED_FLOOR);
        for k in 0..self.horizon_steps {
            let t_end = (k + 1) as f64 * dt;
            let leader_share = ((t_end - leader_onset) / dt).clamp(0.0, 1.0);
            let follower_share = ((t_end - brake_at) / dt).clamp(0.0, 1.0);
            (xl, vl) = advance(xl, vl, leader_decel * leader_share, dt);
            (xf, vf) = advance(xf, vf, self.follower_decel * follower_share, dt);
            let gap = xl - xf;
            min_gap = min_gap.min(gap);
            min_time_gap = min_time_gap.min(gap / vf.max(SPEED_FLOOR));
        }
        Rollout { min_gap, min_time_gap }
    }

    pub fn rollout(&self, params: &[f64]) -> Rollout {
        self.simulate(params[0], params[1], params[0])
    }

    /// Lower bound on the gap over the horizon for any scenario with onset
    /// in `[onset_lo, onset_hi]` and magnitude at most `mag_hi`.
    ///
    /// The leader's position is nonincreasing in the magnitude and
    /// nondecreasing in the onset; the follower's is nondecreasing in the
    /// onset. Combining the extreme corners gives a sound bound.
    pub fn worst_case_min_gap(&self, onset_lo: f64, onset_hi: f64, mag_hi: f64) -> f64 {
        self.simulate(onset_lo, mag_hi, onset_hi).min_gap
    }

    /// Declared parameter ranges `[(onset_min, onset_max), (0, mag_max)]`.
    pub fn declared_ranges(&self) -> [(f64, f64); 2] {
        [self.onset_range, (0.0, self.mag_max)]
    }

    /// Trapezoid rule with `intervals` subintervals per axis.
    fn trapezoid(&self, dist: &CarDist, intervals: usize) -> f64 {
        let (lo, hi) = (dist.onset_lo, dist.onset_hi);
        let m_hi = dist.mag_max;
        let h_on = (hi - lo) / intervals as f64;
        let h_mag = m_hi / intervals as f64;
        let weight = |i: usize| if i == 0 || i == intervals { 0.5 } else { 1.0 };
        let rows: Vec<f64> = (0..=intervals)
            .into_par_iter()
            .map(|i| {
                let onset = lo + i as f64 * h_on;
                let mut acc = CompensatedSum::new();
                for j in 0..=intervals {
                    let mag = j as f64 * h_mag;
                    let x = [onset, mag];
                    if self.is_failure(&x) {
                        acc.add(weight(j) * dist.density(&x).unwrap_or(0.0));
                    }
                }
                weight(i) * acc.value()
            })
            .collect();
        exact_sum(rows) * h_on * h_mag
    }
}

impl OutcomeFn for CarFollowingBed {
    fn is_failure(&self, params: &[f64]) -> bool {
        self.rollout(params).min_gap <= 0.0
    }

    /// `Y = -min gap`.
    fn metric(&self, params: &[f64]) -> Option<f64> {
        Some(crash_metric(self.rollout(params).min_gap))
    }

    /// Negated post-encroachment-style time gap.
    fn tail_metric(&self, params: &[f64]) -> Option<f64> {
        Some(crash_metric(self.rollout(params).min_time_gap))
    }
}

/// Product law of `(decel_onset, decel_mag)`.
#[derive(Debug, Clone)]
pub struct CarDist {
    pub onset_lo: f64,
    pub onset_hi: f64,
    /// Upper end of the magnitude support (already scaled).
    pub mag_max: f64,
    pub shape: (f64, f64),
    pub label: DynamicsLabel,
    beta: Beta,
}

impl CarDist {
    pub fn new(onset: (f64, f64), mag_max: f64, shape: (f64, f64), label: DynamicsLabel) -> Result<Self> {
        let beta = Beta::new(shape.0, shape.1).map_err(|e| Error::invalid(format!("beta shape: {e}")))?;
        Ok(CarDist { onset_lo: onset.0, onset_hi: onset.1, mag_max, shape, label, beta })
    }

    fn mag_cdf(&self, m: f64) -> f64 {
        self.beta.cdf((m / self.mag_max).clamp(0.0, 1.0))
    }

    fn box_mass(&self, onset: (f64, f64), mag: (f64, f64)) -> f64 {
        let lo = onset.0.max(self.onset_lo);
        let hi = onset.1.min(self.onset_hi);
        if hi <= lo || mag.1 <= mag.0 {
            return 0.0;
        }
        (hi - lo) / (self.onset_hi - self.onset_lo) * (self.mag_cdf(mag.1) - self.mag_cdf(mag.0))
    }
}

impl PartialEq for CarDist {
    fn eq(&self, other: &Self) -> bool {
        self.onset_lo == other.onset_lo
            && self.onset_hi == other.onset_hi
            && self.mag_max == other.mag_max
            && self.shape == other.shape
            && self.label == other.label
    }
}

impl ScenarioDistribution for CarDist {
    fn dim(&self) -> usize {
        2
    }

    fn label(&self) -> DynamicsLabel {
        self.label
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rand::Rng::random(rng);
        let onset = self.onset_lo + (self.onset_hi - self.onset_lo) * u;
        let b = rand_distr::Beta::new(self.shape.0, self.shape.1).expect("validated shape");
        let mag = self.mag_max * b.sample(rng);
        vec![onset, mag]
    }

    fn log_density(&self, params: &[f64]) -> Option<f64> {
        let (onset, mag) = (params[0], params[1]);
        if !(onset >= self.onset_lo && onset <= self.onset_hi && mag >= 0.0 && mag <= self.mag_max) {
            return Some(f64::NEG_INFINITY);
        }
        let u = mag / self.mag_max;
        Some(-(self.onset_hi - self.onset_lo).ln() + self.beta.ln_pdf(u) - self.mag_max.ln())
    }
}

impl RegionMass for CarDist {
    fn inside_mass(&self, region: &Membership) -> Option<f64> {
        match region {
            Membership::Empty => Some(0.0),
            Membership::Boxes { boxes } => Some(exact_sum(
                boxes.iter().map(|b| self.box_mass((b.lo[0], b.hi[0]), (b.lo[1], b.hi[1]))),
            )),
            Membership::HalfSpace { coord: 0, upper } => {
                Some(self.box_mass((f64::NEG_INFINITY, *upper), (0.0, self.mag_max)))
            }
            Membership::HalfSpace { coord: 1, upper } => Some(self.mag_cdf(*upper)),
            _ => None,
        }
    }
}

impl Testbed for CarFollowingBed {
    type Dist = CarDist;

    fn id(&self) -> &'static str {
        "car_following"
    }

    fn dim(&self) -> usize {
        2
    }

    fn distribution(&self, knob: Knob, label: DynamicsLabel) -> Result<CarDist> {
        self.validate()?;
        if knob.system != 0.0 {
            return Err(Error::invalid("car bed has no system knob; system must be 0"));
        }
        check_range("decel_mag scale change", knob.environment, -0.5, 0.5)?;
        CarDist::new(self.onset_range, self.mag_max * (1.0 + knob.environment), self.mag_shape, label)
    }

    /// The car family only supports a magnitude scale tilt in [1, 3].
    fn proposal(&self, base: &CarDist, family: ProposalFamily) -> Result<CarDist> {
        if family.shift != 0.0 {
            return Err(Error::invalid("car proposals support a scale tilt only (shift must be 0)"));
        }
        check_range("proposal scale", family.scale, 1.0, 3.0)?;
        CarDist::new(
            (base.onset_lo, base.onset_hi),
            base.mag_max * family.scale,
            base.shape,
            DynamicsLabel::Proposal,
        )
    }

    fn truth(&self, dist: &CarDist) -> Result<Truth> {
        self.validate()?;
        let mut intervals = 32;
        let mut previous = self.trapezoid(dist, intervals);
        while intervals < 2048 {
            intervals *= 2;
            let current = self.trapezoid(dist, intervals);
            let agree = if current == 0.0 {
                previous == 0.0
            } else {
                ((current - previous) / current).abs() < 0.005
            };
            if agree {
                return Ok(Truth { value: current, abs_error: 0.01 * current, method: OracleMethod::Quadrature });
            }
            previous = current;
        }
        Err(Error::UnsupportedOracle(format!(
            "car-following quadrature did not settle within 0.5% at {intervals} intervals"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stream_rng;

    #[test]
    fn quadrature_converges() {
        let bed = CarFollowingBed::default();
        let t = bed.truth(&bed.true_distribution()).unwrap();
        assert!(t.value > 1e-4 && t.value < 0.1, "{t:?}");
    }

    #[test]
    fn zero_gap_never_safe() {
        let bed = CarFollowingBed { g0: 0.0, ..CarFollowingBed::default() };
        assert!(bed.is_failure(&[4.0, 0.1]));
        assert!(bed.metric(&[4.0, 0.1]).unwrap() > 0.0);
    }

    #[test]
    fn gentle_braking_is_safe() {
        let bed = CarFollowingBed::default();
        assert!(!bed.is_failure(&[2.0, 1.0]));
        assert!(bed.is_failure(&[0.5, 9.5]));
    }

    #[test]
    fn rollouts_are_deterministic() {
        let bed = CarFollowingBed::default();
        let a = bed.rollout(&[1.234, 6.78]);
        let b = bed.rollout(&[1.234, 6.78]);
        assert_eq!(a.min_gap.to_bits(), b.min_gap.to_bits());
        assert_eq!(a.min_time_gap.to_bits(), b.min_time_gap.to_bits());
    }

    #[test]
    fn metrics_agree_with_outcome() {
        let bed = CarFollowingBed::default();
        let dist = bed.true_distribution();
        let mut rng = stream_rng(5, 0);
        for _ in 0..20_000 {
            let x = dist.sample(&mut rng);
            let fail = bed.is_failure(&x);
            assert_eq!(fail, bed.metric(&x).unwrap() > 0.0);
            assert_eq!(fail, bed.tail_metric(&x).unwrap() > 0.0);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let bed = CarFollowingBed::default();
        let dist = bed.true_distribution();
        let m = 400;
        let (lo, hi) = bed.onset_range;
        let h_on = (hi - lo) / m as f64;
        let h_mag = dist.mag_max / m as f64;
        let w = |i: usize| if i == 0 || i == m { 0.5 } else { 1.0 };
        let total = exact_sum((0..=m).flat_map(|i| {
            let dist = &dist;
            (0..=m).map(move |j| {
                w(i) * w(j) * dist.density(&[lo + i as f64 * h_on, j as f64 * h_mag]).unwrap()
            })
        })) * h_on
            * h_mag;
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn scaled_surrogate_density_matches_histogram() {
        // Change of variables: the x1.1 magnitude law against a histogram of
        // 1e6 draws.
        let bed = CarFollowingBed::default();
        let sur = crate::testbeds::surrogate(&bed, Knob { system: 0.0, environment: 0.1 }).unwrap();
        let bins = 20;
        let width = sur.mag_max / bins as f64;
        let mut counts = vec![0u64; bins];
        let n = 1_000_000;
        let mut rng = stream_rng(77, 0);
        for _ in 0..n {
            let x = sur.sample(&mut rng);
            counts[((x[1] / width) as usize).min(bins - 1)] += 1;
        }
        let onset_mid = 2.5;
        for (b, &c) in counts.iter().enumerate() {
            // Simpson's rule for the bin mass of the magnitude marginal.
            let (a, z) = (b as f64 * width, (b + 1) as f64 * width);
            let dens = |m: f64| sur.density(&[onset_mid, m]).unwrap() * (bed.onset_range.1 - bed.onset_range.0);
            let mass = (z - a) / 6.0 * (dens(a) + 4.0 * dens(0.5 * (a + z)) + dens(z));
            let expect = mass * n as f64;
            let sigma = expect.max(1.0).sqrt();
            assert!(((c as f64) - expect).abs() < 5.0 * sigma + 0.01 * expect, "bin {b}: {c} vs {expect}");
        }
    }

    #[test]
    fn system_knob_rejected() {
        let bed = CarFollowingBed::default();
        assert!(bed.distribution(Knob { system: 0.1, environment: 0.0 }, DynamicsLabel::Surrogate).is_err());
    }

    #[test]
    fn unbounded_onset_rejected() {
        let bed = CarFollowingBed { onset_range: (0.0, f64::INFINITY), ..CarFollowingBed::default() };
        assert!(bed.validate().is_err());
    }
}
