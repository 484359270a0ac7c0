//! Bounds on the distribution-gap terms: the system-behaviour gap and the
//! environment-model gap between true and surrogate dynamics.
//!
//! The total gap is factorized through an intermediate law with the true
//! system and the surrogate environment. The environment term compares the
//! true law against it; the system term compares it against the full
//! surrogate. See [`factorized_distributions`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{clopper_pearson_upper, EstimatorConfig};
use crate::numeric::{exact_sum, normal_quantile, CompensatedSum};
use crate::region::Membership;
use crate::risk::{BoundMethod, DynamicsLabel, ErrorTerm, OutcomeFn, ScenarioDistribution};
use crate::sampling::map_chunks;
use crate::testbeds::{Knob, Testbed};

/// Largest scenario space [`gap_exact_enum`] will walk.
pub const MAX_ENUMERATION: u128 = 50_000_000;
/// Density ratios outside this range are flagged as unreliable.
pub const RELIABLE_WEIGHTS: (f64, f64) = (0.1, 10.0);
const MIN_HISTOGRAM_SAMPLES: usize = 10_000;
const MAX_HISTOGRAM_DIMS: usize = 3;
const MAX_EMPTY_BIN_SHARE: f64 = 0.2;

/// A scenario law on a finite, enumerable support.
pub trait FiniteScenarioSpace: ScenarioDistribution {
    /// Number of support points, `None` on overflow.
    fn support_size(&self) -> Option<u128>;

    /// Calls `visit` once per support point in a fixed order.
    fn for_each_point(&self, visit: &mut dyn FnMut(&[f64]));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapTerm {
    System,
    Environment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GapMethod {
    ExactEnum,
    RatioIs,
    HistogramRatio,
}

impl GapMethod {
    pub fn bound_method(self) -> BoundMethod {
        match self {
            GapMethod::ExactEnum => BoundMethod::ExactEnum,
            GapMethod::RatioIs => BoundMethod::RatioIs,
            GapMethod::HistogramRatio => BoundMethod::HistogramRatio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub term: GapTerm,
    /// Nonnegative bound on `|E_a[f 1_out] - E_b[f 1_out]|`.
    pub bound: f64,
    pub confidence: f64,
    pub method: GapMethod,
    /// Signed estimate `E_a[f 1_out] - E_b[f 1_out]`.
    pub point: f64,
    pub n_samples: u64,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl GapReport {
    pub fn to_error_term(&self) -> ErrorTerm {
        ErrorTerm { value: self.bound, confidence: self.confidence, method: self.method.bound_method() }
    }
}

/// True law, intermediate law (true system, surrogate environment) and full
/// surrogate law. The environment gap is between the first two, the system
/// gap between the last two.
pub fn factorized_distributions<B: Testbed>(bed: &B, knob: Knob) -> Result<[B::Dist; 3]> {
    Ok([
        bed.distribution(Knob::ZERO, DynamicsLabel::True)?,
        bed.distribution(knob.environment_only(), DynamicsLabel::Surrogate)?,
        bed.distribution(knob, DynamicsLabel::Surrogate)?,
    ])
}

/// `|sum_{x outside region} f(x) (p_a(x) - p_b(x))|` by enumerating the
/// support, with compensated summation. Confidence 1.
pub fn gap_exact_enum(
    term: GapTerm,
    a: &dyn FiniteScenarioSpace,
    b: &dyn FiniteScenarioSpace,
    f: &dyn OutcomeFn,
    region: &Membership,
) -> Result<GapReport> {
    let size = match (a.support_size(), b.support_size()) {
        (Some(sa), Some(sb)) if sa == sb => sa,
        (Some(_), Some(_)) => return Err(Error::invalid("the two laws have different supports")),
        _ => return Err(Error::Unsupported("scenario space too large to count".into())),
    };
    if size > MAX_ENUMERATION {
        return Err(Error::Unsupported(format!("{size} scenarios exceed the enumeration limit {MAX_ENUMERATION}")));
    }
    let mut diff = CompensatedSum::new();
    let mut tv = CompensatedSum::new();
    let mut mass_a = CompensatedSum::new();
    let (mut w_min, mut w_max) = (f64::INFINITY, 0.0f64);
    let mut failures = 0u64;
    let mut missing = None;
    a.for_each_point(&mut |x| {
        if missing.is_some() || region.contains(x) || !f.is_failure(x) {
            return;
        }
        let (Some(la), Some(lb)) = (a.log_density(x), b.log_density(x)) else {
            missing = Some(x.to_vec());
            return;
        };
        let (pa, pb) = (la.exp(), lb.exp());
        failures += 1;
        diff.add(pa);
        diff.add(-pb);
        mass_a.add(pa);
        tv.add((pa - pb).abs());
        if pb > 0.0 {
            let w = pa / pb;
            w_min = w_min.min(w);
            w_max = w_max.max(w);
        }
    });
    if let Some(x) = missing {
        return Err(Error::Unsupported(format!("mass function not evaluable at {x:?}")));
    }
    let point = diff.value();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("tv_on_failure_set".into(), tv.value());
    diagnostics.insert("failure_mass_a".into(), mass_a.value());
    diagnostics.insert("failure_points".into(), failures as f64);
    diagnostics.insert("support_size".into(), size as f64);
    if w_max > 0.0 {
        diagnostics.insert("weight_min".into(), w_min);
        diagnostics.insert("weight_max".into(), w_max);
    }
    Ok(GapReport {
        term,
        bound: point.abs(),
        confidence: 1.0,
        method: GapMethod::ExactEnum,
        point,
        n_samples: 0,
        diagnostics,
        notes: Vec::new(),
    })
}

/// Importance-ratio gap bound from `cfg.n` draws of the surrogate.
///
/// Terms `f(x) 1_out(x) (w(x) - 1)` with `w = p_true / p_surrogate` have
/// mean `E_true[f 1_out] - E_surrogate[f 1_out]`. The bound is the absolute
/// mean plus a two-sided CLT half-width at `cfg.confidence`. With fewer
/// than two failures among the draws the CLT is meaningless; the bound then
/// falls back to a Clopper-Pearson bound on the surrogate failure rate times
/// the largest weight seen, flagged as heuristic.
pub fn gap_ratio_is(
    term: GapTerm,
    truth: &dyn ScenarioDistribution,
    surrogate: &dyn ScenarioDistribution,
    f: &dyn OutcomeFn,
    region: &Membership,
    cfg: &EstimatorConfig,
) -> Result<GapReport> {
    cfg.validate()?;
    struct Draw {
        term: f64,
        weight: f64,
    }
    let chunks = map_chunks(cfg.seed, cfg.n, |range, rng| {
        range
            .map(|_| {
                let x = surrogate.sample(rng);
                if region.contains(&x) || !f.is_failure(&x) {
                    return Ok(None);
                }
                let ls = surrogate.log_density(&x).ok_or_else(|| Error::Unsupported("surrogate density not evaluable".into()))?;
                let lt = truth.log_density(&x).ok_or_else(|| Error::Unsupported("true density not evaluable".into()))?;
                if ls == f64::NEG_INFINITY || ls.is_nan() {
                    return Err(Error::DominationViolation { params: x });
                }
                let weight = (lt - ls).exp();
                Ok(Some(Draw { term: weight - 1.0, weight }))
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut draws = Vec::new();
    for chunk in chunks {
        draws.extend(chunk?.into_iter().flatten());
    }

    let n = cfg.n as f64;
    let hits = draws.len();
    let point = exact_sum(draws.iter().map(|d| d.term)) / n;
    let ss = exact_sum(draws.iter().map(|d| (d.term - point) * (d.term - point))) + (cfg.n - draws.len()) as f64 * point * point;
    let sd = if cfg.n > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    let (w_min, w_max) = draws
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d.weight), hi.max(d.weight)));
    let unreliable = draws.iter().filter(|d| d.weight < RELIABLE_WEIGHTS.0 || d.weight > RELIABLE_WEIGHTS.1).count();

    let mut notes = Vec::new();
    let degenerate = hits < 2;
    let bound = if degenerate {
        let rate = clopper_pearson_upper(hits as u64, cfg.n as u64, cfg.confidence)?;
        notes.push(format!(
            "only {hits} failure draws: heuristic bound from the surrogate failure rate times the largest weight"
        ));
        rate * w_max.max(1.0)
    } else {
        let z = normal_quantile(1.0 - (1.0 - cfg.confidence) / 2.0);
        point.abs() + z * sd / n.sqrt()
    };
    if unreliable > 0 {
        notes.push(format!(
            "{unreliable} failure draws have weights outside [{}, {}]",
            RELIABLE_WEIGHTS.0, RELIABLE_WEIGHTS.1
        ));
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("tv_on_failure_set".into(), exact_sum(draws.iter().map(|d| d.term.abs())) / n);
    diagnostics.insert("failure_draws".into(), hits as f64);
    diagnostics.insert("term_sd".into(), sd);
    diagnostics.insert("unreliable_weights".into(), unreliable as f64);
    diagnostics.insert("degenerate".into(), if degenerate { 1.0 } else { 0.0 });
    if hits > 0 {
        diagnostics.insert("weight_min".into(), w_min);
        diagnostics.insert("weight_max".into(), w_max);
    }
    Ok(GapReport {
        term,
        bound: bound.min(1.0),
        confidence: cfg.confidence,
        method: GapMethod::RatioIs,
        point,
        n_samples: cfg.n as u64,
        diagnostics,
        notes,
    })
}

/// Binning for [`gap_histogram_ratio`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    /// Equal-width bins per binned coordinate.
    pub bins: usize,
    /// Coordinates to bin; all when absent.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig { bins: 64, dims: None }
    }
}

/// Sample-only gap estimate from binned density ratios.
///
/// Both sample sets are binned on a shared equal-width grid; each bin gets
/// the ratio of true to surrogate sample frequencies, and the estimate is
/// the mean of `f 1_out (w_bin - 1)` over the surrogate samples, whose
/// failure values are `f_values`. The binning bias is uncontrolled, so the
/// result is an estimate tagged as uncertified.
pub fn gap_histogram_ratio(
    term: GapTerm,
    samples_true: &[Vec<f64>],
    samples_surrogate: &[Vec<f64>],
    f_values: &[f64],
    region: &Membership,
    cfg: &HistogramConfig,
) -> Result<GapReport> {
    let (nt, ns) = (samples_true.len(), samples_surrogate.len());
    if nt.min(ns) < MIN_HISTOGRAM_SAMPLES {
        return Err(Error::InsufficientData { needed: MIN_HISTOGRAM_SAMPLES, got: nt.min(ns) });
    }
    if f_values.len() != ns {
        return Err(Error::invalid("one failure value per surrogate sample is required"));
    }
    if cfg.bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let dim = samples_surrogate[0].len();
    let dims: Vec<usize> = cfg.dims.clone().unwrap_or_else(|| (0..dim).collect());
    if dims.is_empty() || dims.len() > MAX_HISTOGRAM_DIMS {
        return Err(Error::invalid(format!("histogram bins 1 to {MAX_HISTOGRAM_DIMS} coordinates, got {}", dims.len())));
    }
    if samples_true.iter().chain(samples_surrogate).any(|x| x.len() != dim || dims.iter().any(|&d| !x.get(d).is_some_and(|v| v.is_finite()))) {
        return Err(Error::invalid("samples must share a dimension and be finite on binned coordinates"));
    }

    let ranges: Vec<(f64, f64)> = dims
        .iter()
        .map(|&d| {
            samples_true.iter().chain(samples_surrogate).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[d]), hi.max(x[d])))
        })
        .collect();
    let bin_of = |x: &[f64]| -> Vec<usize> {
        dims.iter()
            .zip(&ranges)
            .map(|(&d, &(lo, hi))| {
                if hi > lo {
                    (((x[d] - lo) / (hi - lo) * cfg.bins as f64) as usize).min(cfg.bins - 1)
                } else {
                    0
                }
            })
            .collect()
    };
    let mut true_counts: HashMap<Vec<usize>, u64> = HashMap::new();
    for x in samples_true {
        *true_counts.entry(bin_of(x)).or_default() += 1;
    }
    let mut sur_counts: HashMap<Vec<usize>, u64> = HashMap::new();
    let bins: Vec<Vec<usize>> = samples_surrogate.iter().map(|x| bin_of(x)).collect();
    for b in &bins {
        *sur_counts.entry(b.clone()).or_default() += 1;
    }

    let scale = ns as f64 / nt as f64;
    let mut terms = Vec::new();
    let (mut fail_mass, mut empty_mass) = (0.0, 0.0);
    let (mut w_min, mut w_max) = (f64::INFINITY, 0.0f64);
    for ((x, b), &fv) in samples_surrogate.iter().zip(&bins).zip(f_values) {
        if fv == 0.0 || region.contains(x) {
            continue;
        }
        let ct = true_counts.get(b).copied().unwrap_or(0);
        let w = ct as f64 * scale / sur_counts[b] as f64;
        fail_mass += fv;
        if ct == 0 {
            empty_mass += fv;
        }
        w_min = w_min.min(w);
        w_max = w_max.max(w);
        terms.push(fv * (w - 1.0));
    }
    let share = if fail_mass > 0.0 { empty_mass / fail_mass } else { 0.0 };
    if share > MAX_EMPTY_BIN_SHARE {
        return Err(Error::UnreliableBinning { share });
    }
    let point = exact_sum(terms.iter().copied()) / ns as f64;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("tv_on_failure_set".into(), exact_sum(terms.iter().map(|t| t.abs())) / ns as f64);
    diagnostics.insert("empty_bin_failure_share".into(), share);
    diagnostics.insert("occupied_bins".into(), sur_counts.len() as f64);
    if w_max > 0.0 {
        diagnostics.insert("weight_min".into(), w_min);
        diagnostics.insert("weight_max".into(), w_max);
    }
    Ok(GapReport {
        term,
        bound: point.abs(),
        // Nominal: a binned ratio carries no confidence statement.
        confidence: 0.5,
        method: GapMethod::HistogramRatio,
        point,
        n_samples: (nt + ns) as u64,
        diagnostics,
        notes: vec!["binned density ratio: estimate with uncontrolled bias, not a certified bound".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::normal_sf;
    use crate::risk::FnOutcome;
    use crate::sampling::stream_rng;
    use crate::testbeds::{GaussianThresholdBed, GridWorldBed, Policy};

    fn grid(slip: f64) -> GridWorldBed {
        GridWorldBed::new(4, &[[1, 2], [2, 1]], slip, 4, Policy::TowardGoal { goal: [3, 3] }).unwrap()
    }

    #[test]
    fn identical_laws_have_no_gap() {
        let bed = grid(0.1);
        let d = bed.true_distribution();
        let r = gap_exact_enum(GapTerm::System, &d, &d, &bed, &Membership::Empty).unwrap();
        assert_eq!(r.bound, 0.0);
        assert_eq!(r.confidence, 1.0);
    }

    #[test]
    fn exact_gap_matches_chain_difference() {
        let bed = grid(0.10);
        let [t, _, s] = factorized_distributions(&bed, Knob { system: 0.02, environment: 0.0 }).unwrap();
        let r = gap_exact_enum(GapTerm::System, &t, &s, &bed, &Membership::Empty).unwrap();
        let exact = bed.truth(&t).unwrap().value - bed.truth(&s).unwrap().value;
        assert!(exact.abs() > 1e-4);
        assert!((r.point - exact).abs() < 1e-12, "{} vs {exact}", r.point);
        let back = gap_exact_enum(GapTerm::System, &s, &t, &bed, &Membership::Empty).unwrap();
        assert_eq!(back.bound.to_bits(), r.bound.to_bits());
    }

    #[test]
    fn safe_outcome_has_no_gap() {
        let bed = grid(0.1);
        let [t, _, s] = factorized_distributions(&bed, Knob { system: 0.05, environment: 0.5 }).unwrap();
        let never = FnOutcome(|_: &[f64]| false);
        assert_eq!(gap_exact_enum(GapTerm::System, &t, &s, &never, &Membership::Empty).unwrap().bound, 0.0);
    }

    #[test]
    fn factorized_terms_bound_the_total() {
        let bed = grid(0.1);
        let knob = Knob { system: 0.05, environment: 0.7 };
        let [t, e, s] = factorized_distributions(&bed, knob).unwrap();
        let total = gap_exact_enum(GapTerm::System, &t, &s, &bed, &Membership::Empty).unwrap().bound;
        let env = gap_exact_enum(GapTerm::Environment, &t, &e, &bed, &Membership::Empty).unwrap().bound;
        let sys = gap_exact_enum(GapTerm::System, &e, &s, &bed, &Membership::Empty).unwrap().bound;
        assert!(total <= env + sys + 1e-15);
        assert!(env > 0.0 && sys > 0.0);
    }

    #[test]
    fn oversized_space_is_unsupported() {
        let bed = GridWorldBed::new(10, &[[5, 5]], 0.1, 12, Policy::TowardGoal { goal: [9, 9] }).unwrap();
        let d = bed.true_distribution();
        assert!(matches!(gap_exact_enum(GapTerm::System, &d, &d, &bed, &Membership::Empty), Err(Error::Unsupported(_))));
    }

    #[test]
    fn identity_ratio_is_noise_only() {
        let bed = GaussianThresholdBed::new(2, 1.5).unwrap();
        let d = bed.true_distribution();
        let cfg = EstimatorConfig { n: 20_000, seed: 3, ..EstimatorConfig::default() };
        let r = gap_ratio_is(GapTerm::Environment, &d, &d, &bed, &Membership::Empty, &cfg).unwrap();
        assert_eq!(r.point, 0.0);
        assert_eq!(r.bound, 0.0);
        assert_eq!(r.diagnostics["degenerate"], 0.0);
    }

    #[test]
    fn ratio_bound_covers_shifted_gaussian_gap() {
        let bed = GaussianThresholdBed::new(1, 2.0).unwrap();
        let [t, e, _] = factorized_distributions(&bed, Knob { system: 0.0, environment: 0.1 }).unwrap();
        let exact = normal_sf(2.0) - normal_sf(1.9);
        let cfg = EstimatorConfig { n: 100_000, seed: 11, ..EstimatorConfig::default() };
        let r = gap_ratio_is(GapTerm::Environment, &t, &e, &bed, &Membership::Empty, &cfg).unwrap();
        assert!(r.bound >= exact.abs(), "{} < {}", r.bound, exact.abs());
        assert!((r.point - exact).abs() < 3e-3);
    }

    #[test]
    fn region_removes_gap_it_covers() {
        let bed = GaussianThresholdBed::new(1, 2.0).unwrap();
        let [t, e, _] = factorized_distributions(&bed, Knob { system: 0.0, environment: 0.3 }).unwrap();
        let all = Membership::HalfSpace { coord: 0, upper: f64::INFINITY };
        let cfg = EstimatorConfig { n: 10_000, ..EstimatorConfig::default() };
        let r = gap_ratio_is(GapTerm::Environment, &t, &e, &bed, &all, &cfg).unwrap();
        assert_eq!(r.point, 0.0);
        assert_eq!(r.diagnostics["degenerate"], 1.0);
        // No failure draws: the fallback is the zero-count Clopper-Pearson bound.
        assert_eq!(r.bound, clopper_pearson_upper(0, 10_000, 0.95).unwrap());
    }

    fn gaussian_samples(mean: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = crate::testbeds::GaussianDist { mean0: mean, ..crate::testbeds::GaussianDist::standard(1) };
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn histogram_identical_sets_have_no_gap() {
        let xs = gaussian_samples(0.0, 20_000, 1);
        let f: Vec<f64> = xs.iter().map(|x| if x[0] > 1.0 { 1.0 } else { 0.0 }).collect();
        let r = gap_histogram_ratio(GapTerm::Environment, &xs, &xs, &f, &Membership::Empty, &HistogramConfig::default()).unwrap();
        assert_eq!(r.bound, 0.0);
        assert!(!r.to_error_term().method.is_certified());
    }

    #[test]
    fn histogram_within_factor_two_of_closed_form() {
        let xt = gaussian_samples(0.0, 100_000, 2);
        let xs = gaussian_samples(0.2, 100_000, 3);
        let f: Vec<f64> = xs.iter().map(|x| if x[0] > 2.0 { 1.0 } else { 0.0 }).collect();
        let exact = normal_sf(1.8) - normal_sf(2.0);
        let r = gap_histogram_ratio(GapTerm::Environment, &xt, &xs, &f, &Membership::Empty, &HistogramConfig::default()).unwrap();
        assert!(r.bound > exact / 2.0 && r.bound < exact * 2.0, "{} vs {exact}", r.bound);
    }

    #[test]
    fn single_bin_ratio_is_one() {
        let xt = gaussian_samples(0.0, 10_000, 2);
        let xs = gaussian_samples(0.5, 10_000, 3);
        let f: Vec<f64> = xs.iter().map(|x| if x[0] > 1.0 { 1.0 } else { 0.0 }).collect();
        let cfg = HistogramConfig { bins: 1, dims: None };
        let r = gap_histogram_ratio(GapTerm::Environment, &xt, &xs, &f, &Membership::Empty, &cfg).unwrap();
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn failures_in_unseen_bins_are_rejected() {
        let xt = gaussian_samples(0.0, 10_000, 2);
        let xs = gaussian_samples(3.0, 10_000, 3);
        let f: Vec<f64> = xs.iter().map(|x| if x[0] > 3.5 { 1.0 } else { 0.0 }).collect();
        let cfg = HistogramConfig { bins: 200, dims: None };
        let err = gap_histogram_ratio(GapTerm::Environment, &xt, &xs, &f, &Membership::Empty, &cfg).unwrap_err();
        assert!(matches!(err, Error::UnreliableBinning { .. }));
    }

    #[test]
    fn histogram_needs_enough_samples() {
        let xs = gaussian_samples(0.0, 100, 1);
        let f = vec![0.0; 100];
        assert!(matches!(
            gap_histogram_ratio(GapTerm::Environment, &xs, &xs, &f, &Membership::Empty, &HistogramConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
