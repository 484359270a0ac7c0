use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use ppscert_core::canonical::{format_f64, to_canonical_json};
use ppscert_core::estimators::{self, diagnostics_csv, EstimatorConfig};
use ppscert_core::gap::{
    factorized_distributions, gap_exact_enum, gap_histogram_ratio, gap_ratio_is, FiniteScenarioSpace, GapMethod,
    GapReport, GapTerm,
};
use ppscert_core::region::{
    conditional_tail_estimate, verify_region_grid, verify_region_halfspace, verify_region_interval, Membership,
    OutsideMass, RegionMass, SafeRegion,
};
use ppscert_core::risk::Provenance;
use ppscert_core::sampling::{derive_seed, map_chunks};
use ppscert_core::testbeds::{CarFollowingBed, GaussianThresholdBed, GridWorldBed, Knob, Testbed};
use ppscert_core::{assemble_certificate, Error, ErrorLedger, ErrorTerm, RiskEstimate, ScenarioDistribution, Verdict};

use crate::config::{Bed, RegionBlock, RunConfig};
use crate::Failure;

const ESTIMATOR_TAG: u64 = 1;
const GAP_ENVIRONMENT_TAG: u64 = 3;
const GAP_SYSTEM_TAG: u64 = 4;

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

/// Per-bed pieces the generic pipeline cannot express through `Testbed`.
trait Pipeline: Testbed {
    fn verify(&self, block: &RegionBlock) -> Result<Option<SafeRegion>, Failure>;

    fn finite(_dist: &Self::Dist) -> Option<&dyn FiniteScenarioSpace> {
        None
    }
}

fn region_mismatch(block: &RegionBlock, bed: &str) -> Failure {
    Failure::Config(format!("region kind {block:?} does not apply to the {bed} bed"))
}

impl Pipeline for GaussianThresholdBed {
    fn verify(&self, block: &RegionBlock) -> Result<Option<SafeRegion>, Failure> {
        match block {
            RegionBlock::None => Ok(None),
            RegionBlock::HalfSpace { upper } => Ok(Some(verify_region_halfspace(self, *upper).map_err(Failure::config)?)),
            other => Err(region_mismatch(other, self.id())),
        }
    }
}

impl Pipeline for CarFollowingBed {
    fn verify(&self, block: &RegionBlock) -> Result<Option<SafeRegion>, Failure> {
        match block {
            RegionBlock::None => Ok(None),
            RegionBlock::Interval { partition } => {
                Ok(Some(verify_region_interval(self, *partition).map_err(Failure::config)?))
            }
            other => Err(region_mismatch(other, self.id())),
        }
    }
}

impl Pipeline for GridWorldBed {
    fn verify(&self, block: &RegionBlock) -> Result<Option<SafeRegion>, Failure> {
        match block {
            RegionBlock::None => Ok(None),
            RegionBlock::GridReachability => Ok(Some(verify_region_grid(self))),
            other => Err(region_mismatch(other, self.id())),
        }
    }

    fn finite(dist: &Self::Dist) -> Option<&dyn FiniteScenarioSpace> {
        Some(dist)
    }
}

macro_rules! on_bed {
    ($bed:expr, $b:ident => $body:expr) => {
        match $bed {
            Bed::Gaussian($b) => $body,
            Bed::Car($b) => $body,
            Bed::Grid($b) => $body,
        }
    };
}

fn seeds(cfg: &RunConfig) -> BTreeMap<String, u64> {
    let mut s = BTreeMap::new();
    s.insert("root".to_string(), cfg.seed);
    s.insert("estimator".to_string(), derive_seed(cfg.seed, ESTIMATOR_TAG));
    if cfg.gap.is_some() {
        s.insert("gap_environment".to_string(), derive_seed(cfg.seed, GAP_ENVIRONMENT_TAG));
        s.insert("gap_system".to_string(), derive_seed(cfg.seed, GAP_SYSTEM_TAG));
    }
    s
}

struct Estimation {
    estimate: RiskEstimate,
    region: Option<SafeRegion>,
    outside_mass: Option<OutsideMass>,
}

/// Empirical term: the configured estimator under the surrogate dynamics,
/// restricted to the outside of the safe region when one is configured.
fn estimation<B>(bed: &B, cfg: &RunConfig) -> Result<Estimation, Failure>
where
    B: Pipeline,
    B::Dist: RegionMass,
{
    let region = bed.verify(&cfg.region)?;
    let [_, _, dist] = factorized_distributions(bed, cfg.surrogate).map_err(Failure::config)?;
    let ecfg = cfg.estimator.to_config(cfg.confidence, derive_seed(cfg.seed, ESTIMATOR_TAG));
    let method = cfg.estimator.method;
    let estimate = match &region {
        Some(r) if !r.membership.is_empty() => conditional_tail_estimate(&dist, r, bed, &ecfg, method)?,
        _ => {
            let proposal = match cfg.estimator.proposal {
                Some(family) => Some(bed.proposal(&dist, family).map_err(Failure::config)?),
                None => None,
            };
            estimators::run(method, &dist, bed, &ecfg, proposal.as_ref().map(|q| q as &dyn ScenarioDistribution))?
        }
    };
    let outside_mass = region.as_ref().map(|r| r.outside_mass_under(&dist));
    Ok(Estimation { estimate, region, outside_mass })
}

/// Environment and system gap reports, or `None` when the surrogate is the
/// true dynamics and no gap block is configured.
fn gap_reports<B: Pipeline>(bed: &B, cfg: &RunConfig, region: &Membership) -> Result<Option<[GapReport; 2]>, Failure> {
    let Some(block) = &cfg.gap else {
        if cfg.surrogate != Knob::ZERO {
            return Err(Failure::Config("surrogate dynamics differ from truth; a [gap] block is required".into()));
        }
        return Ok(None);
    };
    let [t, e, s] = factorized_distributions(bed, cfg.surrogate).map_err(Failure::config)?;
    let one = |term: GapTerm, a: &B::Dist, b: &B::Dist, seed: u64| -> Result<GapReport, Failure> {
        Ok(match block.method {
            GapMethod::ExactEnum => {
                let (Some(fa), Some(fb)) = (B::finite(a), B::finite(b)) else {
                    return Err(Error::Unsupported(format!("exact enumeration needs a finite scenario space; {} has none", bed.id())).into());
                };
                gap_exact_enum(term, fa, fb, bed, region)?
            }
            GapMethod::RatioIs => {
                let gcfg = EstimatorConfig { n: block.n, confidence: cfg.confidence, seed, ..EstimatorConfig::default() };
                gap_ratio_is(term, a, b, bed, region, &gcfg)?
            }
            GapMethod::HistogramRatio => {
                let xa = draw(a, block.n, derive_seed(seed, 0));
                let xb = draw(b, block.n, derive_seed(seed, 1));
                let fv: Vec<f64> = xb.iter().map(|x| if bed.is_failure(x) { 1.0 } else { 0.0 }).collect();
                gap_histogram_ratio(term, &xa, &xb, &fv, region, &block.histogram())?
            }
        })
    };
    let env = one(GapTerm::Environment, &t, &e, derive_seed(cfg.seed, GAP_ENVIRONMENT_TAG))?;
    let sys = one(GapTerm::System, &e, &s, derive_seed(cfg.seed, GAP_SYSTEM_TAG))?;
    Ok(Some([env, sys]))
}

fn draw(dist: &dyn ScenarioDistribution, n: usize, seed: u64) -> Vec<Vec<f64>> {
    map_chunks(seed, n, |range, rng| range.map(|_| dist.sample(rng)).collect::<Vec<_>>()).into_iter().flatten().collect()
}

fn membership(region: &Option<SafeRegion>) -> Membership {
    region.as_ref().map_or(Membership::Empty, |r| r.membership.clone())
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

fn canonical<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    to_canonical_json(value).map_err(Failure::config)
}

/// Writes the embedded config next to every report so a run can be
/// replayed from its own output.
fn write_config(ctx: &Context) -> Result<(), Failure> {
    write(&ctx.out, "config.json", &canonical(&ctx.config.embedded())?)
}

pub fn format_truth(value: f64) -> String {
    if value == 0.0 {
        "0".to_string()
    } else {
        format!("{value:.3e}")
    }
}

pub fn truth(ctx: &Context) -> Result<i32, Failure> {
    let bed = ctx.config.testbed.build()?;
    let t = on_bed!(&bed, b => b.truth(&b.true_distribution())).map_err(Failure::config)?;
    say!("{}", format_truth(t.value));
    say!("{}", t.describe());
    Ok(0)
}

pub fn estimate(ctx: &Context) -> Result<i32, Failure> {
    let cfg = &ctx.config;
    let bed = cfg.testbed.build()?;
    let (id, run) = on_bed!(&bed, b => (b.id(), estimation(b, cfg)?));
    let report = json!({
        "command": "estimate",
        "testbed": id,
        "config": cfg.embedded(),
        "config_digest": cfg.digest()?,
        "seeds": seeds(cfg),
        "estimate": run.estimate,
        "outside_mass": run.outside_mass,
    });
    write(&ctx.out, "report.json", &canonical(&report)?)?;
    write(&ctx.out, "diagnostics.csv", &diagnostics_csv(&run.estimate.trace))?;
    write_config(ctx)?;
    let e = &run.estimate;
    say!(
        "{:?}: point {:.6e}, upper bound {:.6e} ({:?} at {}), {} samples",
        e.method, e.point, e.upper_bound, e.bound_method, e.confidence, e.n_samples
    );
    Ok(0)
}

pub fn region(ctx: &Context) -> Result<i32, Failure> {
    let cfg = &ctx.config;
    if cfg.region == RegionBlock::None {
        return Err(Failure::Config("the region command needs a [region] block".into()));
    }
    let bed = cfg.testbed.build()?;
    let (id, region, outside) = on_bed!(&bed, b => {
        let region = b.verify(&cfg.region)?.expect("region block is set");
        let [_, _, dist] = factorized_distributions(b, cfg.surrogate).map_err(Failure::config)?;
        let outside = region.outside_mass_under(&dist);
        (b.id(), region, outside)
    });
    let doc = json!({
        "command": "region",
        "testbed": id,
        "config_digest": cfg.digest()?,
        "region": region,
        "outside_mass_surrogate": outside,
    });
    write(&ctx.out, "region.json", &canonical(&doc)?)?;
    write_config(ctx)?;
    let rec = &region.certificate;
    say!("verified {} of {} candidate cells or boxes", rec.inside_count, rec.total_count);
    say!("mass inside: {:.6e}", 1.0 - region.outside_mass.point());
    say!("mass outside: {:.6e} (upper {:.6e})", region.outside_mass.point(), region.outside_mass.upper());
    match &region.membership {
        Membership::GridCells { cells } => {
            let list: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
            say!("cells: {}", list.join(" "));
        }
        Membership::Boxes { boxes } => {
            for b in boxes {
                say!("box: {:?} .. {:?}", b.lo, b.hi);
            }
        }
        Membership::HalfSpace { coord, upper } => say!("half-space: x[{coord}] <= {upper}"),
        Membership::Empty => say!("region is empty"),
    }
    if let Some(n) = rec.exhaustive_failures {
        say!("exhaustive check: {n} failures in {} scenarios", rec.exhaustive_scenarios.unwrap_or(0));
    }
    Ok(0)
}

pub fn gap(ctx: &Context) -> Result<i32, Failure> {
    let cfg = &ctx.config;
    if cfg.gap.is_none() {
        return Err(Failure::Config("the gap command needs a [gap] block".into()));
    }
    let bed = cfg.testbed.build()?;
    let (id, reports) = on_bed!(&bed, b => {
        let region = b.verify(&cfg.region)?;
        (b.id(), gap_reports(b, cfg, &membership(&region))?.expect("gap block is set"))
    });
    let [env, sys] = reports;
    let doc = json!({
        "command": "gap",
        "testbed": id,
        "config_digest": cfg.digest()?,
        "seeds": seeds(cfg),
        "environment_gap": env,
        "system_gap": sys,
    });
    write(&ctx.out, "gap.json", &canonical(&doc)?)?;
    write_config(ctx)?;
    for r in [&env, &sys] {
        say!("{:?} gap: bound {:.6e} ({:?}, confidence {})", r.term, r.bound, r.method, r.confidence);
    }
    Ok(0)
}

pub fn certify(ctx: &Context) -> Result<i32, Failure> {
    let cfg = &ctx.config;
    let theta = cfg.theta.ok_or_else(|| Failure::Config("certify needs theta".into()))?;
    let bed = cfg.testbed.build()?;
    let (id, run, gaps) = on_bed!(&bed, b => {
        let run = estimation(b, cfg)?;
        let gaps = gap_reports(b, cfg, &membership(&run.region))?;
        (b.id(), run, gaps)
    });
    let (system_gap, environment_gap) = match &gaps {
        Some([env, sys]) => (sys.to_error_term(), env.to_error_term()),
        None => (ErrorTerm::exact_zero(), ErrorTerm::exact_zero()),
    };
    let ledger = ErrorLedger::from_estimate(run.estimate, system_gap, environment_gap);
    if let Some((name, method)) = ledger.uncertified_term() {
        return Err(Failure::Uncertified(format!("the {name} term comes from {method:?}, which is not a certified bound")));
    }
    let mut cert = assemble_certificate(ledger, theta)?.with_provenance(Provenance {
        testbed: id.to_string(),
        seeds: seeds(cfg),
        config_digest: cfg.digest()?,
    });
    if let Some(region) = run.region {
        cert = cert.with_region(region.certificate);
    }
    write(&ctx.out, "certificate.json", &canonical(&cert)?)?;
    if let Some([env, sys]) = &gaps {
        let doc = json!({ "environment_gap": env, "system_gap": sys });
        write(&ctx.out, "gap.json", &canonical(&doc)?)?;
    }
    write_config(ctx)?;
    say!(
        "{:?}: total {:.6e} vs theta {:.6e}, joint confidence {}",
        cert.verdict, cert.total, theta, cert.joint_confidence
    );
    Ok(if cert.verdict == Verdict::Pass { 0 } else { 1 })
}

pub fn sweep(ctx: &Context) -> Result<i32, Failure> {
    let base = &ctx.config;
    let sweep = base.sweep.as_ref().ok_or_else(|| Failure::Config("the sweep command needs a [sweep] block".into()))?;
    let mut csv = String::from("value,point,upper_bound,confidence,n_samples");
    if base.gap.is_some() {
        csv.push_str(",environment_gap,system_gap");
    }
    csv.push('\n');
    for &value in &sweep.values {
        let cfg = base.with_axis(&sweep.axis, value)?;
        let bed = cfg.testbed.build()?;
        let (run, gaps) = on_bed!(&bed, b => {
            let run = estimation(b, &cfg)?;
            let gaps = gap_reports(b, &cfg, &membership(&run.region))?;
            (run, gaps)
        });
        let e = &run.estimate;
        let _ = write!(
            csv,
            "{},{},{},{},{}",
            format_f64(value),
            format_f64(e.point),
            format_f64(e.upper_bound),
            format_f64(e.confidence),
            e.n_samples
        );
        if base.gap.is_some() {
            let [env, sys] = gaps.expect("gap block is set");
            let _ = write!(csv, ",{},{}", format_f64(env.bound), format_f64(sys.bound));
        }
        csv.push('\n');
    }
    write(&ctx.out, "sweep.csv", &csv)?;
    write_config(ctx)?;
    say!("{} sweep points over {}", sweep.values.len(), sweep.axis);
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_formatting() {
        assert_eq!(format_truth(1.000_001_030_895_094_4e-3), "1.000e-3");
        assert_eq!(format_truth(0.0), "0");
    }
}
