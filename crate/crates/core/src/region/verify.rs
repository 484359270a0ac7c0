use super::{BoxCheck, Membership, OutsideMass, ParamBox, RegionMass, SafeRegion, VerificationMethod, VerificationRecord};
use crate::error::{Error, Result};
use crate::testbeds::{CarFollowingBed, GaussianThresholdBed, GridWorldBed, Testbed};

/// Scenario budget for the exhaustive replay behind a grid certificate.
const EXHAUSTIVE_LIMIT: u128 = 50_000_000;

/// Start cells from which no resolution of the slips can reach a hazard
/// within the horizon.
///
/// The unsafe set grows backwards from the hazards: a cell joins when any
/// of its one-step successors (the policy move plus, when slips are
/// possible, all four slip directions) is already unsafe. After `H` rounds
/// the complement is the certified region. Every scenario starting in the
/// region is then replayed exhaustively as an independent check.
pub fn verify_region_grid(bed: &GridWorldBed) -> SafeRegion {
    let cells = bed.cells();
    let mut unsafe_set: Vec<bool> = (0..cells).map(|c| bed.is_hazard(c)).collect();
    let mut unsafe_counts = vec![unsafe_set.iter().filter(|&&u| u).count() as u64];
    let mut iterations = 0;
    for _ in 0..bed.horizon {
        let next: Vec<bool> = (0..cells)
            .map(|c| unsafe_set[c] || bed.successors(c).iter().any(|&s| unsafe_set[s]))
            .collect();
        iterations += 1;
        let changed = next != unsafe_set;
        unsafe_set = next;
        unsafe_counts.push(unsafe_set.iter().filter(|&&u| u).count() as u64);
        if !changed {
            break;
        }
    }
    let safe: Vec<usize> = (0..cells).filter(|&c| !unsafe_set[c]).collect();

    let codes: Vec<usize> = if bed.slip > 0.0 { (0..5).collect() } else { vec![0] };
    let scenarios = (safe.len() as u128).checked_mul((codes.len() as u128).pow(bed.horizon as u32));
    let (exhaustive_scenarios, exhaustive_failures) = match scenarios {
        Some(total) if total <= EXHAUSTIVE_LIMIT => {
            let failures: u64 = safe.iter().map(|&s| count_failures(bed, s, bed.horizon, &codes)).sum();
            (Some(total as u64), Some(failures))
        }
        _ => (None, None),
    };

    let mut notes = vec!["slips resolved adversarially (nondeterministic closure)".to_string()];
    if bed.hazard_free() {
        notes.push("hazard-free grid: the tail term is vacuously 0".to_string());
    }
    if exhaustive_scenarios.is_none() {
        notes.push("exhaustive replay skipped: scenario count above limit".to_string());
    }
    let record = VerificationRecord {
        method: VerificationMethod::BackwardReachability,
        iterations,
        unsafe_counts,
        boxes: Vec::new(),
        inside_count: safe.len() as u64,
        total_count: cells as u64,
        exhaustive_scenarios,
        exhaustive_failures,
        notes,
    };
    let membership = Membership::GridCells { cells: safe };
    let dist = bed.true_distribution();
    let inside = dist.inside_mass(&membership).unwrap_or(0.0);
    SafeRegion { membership, certificate: record, outside_mass: OutsideMass::Exact { value: (1.0 - inside).max(0.0) } }
}

/// Failing action sequences of length `depth` from `cell` (depth-first).
fn count_failures(bed: &GridWorldBed, cell: usize, depth: usize, codes: &[usize]) -> u64 {
    if bed.is_hazard(cell) {
        return (codes.len() as u64).pow(depth as u32);
    }
    if depth == 0 {
        return 0;
    }
    codes
        .iter()
        .map(|&a| {
            let mv = if a == 0 { bed.policy_move(cell) } else { crate::testbeds::SLIPS[a - 1] };
            count_failures(bed, bed.step(cell, mv), depth - 1, codes)
        })
        .sum()
}

/// Parameter boxes of the car bed whose worst-case gap stays positive.
///
/// The declared ranges are cut into `partition[0] x partition[1]` boxes.
/// For each box the leader brakes as early and as hard as the box allows
/// while the follower reacts as late as it allows; since positions are
/// monotone in those parameters, a positive minimum gap for that pairing
/// certifies the whole box. When `g0 > v_follower * T * dt` the follower
/// cannot close the gap even against a stationary leader, so every box is
/// certified without simulation.
pub fn verify_region_interval(bed: &CarFollowingBed, partition: [usize; 2]) -> Result<SafeRegion> {
    bed.validate()?;
    if partition[0] == 0 || partition[1] == 0 {
        return Err(Error::invalid("interval partition needs at least one box per axis"));
    }
    let [(on_lo, on_hi), (mag_lo, mag_hi)] = bed.declared_ranges();
    let horizon = bed.horizon_steps as f64 * bed.dt;
    let closing_bound = bed.v_follower * horizon;
    let shortcut = bed.g0 > 0.0 && bed.g0 > closing_bound;

    let mut checks = Vec::with_capacity(partition[0] * partition[1]);
    for i in 0..partition[0] {
        let a = on_lo + (on_hi - on_lo) * i as f64 / partition[0] as f64;
        let b = if i + 1 == partition[0] { on_hi } else { on_lo + (on_hi - on_lo) * (i + 1) as f64 / partition[0] as f64 };
        for j in 0..partition[1] {
            let c = mag_lo + (mag_hi - mag_lo) * j as f64 / partition[1] as f64;
            let d = if j + 1 == partition[1] { mag_hi } else { mag_lo + (mag_hi - mag_lo) * (j + 1) as f64 / partition[1] as f64 };
            let worst_gap = if shortcut { bed.g0 - closing_bound } else { bed.worst_case_min_gap(a, b, d) };
            checks.push(BoxCheck { lo: vec![a, c], hi: vec![b, d], worst_gap, safe: worst_gap > 0.0 });
        }
    }
    let boxes: Vec<ParamBox> =
        checks.iter().filter(|c| c.safe).map(|c| ParamBox { lo: c.lo.clone(), hi: c.hi.clone() }).collect();
    let mut notes = vec!["leader extreme: earliest onset, largest magnitude; follower extreme: latest onset".to_string()];
    if shortcut {
        notes.push(format!("g0 {} exceeds the closing bound {closing_bound}: all boxes safe", bed.g0));
    }
    let record = VerificationRecord {
        method: VerificationMethod::IntervalBound,
        iterations: checks.len() as u64,
        unsafe_counts: Vec::new(),
        inside_count: boxes.len() as u64,
        total_count: checks.len() as u64,
        boxes: checks,
        exhaustive_scenarios: None,
        exhaustive_failures: None,
        notes,
    };
    let membership = if boxes.is_empty() { Membership::Empty } else { Membership::Boxes { boxes } };
    let dist = bed.true_distribution();
    let inside = dist.inside_mass(&membership).unwrap_or(0.0);
    Ok(SafeRegion { membership, certificate: record, outside_mass: OutsideMass::Exact { value: (1.0 - inside).max(0.0) } })
}

/// Half-space `{x_0 <= upper}` on the Gaussian bed; certified when it lies
/// below the failure threshold.
pub fn verify_region_halfspace(bed: &GaussianThresholdBed, upper: f64) -> Result<SafeRegion> {
    if upper.is_nan() || upper > bed.tau {
        return Err(Error::invalid(format!("half-space bound {upper} exceeds the failure threshold {}", bed.tau)));
    }
    let membership = if upper == f64::NEG_INFINITY {
        Membership::Empty
    } else {
        Membership::HalfSpace { coord: 0, upper }
    };
    let record = VerificationRecord {
        method: VerificationMethod::HalfSpaceContainment,
        iterations: 1,
        unsafe_counts: Vec::new(),
        boxes: Vec::new(),
        inside_count: u64::from(!membership.is_empty()),
        total_count: 1,
        exhaustive_scenarios: None,
        exhaustive_failures: None,
        notes: vec![format!("x0 <= {upper} <= tau = {} implies no failure", bed.tau)],
    };
    let dist = bed.true_distribution();
    let inside = dist.inside_mass(&membership).unwrap_or(0.0);
    Ok(SafeRegion { membership, certificate: record, outside_mass: OutsideMass::Exact { value: (1.0 - inside).max(0.0) } })
}
