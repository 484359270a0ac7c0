use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{check_range, Knob, OracleMethod, ProposalFamily, Testbed, Truth};
use crate::error::{Error, Result};
use crate::gap::FiniteScenarioSpace;
use crate::numeric::{exact_sum, CompensatedSum};
use crate::region::{Membership, RegionMass};
use crate::risk::{DynamicsLabel, OutcomeFn, ScenarioDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Up,
    Right,
    Down,
    Left,
    Stay,
}

/// Slip directions in action-code order 1..=4.
pub(crate) const SLIPS: [Move; 4] = [Move::Up, Move::Right, Move::Down, Move::Left];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    /// Close the column offset first, then the row offset; stay at the goal.
    TowardGoal { goal: [usize; 2] },
    /// One move per cell, row-major.
    Table { moves: Vec<Move> },
}

/// `N x N` grid with slippery moves.
///
/// Each step the agent takes the policy's move with probability
/// `1 - slip`, otherwise one of the four directions uniformly. Moves off
/// the grid leave the agent in place. Failure: the agent occupies a hazard
/// cell at any time `0..=horizon` (starting on a hazard fails at time 0).
///
/// Scenario params: `[start, a_1, .., a_H]` where `start` is the row-major
/// cell index and `a_t` is 0 for the intended move or 1..=4 for a slip
/// Up/Right/Down/Left. All values are whole numbers stored as `f64`.
///
/// Knobs: `system` shifts `slip` (|shift| <= 0.2, result in [0, 1));
/// `environment` tilts the start distribution by `exp(env * col / (N - 1))`
/// (|env| <= 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldBed {
    pub size: usize,
    pub hazards: Vec<bool>,
    pub slip: f64,
    pub horizon: usize,
    pub policy: Policy,
    /// Unnormalised start weights; `None` is uniform over non-hazard cells.
    pub start_weights: Option<Vec<f64>>,
}

impl GridWorldBed {
    pub fn new(size: usize, hazard_cells: &[[usize; 2]], slip: f64, horizon: usize, policy: Policy) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("grid size must be >= 1"));
        }
        let mut hazards = vec![false; size * size];
        for &[r, c] in hazard_cells {
            if r >= size || c >= size {
                return Err(Error::invalid(format!("hazard ({r}, {c}) outside the {size}x{size} grid")));
            }
            hazards[r * size + c] = true;
        }
        let bed = GridWorldBed { size, hazards, slip, horizon, policy, start_weights: None };
        bed.validate()?;
        Ok(bed)
    }

    pub fn with_start_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.start_weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.size * self.size;
        if !(self.slip.is_finite() && (0.0..1.0).contains(&self.slip)) {
            return Err(Error::invalid(format!("slip {} outside [0, 1)", self.slip)));
        }
        if let Policy::Table { moves } = &self.policy {
            if moves.len() != cells {
                return Err(Error::invalid(format!("policy table has {} moves, grid has {cells} cells", moves.len())));
            }
        }
        if let Policy::TowardGoal { goal } = &self.policy {
            if goal[0] >= self.size || goal[1] >= self.size {
                return Err(Error::invalid("policy goal outside the grid"));
            }
        }
        if let Some(w) = &self.start_weights {
            if w.len() != cells {
                return Err(Error::invalid(format!("start weights have {} entries, grid has {cells} cells", w.len())));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || exact_sum(w.iter().copied()) <= 0.0 {
                return Err(Error::invalid("start weights must be finite, nonnegative and not all zero"));
            }
        } else if self.hazards.iter().all(|&h| h) {
            return Err(Error::invalid("every cell is a hazard; give explicit start weights"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    pub fn is_hazard(&self, cell: usize) -> bool {
        self.hazards[cell]
    }

    pub fn hazard_free(&self) -> bool {
        !self.hazards.iter().any(|&h| h)
    }

    pub fn step(&self, cell: usize, mv: Move) -> usize {
        let (r, c) = (cell / self.size, cell % self.size);
        let n = self.size;
        match mv {
            Move::Up if r > 0 => cell - n,
            Move::Down if r + 1 < n => cell + n,
            Move::Left if c > 0 => cell - 1,
            Move::Right if c + 1 < n => cell + 1,
            _ => cell,
        }
    }

    pub fn policy_move(&self, cell: usize) -> Move {
        match &self.policy {
            Policy::Table { moves } => moves[cell],
            Policy::TowardGoal { goal } => {
                let (r, c) = (cell / self.size, cell % self.size);
                if c < goal[1] {
                    Move::Right
                } else if c > goal[1] {
                    Move::Left
                } else if r < goal[0] {
                    Move::Down
                } else if r > goal[0] {
                    Move::Up
                } else {
                    Move::Stay
                }
            }
        }
    }

    /// Distinct successor cells reachable in one step from `cell`.
    pub fn successors(&self, cell: usize) -> Vec<usize> {
        let mut out = vec![self.step(cell, self.policy_move(cell))];
        if self.slip > 0.0 {
            for mv in SLIPS {
                out.push(self.step(cell, mv));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Replays a scenario; `None` if the action codes are malformed.
    pub fn trajectory_fails(&self, params: &[f64]) -> Option<bool> {
        let mut cell = decode(params.first()?.to_owned(), self.cells())?;
        if self.hazards[cell] {
            return Some(true);
        }
        for &a in params.get(1..)? {
            let mv = match decode(a, 5)? {
                0 => self.policy_move(cell),
                k => SLIPS[k - 1],
            };
            cell = self.step(cell, mv);
            if self.hazards[cell] {
                return Some(true);
            }
        }
        Some(false)
    }

    /// Normalised start law after the environment tilt.
    fn start_law(&self, tilt: f64) -> Vec<f64> {
        let n = self.size;
        let base: Vec<f64> = match &self.start_weights {
            Some(w) => w.clone(),
            None => self.hazards.iter().map(|&h| if h { 0.0 } else { 1.0 }).collect(),
        };
        let span = (n.max(2) - 1) as f64;
        let tilted: Vec<f64> =
            base.iter().enumerate().map(|(i, w)| w * (tilt * (i % n) as f64 / span).exp()).collect();
        let total = exact_sum(tilted.iter().copied());
        tilted.into_iter().map(|w| w / total).collect()
    }

    /// Failure probability within the horizon from each start cell, by
    /// backward propagation of the hitting probability.
    pub fn failure_from_each_start(&self, slip: f64) -> Vec<f64> {
        let cells = self.cells();
        let mut hit: Vec<f64> = (0..cells).map(|c| if self.hazards[c] { 1.0 } else { 0.0 }).collect();
        for _ in 0..self.horizon {
            let next: Vec<f64> = (0..cells)
                .map(|c| {
                    if self.hazards[c] {
                        return 1.0;
                    }
                    let mut acc = CompensatedSum::new();
                    acc.add((1.0 - slip) * hit[self.step(c, self.policy_move(c))]);
                    for mv in SLIPS {
                        acc.add(0.25 * slip * hit[self.step(c, mv)]);
                    }
                    acc.value()
                })
                .collect();
            hit = next;
        }
        hit
    }

    /// Forward propagation of `start` with hazards absorbing.
    fn propagate(&self, start: &[f64], slip: f64) -> f64 {
        let cells = self.cells();
        let mut absorbed = CompensatedSum::new();
        let mut mass = vec![0.0; cells];
        for (c, &m) in start.iter().enumerate() {
            if self.hazards[c] {
                absorbed.add(m);
            } else {
                mass[c] = m;
            }
        }
        for _ in 0..self.horizon {
            let mut next = vec![CompensatedSum::new(); cells];
            for (c, &m) in mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                next[self.step(c, self.policy_move(c))].add(m * (1.0 - slip));
                if slip > 0.0 {
                    for mv in SLIPS {
                        next[self.step(c, mv)].add(m * slip * 0.25);
                    }
                }
            }
            for (c, acc) in next.into_iter().enumerate() {
                let v = acc.value();
                if self.hazards[c] {
                    absorbed.add(v);
                    mass[c] = 0.0;
                } else {
                    mass[c] = v;
                }
            }
        }
        absorbed.value()
    }
}

fn decode(x: f64, limit: usize) -> Option<usize> {
    if x >= 0.0 && x.fract() == 0.0 && (x as usize) < limit {
        Some(x as usize)
    } else {
        None
    }
}

impl OutcomeFn for GridWorldBed {
    fn is_failure(&self, params: &[f64]) -> bool {
        self.trajectory_fails(params).unwrap_or(false)
    }
}

/// Law of `[start, a_1..a_H]`: independent start draw and i.i.d. actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDist {
    pub horizon: usize,
    pub slip: f64,
    /// Normalised start probabilities per cell.
    pub start: Vec<f64>,
    pub label: DynamicsLabel,
    cdf: Vec<f64>,
}

impl GridDist {
    pub fn new(start: Vec<f64>, slip: f64, horizon: usize, label: DynamicsLabel) -> Self {
        let mut acc = 0.0;
        let cdf = start
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        GridDist { horizon, slip, start, label, cdf }
    }

    /// Same dynamics with the start law restricted to cells outside `keep_out`
    /// and renormalised, plus the mass outside.
    pub fn restricted(&self, inside: &[bool]) -> (GridDist, f64) {
        let out: Vec<f64> = self.start.iter().zip(inside).map(|(&p, &i)| if i { 0.0 } else { p }).collect();
        let mass = exact_sum(out.iter().copied());
        let normed = if mass > 0.0 { out.iter().map(|p| p / mass).collect() } else { out };
        (GridDist::new(normed, self.slip, self.horizon, self.label), mass)
    }
}

impl ScenarioDistribution for GridDist {
    fn dim(&self) -> usize {
        1 + self.horizon
    }

    fn label(&self) -> DynamicsLabel {
        self.label
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        let total = *self.cdf.last().unwrap_or(&1.0);
        let target = u * total;
        // The first cell whose cdf exceeds the target always has positive
        // mass; rounding at the top falls back to the last such cell.
        let mut start = self.cdf.partition_point(|&c| c <= target);
        if start >= self.start.len() {
            start = self.start.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        }
        let mut x = Vec::with_capacity(1 + self.horizon);
        x.push(start as f64);
        for _ in 0..self.horizon {
            let u: f64 = rng.random();
            let a = if u < self.slip { 1 + ((u / self.slip * 4.0) as usize).min(3) } else { 0 };
            x.push(a as f64);
        }
        x
    }

    fn log_density(&self, params: &[f64]) -> Option<f64> {
        if params.len() != 1 + self.horizon {
            return Some(f64::NEG_INFINITY);
        }
        let Some(start) = decode(params[0], self.start.len()) else {
            return Some(f64::NEG_INFINITY);
        };
        let mut terms = vec![self.start[start].ln()];
        for &a in &params[1..] {
            match decode(a, 5) {
                Some(0) => terms.push((1.0 - self.slip).ln()),
                Some(_) => terms.push((0.25 * self.slip).ln()),
                None => return Some(f64::NEG_INFINITY),
            }
        }
        if terms.iter().any(|t| *t == f64::NEG_INFINITY) {
            return Some(f64::NEG_INFINITY);
        }
        Some(exact_sum(terms))
    }

    fn is_discrete(&self) -> bool {
        true
    }
}

impl FiniteScenarioSpace for GridDist {
    fn support_size(&self) -> Option<u128> {
        (self.start.len() as u128).checked_mul(5u128.checked_pow(self.horizon as u32)?)
    }

    fn for_each_point(&self, visit: &mut dyn FnMut(&[f64])) {
        let mut x = vec![0.0; 1 + self.horizon];
        for s in 0..self.start.len() {
            x[0] = s as f64;
            for v in x[1..].iter_mut() {
                *v = 0.0;
            }
            loop {
                visit(&x);
                // Odometer increment over the action codes.
                let mut i = self.horizon;
                loop {
                    if i == 0 {
                        break;
                    }
                    if x[i] < 4.0 {
                        x[i] += 1.0;
                        break;
                    }
                    x[i] = 0.0;
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
            }
        }
    }
}

impl RegionMass for GridDist {
    fn inside_mass(&self, region: &Membership) -> Option<f64> {
        match region {
            Membership::Empty => Some(0.0),
            Membership::GridCells { cells } => {
                Some(exact_sum(cells.iter().filter_map(|&c| self.start.get(c).copied())))
            }
            _ => None,
        }
    }

    fn conditioned_outside(&self, region: &Membership) -> Option<(Self, f64)> {
        match region {
            Membership::Empty => Some((self.clone(), 1.0)),
            Membership::GridCells { cells } => {
                let mut inside = vec![false; self.start.len()];
                for &c in cells {
                    if c < inside.len() {
                        inside[c] = true;
                    }
                }
                Some(self.restricted(&inside))
            }
            _ => None,
        }
    }
}

impl Testbed for GridWorldBed {
    type Dist = GridDist;

    fn id(&self) -> &'static str {
        "grid_world"
    }

    fn dim(&self) -> usize {
        1 + self.horizon
    }

    fn distribution(&self, knob: Knob, label: DynamicsLabel) -> Result<GridDist> {
        self.validate()?;
        check_range("slip shift", knob.system, -0.2, 0.2)?;
        check_range("start tilt", knob.environment, -1.0, 1.0)?;
        let slip = self.slip + knob.system;
        if !(0.0..1.0).contains(&slip) {
            return Err(Error::invalid(format!("shifted slip {slip} outside [0, 1)")));
        }
        Ok(GridDist::new(self.start_law(knob.environment), slip, self.horizon, label))
    }

    /// Proposals inflate the slip probability by `scale`, capped at 0.5.
    fn proposal(&self, base: &GridDist, family: ProposalFamily) -> Result<GridDist> {
        if family.shift != 0.0 {
            return Err(Error::invalid("grid proposals support a slip scale only (shift must be 0)"));
        }
        if !(family.scale > 0.0 && family.scale.is_finite()) {
            return Err(Error::invalid("grid proposal scale must be positive"));
        }
        let slip = base.slip * family.scale;
        if slip > 0.5 {
            return Err(Error::invalid(format!("proposal slip {slip} above 0.5")));
        }
        Ok(GridDist::new(base.start.clone(), slip, base.horizon, DynamicsLabel::Proposal))
    }

    fn truth(&self, dist: &GridDist) -> Result<Truth> {
        if dist.start.len() != self.cells() || dist.horizon != self.horizon {
            return Err(Error::invalid("distribution does not match the grid"));
        }
        let value = self.propagate(&dist.start, dist.slip);
        Ok(Truth { value, abs_error: 1e-15_f64.max(value * 1e-12), method: OracleMethod::ChainPropagation })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stream_rng;

    fn five_by_five(slip: f64) -> GridWorldBed {
        GridWorldBed::new(5, &[[2, 2]], slip, 6, Policy::TowardGoal { goal: [4, 4] }).unwrap()
    }

    #[test]
    fn hazard_free_grid_has_zero_risk() {
        let bed = GridWorldBed::new(4, &[], 0.3, 5, Policy::TowardGoal { goal: [0, 0] }).unwrap();
        assert_eq!(bed.truth(&bed.true_distribution()).unwrap().value, 0.0);
    }

    #[test]
    fn forward_and_backward_propagation_agree() {
        let bed = five_by_five(0.1);
        let dist = bed.true_distribution();
        let forward = bed.truth(&dist).unwrap().value;
        let per_start = bed.failure_from_each_start(0.1);
        let backward = exact_sum(dist.start.iter().zip(&per_start).map(|(p, h)| p * h));
        assert!((forward - backward).abs() < 1e-14, "{forward} vs {backward}");
        assert!(forward > 0.0 && forward < 1.0);
    }

    #[test]
    fn enumeration_agrees_with_chain() {
        let bed = five_by_five(0.1);
        let dist = bed.true_distribution();
        let mut acc = CompensatedSum::new();
        let mut total = CompensatedSum::new();
        dist.for_each_point(&mut |x| {
            let p = dist.density(x).unwrap();
            total.add(p);
            if bed.is_failure(x) {
                acc.add(p);
            }
        });
        assert!((total.value() - 1.0).abs() < 1e-12);
        let chain = bed.truth(&dist).unwrap().value;
        assert!((acc.value() - chain).abs() < 1e-13);
    }

    #[test]
    fn slip_change_moves_the_truth() {
        let bed = five_by_five(0.1);
        let sur = crate::testbeds::surrogate(&bed, Knob { system: 0.02, environment: 0.0 }).unwrap();
        assert!((sur.slip - 0.12).abs() < 1e-15);
        let a = bed.truth(&bed.true_distribution()).unwrap().value;
        let b = bed.truth(&sur).unwrap().value;
        assert_ne!(a, b);
    }

    #[test]
    fn sampler_matches_mass_function() {
        let bed = GridWorldBed::new(3, &[[1, 1]], 0.4, 1, Policy::TowardGoal { goal: [2, 2] }).unwrap();
        let dist = bed.distribution(Knob { system: 0.0, environment: 0.7 }, DynamicsLabel::Surrogate).unwrap();
        let n = 400_000;
        let mut counts = std::collections::HashMap::new();
        let mut rng = stream_rng(9, 0);
        for _ in 0..n {
            let x = dist.sample(&mut rng);
            *counts.entry((x[0] as usize, x[1] as usize)).or_insert(0u64) += 1;
        }
        dist.for_each_point(&mut |x| {
            let p = dist.density(x).unwrap();
            let c = *counts.get(&(x[0] as usize, x[1] as usize)).unwrap_or(&0) as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!((c - n as f64 * p).abs() < 5.0 * sd, "{x:?}: {c} vs {}", n as f64 * p);
        });
    }

    #[test]
    fn off_grid_moves_stay_put() {
        let bed = five_by_five(0.0);
        assert_eq!(bed.step(0, Move::Up), 0);
        assert_eq!(bed.step(0, Move::Left), 0);
        assert_eq!(bed.step(24, Move::Down), 24);
        assert_eq!(bed.step(24, Move::Right), 24);
    }

    #[test]
    fn starting_on_a_hazard_fails() {
        let bed = five_by_five(0.1);
        assert!(bed.is_failure(&[12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn out_of_range_knobs_rejected() {
        let bed = five_by_five(0.1);
        assert!(bed.distribution(Knob { system: 0.25, environment: 0.0 }, DynamicsLabel::Surrogate).is_err());
        assert!(bed.distribution(Knob { system: -0.15, environment: 0.0 }, DynamicsLabel::Surrogate).is_err());
        assert!(bed.distribution(Knob { system: 0.0, environment: 1.5 }, DynamicsLabel::Surrogate).is_err());
    }

    #[test]
    fn conditioning_keeps_outside_starts_only() {
        let bed = five_by_five(0.1);
        let dist = bed.true_distribution();
        let region = Membership::GridCells { cells: (0..10).collect() };
        let (cond, mass) = dist.conditioned_outside(&region).unwrap();
        assert!((mass - (1.0 - dist.inside_mass(&region).unwrap())).abs() < 1e-15);
        assert!(cond.start[..10].iter().all(|&p| p == 0.0));
        assert!((exact_sum(cond.start.iter().copied()) - 1.0).abs() < 1e-15);
    }
}
