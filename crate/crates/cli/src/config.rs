use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use ppscert_core::canonical::to_canonical_json;
use ppscert_core::estimators::{BinomialBound, EstimatorConfig, GevFitter};
use ppscert_core::gap::{GapMethod, HistogramConfig};
use ppscert_core::testbeds::{CarFollowingBed, GaussianThresholdBed, GridWorldBed, Knob, Policy, ProposalFamily};
use ppscert_core::Method;

use crate::Failure;

/// One run: testbed, dynamics, estimator and optional region, gap and sweep
/// blocks. Unknown keys are rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub testbed: TestbedConfig,
    /// Perturbation of the practically used dynamics away from truth.
    #[serde(default)]
    pub surrogate: Knob,
    #[serde(default)]
    pub estimator: EstimatorBlock,
    #[serde(default)]
    pub region: RegionBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

fn default_confidence() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum TestbedConfig {
    GaussianThreshold(GaussianConfig),
    CarFollowing(CarConfig),
    GridWorld(GridConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub tau: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarConfig {
    pub horizon_steps: usize,
    pub dt: f64,
    pub v_follower: f64,
    pub v_leader: f64,
    pub g0: f64,
    pub reaction_delay: usize,
    pub follower_decel: f64,
    pub onset_range: [f64; 2],
    pub mag_max: f64,
    pub mag_shape: [f64; 2],
}

impl Default for CarConfig {
    fn default() -> Self {
        let b = CarFollowingBed::default();
        CarConfig {
            horizon_steps: b.horizon_steps,
            dt: b.dt,
            v_follower: b.v_follower,
            v_leader: b.v_leader,
            g0: b.g0,
            reaction_delay: b.reaction_delay,
            follower_decel: b.follower_decel,
            onset_range: [b.onset_range.0, b.onset_range.1],
            mag_max: b.mag_max,
            mag_shape: [b.mag_shape.0, b.mag_shape.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub size: usize,
    #[serde(default)]
    pub hazards: Vec<[usize; 2]>,
    pub slip: f64,
    pub horizon: usize,
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorBlock {
    pub method: Method,
    pub n: usize,
    pub bound: BinomialBound,
    pub rho: f64,
    pub max_levels: usize,
    pub step: f64,
    pub split_factor: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_levels: Option<Vec<f64>>,
    pub block_size: usize,
    pub epsilon: f64,
    pub gev_fitter: GevFitter,
    /// Importance-sampling proposal, relative to the estimation law.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalFamily>,
}

impl Default for EstimatorBlock {
    fn default() -> Self {
        let d = EstimatorConfig::default();
        EstimatorBlock {
            method: Method::Cmc,
            n: d.n,
            bound: d.bound,
            rho: d.rho,
            max_levels: d.max_levels,
            step: d.step,
            split_factor: d.split_factor,
            split_levels: d.split_levels,
            block_size: d.block_size,
            epsilon: d.epsilon,
            gev_fitter: d.gev_fitter,
            proposal: None,
        }
    }
}

impl EstimatorBlock {
    pub fn to_config(&self, confidence: f64, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            n: self.n,
            confidence,
            seed,
            bound: self.bound,
            rho: self.rho,
            max_levels: self.max_levels,
            step: self.step,
            split_factor: self.split_factor,
            split_levels: self.split_levels.clone(),
            block_size: self.block_size,
            epsilon: self.epsilon,
            gev_fitter: self.gev_fitter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionBlock {
    #[default]
    None,
    /// Grid bed: backward reachability over all slip outcomes.
    GridReachability,
    /// Car bed: interval worst-case check on a box partition.
    Interval { partition: [usize; 2] },
    /// Gaussian bed: `{x_0 <= upper}`.
    HalfSpace { upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapBlock {
    pub method: GapMethod,
    /// Samples for the sampled methods.
    #[serde(default = "default_gap_n")]
    pub n: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
}

fn default_gap_n() -> usize {
    100_000
}

fn default_bins() -> usize {
    64
}

impl GapBlock {
    pub fn histogram(&self) -> HistogramConfig {
        HistogramConfig { bins: self.bins, dims: self.dims.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Dotted path of a numeric config field, e.g. `estimator.n`.
    pub axis: String,
    pub values: Vec<f64>,
}

pub enum Bed {
    Gaussian(GaussianThresholdBed),
    Car(CarFollowingBed),
    Grid(GridWorldBed),
}

impl TestbedConfig {
    pub fn build(&self) -> Result<Bed, Failure> {
        let bed = match self {
            TestbedConfig::GaussianThreshold(g) => Bed::Gaussian(GaussianThresholdBed::new(g.dim, g.tau).map_err(Failure::config)?),
            TestbedConfig::CarFollowing(c) => {
                let bed = CarFollowingBed {
                    horizon_steps: c.horizon_steps,
                    dt: c.dt,
                    v_follower: c.v_follower,
                    v_leader: c.v_leader,
                    g0: c.g0,
                    reaction_delay: c.reaction_delay,
                    follower_decel: c.follower_decel,
                    onset_range: (c.onset_range[0], c.onset_range[1]),
                    mag_max: c.mag_max,
                    mag_shape: (c.mag_shape[0], c.mag_shape[1]),
                };
                bed.validate().map_err(Failure::config)?;
                Bed::Car(bed)
            }
            TestbedConfig::GridWorld(g) => {
                let bed = GridWorldBed::new(g.size, &g.hazards, g.slip, g.horizon, g.policy.clone()).map_err(Failure::config)?;
                Bed::Grid(match &g.start_weights {
                    Some(w) => bed.with_start_weights(w.clone()).map_err(Failure::config)?,
                    None => bed,
                })
            }
        };
        Ok(bed)
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Failure::Config(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if let Some(theta) = self.theta {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Failure::Config(format!("theta {theta} outside (0, 1]")));
            }
        }
        self.estimator.to_config(self.confidence, self.seed).validate().map_err(Failure::config)?;
        let is = self.estimator.method == Method::ImportanceSampling;
        if is != self.estimator.proposal.is_some() {
            return Err(Failure::Config("estimator.proposal is required for IS and only applies to IS".into()));
        }
        Ok(())
    }

    /// The config as embedded in reports: canonical, without the output
    /// directory, so reports do not depend on where they are written.
    pub fn embedded(&self) -> RunConfig {
        RunConfig { output_dir: None, ..self.clone() }
    }

    /// SHA-256 of the canonical embedded config, hex encoded.
    pub fn digest(&self) -> Result<String, Failure> {
        let text = to_canonical_json(&self.embedded()).map_err(Failure::config)?;
        let hash = Sha256::digest(text.as_bytes());
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Copy with the numeric field at a dotted path replaced.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<RunConfig, Failure> {
        let mut tree = serde_json::to_value(self.embedded()).map_err(|e| Failure::Config(e.to_string()))?;
        let mut slot = &mut tree;
        for key in axis.split('.') {
            slot = slot
                .get_mut(key)
                .ok_or_else(|| Failure::Config(format!("sweep axis {axis}: no field {key}")))?;
        }
        let Value::Number(current) = slot else {
            return Err(Failure::Config(format!("sweep axis {axis} is not a numeric field")));
        };
        *slot = if current.is_f64() {
            Value::from(value)
        } else if value >= 0.0 && value.fract() == 0.0 && value <= u64::MAX as f64 {
            Value::from(value as u64)
        } else {
            return Err(Failure::Config(format!("sweep axis {axis} needs whole nonnegative values, got {value}")));
        };
        let mut cfg: RunConfig =
            serde_json::from_value(tree).map_err(|e| Failure::Config(format!("sweep axis {axis}: {e}")))?;
        cfg.output_dir = self.output_dir.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}
