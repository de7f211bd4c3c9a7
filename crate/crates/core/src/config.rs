//! Experiment configuration: TOML files, named presets and validation.
//!
//! A config file may start from a preset with `preset = "<name>"`; its own
//! tables are then merged over the preset key by key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actuators::ActuatorSet;
use crate::control::{CompiledCost, ControlSequence, CostSpec};
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Field, Grid};
use crate::noise::NoiseModel;
use crate::sim::{DriftSpec, SimConfig};

pub const PRESETS: [(&str, &str); 3] = [
    ("heat_tracking", include_str!("../presets/heat_tracking.toml")),
    ("nagumo_accelerate", include_str!("../presets/nagumo_accelerate.toml")),
    ("nagumo_suppress", include_str!("../presets/nagumo_suppress.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub a: f64,
    pub b: f64,
    pub cells: usize,
    pub bc: BoundaryCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Defaults to `cells / 2`.
    pub modes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    Constant { value: f64 },
    /// `(1 + exp(−(front − x)/width))⁻¹`
    NagumoFront { front: f64, width: f64 },
}

impl InitialCondition {
    pub fn field(&self, grid: Grid) -> Field {
        let f = match *self {
            InitialCondition::Zero => Field::zeros(grid),
            InitialCondition::Constant { value } => Field::constant(grid, value),
            InitialCondition::NagumoFront { front, width } => {
                Field::from_fn(grid, |x| 1.0 / (1.0 + (-(front - x) / width).exp()))
            }
        };
        f.apply_bc()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorConfig {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub rho: f64,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub rollouts: usize,
    #[serde(default = "default_eval_rollouts")]
    pub eval_rollouts: usize,
}

fn default_eval_rollouts() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub total_steps: usize,
    /// Iterations of the open-loop plan used as the first warm start.
    /// Defaults to `optimize.iterations`.
    pub plan_iterations: Option<usize>,
    /// Iterations per replanning step. Defaults to `optimize.iterations`.
    pub inner_iterations: Option<usize>,
    /// Defaults to `optimize.rollouts`.
    pub rollouts: Option<usize>,
    pub plant_seed: Option<u64>,
    #[serde(default = "yes")]
    pub plant_noise: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "one")]
    pub rollouts: usize,
    #[serde(default)]
    pub deterministic: bool,
}

fn one() -> usize {
    1
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            rollouts: 1,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub rollouts: usize,
    /// Constant control applied to every actuator.
    pub amplitude: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            rollouts: 10_000,
            amplitude: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub grid: GridConfig,
    pub drift: DriftSpec,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub initial: InitialCondition,
    pub actuators: ActuatorConfig,
    pub cost: CostSpec,
    pub control: ControlConfig,
    pub optimize: OptimizeConfig,
    pub mpc: Option<MpcConfig>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn preset_value(name: &str) -> Result<toml::Value> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    toml::from_str(text).map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_value(preset_value(name)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = match value.as_table_mut().and_then(|t| t.remove("preset")) {
            None => None,
            Some(toml::Value::String(s)) => Some(s),
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
        };
        if let Some(name) = preset {
            let mut base = preset_value(&name)?;
            merge(&mut base, value);
            value = base;
        }
        Self::from_value(value)
    }

    fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| {
            let msg = e.to_string();
            match msg.split('`').nth(1) {
                Some(key) if msg.contains("unknown field") => Error::UnknownKey(key.to_string()),
                _ => Error::Config(msg.trim().to_string()),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or a preset when `source` names one.
    pub fn load(source: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == source) && !Path::new(source).exists() {
            return Self::preset(source);
        }
        let text = std::fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
        Self::from_toml_str(&text)
    }

    /// Builds every component once, surfacing parameter errors early.
    pub fn validate(&self) -> Result<()> {
        if self.optimize.iterations == 0 {
            return Err(Error::param("optimize.iterations", "must be at least 1"));
        }
        if self.optimize.rollouts < 2 {
            return Err(Error::param("optimize.rollouts", "must be at least 2"));
        }
        if self.simulate.rollouts == 0 {
            return Err(Error::param("simulate.rollouts", "must be at least 1"));
        }
        if let Some(m) = &self.mpc {
            if m.total_steps == 0 {
                return Err(Error::param("mpc.total_steps", "must be at least 1"));
            }
        }
        if !self.verify.amplitude.is_finite() {
            return Err(Error::param("verify.amplitude", "must be finite"));
        }
        Experiment::build(self).map(|_| ())
    }

    /// SHA-256 over a canonical JSON rendering, ignoring fields that do not
    /// change results (`out_dir`, `threads`).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out_dir");
            map.remove("threads");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mpc_or_default(&self) -> MpcConfig {
        self.mpc.clone().unwrap_or(MpcConfig {
            total_steps: self.control.steps,
            plan_iterations: None,
            inner_iterations: None,
            rollouts: None,
            plant_seed: None,
            plant_noise: true,
        })
    }
}

/// Components built from an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub grid: Grid,
    pub sim: SimConfig,
    pub actuators: ActuatorSet,
    pub cost: CompiledCost,
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let g = &cfg.grid;
        let grid = Grid::new(g.a, g.b, g.cells, g.bc)?;
        let modes = cfg.noise.modes.unwrap_or_else(|| NoiseModel::default_modes(&grid));
        let noise = NoiseModel::build_eigenbasis(grid, modes)?;
        let actuators = ActuatorSet::build(&cfg.actuators.centers, &cfg.actuators.widths, &noise)?;
        let c = &cfg.control;
        let sim = SimConfig::new(cfg.drift, noise, c.rho, c.dt, c.steps, cfg.initial.field(grid))?
            .deterministic(cfg.simulate.deterministic);
        let cost = cfg.cost.compile(&grid)?;
        Ok(Experiment {
            grid,
            sim,
            actuators,
            cost,
        })
    }

    pub fn zero_controls(&self) -> ControlSequence {
        ControlSequence::zeros(self.sim.steps(), self.actuators.len(), self.sim.dt())
    }
}
