use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::builtin::{DriftableAbs, Habit, HabitParams, RandomCylinder, RunningMax};
use super::shift::{eta_constant, eta_scaled_noise, Shifted};
use super::{Coefficients, ControlSet, NoiseMode, NoiseModel, Scenario};
use crate::error::{Error, Result};
use crate::path_space::{GridPath, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mc_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientConfig {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    pub controls: Vec<Vec<f64>>,
    pub noise: NoiseConfig,
    pub coefficients: CoefficientConfig,
    pub initial: Vec<Vec<f64>>,
}

fn params<T: DeserializeOwned + Default>(v: &Value) -> Result<T> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| Error::InvalidParameter(e.to_string()))
}

#[derive(Deserialize)]
#[serde(default)]
struct BoundParams {
    bound: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        BoundParams { bound: 1.0 }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct RunningMaxParams {
    kappa: f64,
    weight: f64,
    bound: f64,
}

impl Default for RunningMaxParams {
    fn default() -> Self {
        RunningMaxParams { kappa: 1.0, weight: 0.5, bound: 1.0 }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct CylinderParams {
    seed: u64,
    bound: f64,
    m: Option<usize>,
}

impl Default for CylinderParams {
    fn default() -> Self {
        CylinderParams { seed: 0, bound: 1.0, m: None }
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EtaConfig {
    Constant { value: Vec<f64> },
    ScaledNoise { scale: Vec<f64> },
}

#[derive(Deserialize)]
struct ShiftedParams {
    inner: CoefficientConfig,
    eta: EtaConfig,
}

/// Resolves a registered coefficient name. `noise_dims` is the model's `m`,
/// used as the default noise dimension for `random_cylinder`.
pub fn coefficients_from_config(cfg: &CoefficientConfig, noise_dims: usize) -> Result<Arc<dyn Coefficients>> {
    let p = &cfg.params;
    Ok(match cfg.name.as_str() {
        "driftable_abs" => Arc::new(DriftableAbs::new(params::<BoundParams>(p)?.bound)),
        "running_max" => {
            let q: RunningMaxParams = params(p)?;
            Arc::new(RunningMax::new(q.kappa, q.weight, q.bound))
        }
        "habit" => Arc::new(Habit::new(params::<HabitParams>(p)?)),
        "random_cylinder" => {
            let q: CylinderParams = params(p)?;
            Arc::new(RandomCylinder::generate(q.seed, q.bound, q.m.unwrap_or(noise_dims)))
        }
        "shifted" => {
            let q: ShiftedParams =
                serde_json::from_value(p.clone()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let inner = coefficients_from_config(&q.inner, noise_dims)?;
            let eta = match q.eta {
                EtaConfig::Constant { value } => eta_constant(value),
                EtaConfig::ScaledNoise { scale } => eta_scaled_noise(scale),
            };
            Arc::new(Shifted::new(inner, eta))
        }
        other => return Err(Error::UnknownName(other.to_string())),
    })
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario> {
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps)?;
        let controls = ControlSet::new(self.controls.clone())?;
        let noise = match self.noise.mode {
            NoiseMode::QuantizedWalk => NoiseModel::quantized(grid, self.noise.m),
            NoiseMode::GaussianMc => {
                let n = self.noise.mc_samples.ok_or_else(|| {
                    Error::InvalidParameter("gaussian_mc noise needs mc_samples".into())
                })?;
                NoiseModel::gaussian(grid, self.noise.m, n, self.noise.seed)
            }
        };
        let coeffs = coefficients_from_config(&self.coefficients, self.noise.m)?;
        let initial = GridPath::from_rows(grid, &self.initial)?;
        Scenario::new(grid, controls, noise, coeffs, initial)
    }
}
