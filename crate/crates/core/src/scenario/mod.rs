//! Control sets, the noise model, coefficient functionals `(β, f, G)` and the
//! scenario that bundles them with an initial path.

pub mod builtin;
mod coefficients;
mod config;
mod habit;
mod noise;
mod shift;
mod validate;

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use coefficients::{Coefficients, DriftFn, FnCoefficients, RunningFn, TerminalFn};
pub use config::{coefficients_from_config, CoefficientConfig, GridConfig, NoiseConfig, ScenarioConfig};
pub use habit::habit_living_standard;
pub use noise::NoiseTree;
pub use shift::{eta_constant, eta_scaled_noise, shift_by_eta, EtaFn, Shifted};
pub use validate::{validate_coefficients, ValidationReport};

use crate::error::{Error, Result};
use crate::path_space::{GridPath, TimeGrid};
use crate::rng::stream;

/// Finite control set `U_h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.len(),
            None => return Err(Error::InvalidParameter("control set is empty".into())),
        };
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Dimension { expected: dim, got: p.len() });
            }
            if points[..i].contains(p) {
                return Err(Error::InvalidParameter(format!("duplicate control {p:?}")));
            }
        }
        Ok(ControlSet { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    QuantizedWalk,
    GaussianMc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    pub dims: usize,
    pub grid: TimeGrid,
    pub mc_samples: usize,
    pub seed: u64,
}

impl NoiseModel {
    pub fn quantized(grid: TimeGrid, dims: usize) -> Self {
        NoiseModel { mode: NoiseMode::QuantizedWalk, dims, grid, mc_samples: 0, seed: 0 }
    }

    pub fn gaussian(grid: TimeGrid, dims: usize, mc_samples: usize, seed: u64) -> Self {
        NoiseModel { mode: NoiseMode::GaussianMc, dims, grid, mc_samples, seed }
    }

    /// Extends `prefix` to the horizon with i.i.d. `N(0, dt)` increments drawn
    /// from stream `index`.
    pub fn gaussian_path(&self, prefix: &GridPath, index: u64) -> Result<GridPath> {
        if prefix.dim() != self.dims {
            return Err(Error::Dimension { expected: self.dims, got: prefix.dim() });
        }
        let mut rng = stream(self.seed, "gaussian_noise", index);
        let sd = self.grid.dt().sqrt();
        let mut w = prefix.clone();
        for _ in prefix.anchor()..self.grid.steps() {
            let inc: Vec<f64> = (0..self.dims)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect();
            w = w.advanced(&inc)?;
        }
        Ok(w)
    }
}

/// Grid, controls, noise, coefficients and the initial prefix `x_r`.
#[derive(Clone)]
pub struct Scenario {
    grid: TimeGrid,
    controls: ControlSet,
    noise: NoiseModel,
    coeffs: Arc<dyn Coefficients>,
    initial: GridPath,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("grid", &self.grid)
            .field("controls", &self.controls)
            .field("noise", &self.noise)
            .field("coefficients", &self.coeffs.name())
            .field("initial", &self.initial)
            .finish()
    }
}

impl Scenario {
    pub fn new(
        grid: TimeGrid,
        controls: ControlSet,
        noise: NoiseModel,
        coeffs: Arc<dyn Coefficients>,
        initial: GridPath,
    ) -> Result<Self> {
        if noise.grid != grid || initial.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if initial.dim() != coeffs.state_dim() {
            return Err(Error::Dimension { expected: coeffs.state_dim(), got: initial.dim() });
        }
        if noise.dims < coeffs.noise_dim() {
            return Err(Error::Dimension { expected: coeffs.noise_dim(), got: noise.dims });
        }
        if let Some(cd) = coeffs.control_dim() {
            if cd != controls.dim() {
                return Err(Error::Dimension { expected: cd, got: controls.dim() });
            }
        }
        if noise.dims > 16 {
            return Err(Error::InvalidParameter("at most 16 noise components".into()));
        }
        Ok(Scenario { grid, controls, noise, coeffs, initial })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.coeffs
    }

    pub fn initial(&self) -> &GridPath {
        &self.initial
    }

    pub fn state_dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn tree(&self) -> NoiseTree {
        NoiseTree::new(self.grid, self.noise.dims).expect("noise dimension checked at construction")
    }

    /// `max(bound, Lipschitz constant)`, the single constant `L` used by the
    /// a-priori estimates.
    pub fn constant_l(&self) -> f64 {
        self.coeffs.bound().max(self.coeffs.lipschitz())
    }

    pub fn with_controls(&self, controls: ControlSet) -> Result<Self> {
        Scenario::new(self.grid, controls, self.noise.clone(), self.coeffs.clone(), self.initial.clone())
    }

    pub fn with_initial(&self, initial: GridPath) -> Result<Self> {
        Scenario::new(self.grid, self.controls.clone(), self.noise.clone(), self.coeffs.clone(), initial)
    }

    pub fn with_coefficients(&self, coeffs: Arc<dyn Coefficients>) -> Result<Self> {
        Scenario::new(self.grid, self.controls.clone(), self.noise.clone(), coeffs, self.initial.clone())
    }

    /// Same scenario with `extra` independent noise components appended; the
    /// coefficients keep reading the original ones.
    pub fn with_extra_noise(&self, extra: usize) -> Result<Self> {
        let mut noise = self.noise.clone();
        noise.dims += extra;
        Scenario::new(self.grid, self.controls.clone(), noise, self.coeffs.clone(), self.initial.clone())
    }

    /// Same data on another grid; the initial prefix must be the single point `x(0)`.
    pub fn with_grid(&self, grid: TimeGrid) -> Result<Self> {
        if self.initial.anchor() != 0 {
            return Err(Error::InvalidParameter("regridding needs an initial prefix of one node".into()));
        }
        let mut noise = self.noise.clone();
        noise.grid = grid;
        let initial = GridPath::from_rows(grid, &[self.initial.terminal()])?;
        Scenario::new(grid, self.controls.clone(), noise, self.coeffs.clone(), initial)
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.build()
    }
}
