//! Cost functional, Hamiltonian, exact backward dynamic programming on the
//! quantized noise tree, and checks of the value function's structural
//! properties.

mod dpp;
mod export;
mod glue;
mod probes;
mod table;

pub use dpp::{dpp_residual, dpp_sweep, DppRow};
pub use export::export_table;
pub use glue::{glued_policy_demo, GlueReport};
pub use probes::{lipschitz_bound, lipschitz_probe, lipschitz_sweep, supermartingale_gap, LipschitzReport};
pub use table::{solve_value, Entry, ValueTable};

use serde::{Deserialize, Serialize};

use crate::dynamics::{euler_step, integrate_state, ControlPolicy};
use crate::error::{check_cap, pow_sat, Error, Result};
use crate::path_space::GridPath;
use crate::scenario::{NoiseMode, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DPConfig {
    /// Largest number of table entries, tree leaves or enumerated policies.
    pub cap: u128,
    pub tolerance: f64,
}

impl Default for DPConfig {
    fn default() -> Self {
        DPConfig { cap: 1 << 22, tolerance: 1e-10 }
    }
}

/// `min_v β(t_i, x, v)·p + f(t_i, x, v)` over the control set.
pub fn hamiltonian(s: &Scenario, i: usize, x: &GridPath, w: &GridPath, p: &[f64]) -> Result<f64> {
    if p.len() != s.state_dim() {
        return Err(Error::Dimension { expected: s.state_dim(), got: p.len() });
    }
    let c = s.coefficients();
    let mut best = f64::INFINITY;
    for v in s.controls().points() {
        let b = c.drift(i, x, w, v);
        let h: f64 = b.iter().zip(p).map(|(a, q)| a * q).sum::<f64>() + c.running_cost(i, x, w, v);
        best = best.min(h);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

fn expected_cost(s: &Scenario, pol: &ControlPolicy, i: usize, w: &GridPath, x: &GridPath) -> Result<f64> {
    let c = s.coefficients();
    let n = s.grid().steps();
    if i == n {
        return Ok(c.terminal_cost(x, w));
    }
    let tree = s.tree();
    let u = pol.control(i, w, x);
    let run = c.running_cost(i, x, w, s.controls().point(u)) * s.grid().dt();
    let next = euler_step(s, i, x, w, u)?;
    let mut acc = 0.0;
    for b in 0..tree.branches() {
        acc += expected_cost(s, pol, i + 1, &w.advanced(&tree.increment(b))?, &next)?;
    }
    Ok(run + acc / tree.branches() as f64)
}

/// Realized cost `Σ f·dt + G` of one trajectory.
pub(crate) fn realized_cost(s: &Scenario, tr: &crate::dynamics::StateTrajectory) -> Result<f64> {
    let c = s.coefficients();
    let dt = s.grid().dt();
    let mut total = 0.0;
    for (k, &u) in tr.controls.iter().enumerate() {
        let i = tr.start + k;
        total += c.running_cost(i, &tr.path.truncate(i)?, &tr.noise.truncate(i)?, s.controls().point(u)) * dt;
    }
    Ok(total + c.terminal_cost(&tr.path, &tr.noise))
}

/// `E[Σ_{i≥r} f·dt + G | W_{t_r}]` from the prefix `xi` under `pol`. Quantized
/// noise expands the whole subtree below `noise_prefix`; Gaussian noise
/// averages `mc_samples` independent tails.
pub fn cost_functional(
    s: &Scenario,
    r: usize,
    xi: &GridPath,
    pol: &ControlPolicy,
    noise_prefix: &GridPath,
    cfg: &DPConfig,
) -> Result<CostEstimate> {
    if xi.anchor() != r || noise_prefix.anchor() != r {
        return Err(Error::InvalidParameter("prefixes must end at the start step".into()));
    }
    if noise_prefix.dim() != s.noise().dims {
        return Err(Error::Dimension { expected: s.noise().dims, got: noise_prefix.dim() });
    }
    match s.noise().mode {
        NoiseMode::QuantizedWalk => {
            let tree = s.tree();
            check_cap("cost functional leaves", pow_sat(tree.branches(), s.grid().steps() - r), cfg.cap)?;
            let mean = expected_cost(s, pol, r, noise_prefix, xi)?;
            Ok(CostEstimate { mean, std_error: 0.0, samples: 1 })
        }
        NoiseMode::GaussianMc => {
            let n = s.noise().mc_samples;
            if n == 0 {
                return Err(Error::InvalidParameter("mc_samples must be positive".into()));
            }
            check_cap("Monte Carlo samples", n as u128, cfg.cap)?;
            let mut costs = Vec::with_capacity(n);
            for k in 0..n {
                let w = s.noise().gaussian_path(noise_prefix, k as u64)?;
                let tr = integrate_state(s, pol, &w, r, xi)?;
                costs.push(realized_cost(s, &tr)?);
            }
            let mean = costs.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            Ok(CostEstimate { mean, std_error: (var / n as f64).sqrt(), samples: n })
        }
    }
}
