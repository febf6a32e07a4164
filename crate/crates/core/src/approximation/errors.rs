use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CylinderCoefficientSet;
use crate::error::{check_cap, pow_sat, Result};
use crate::path_space::{enumerate_class_lattice, euclid, GridPath, PathClassSpec};
use crate::scenario::{Coefficients, Scenario};

/// Sup-errors of the cylinder coefficients over the class lattice and the
/// control set, per step and noise node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxErrorReport {
    pub k: f64,
    pub levels: usize,
    /// `β_k^ε(t_i)` indexed `[step][node]`.
    pub drift: Vec<Vec<f64>>,
    /// `f_k^ε(t_i)` indexed `[step][node]`.
    pub running: Vec<Vec<f64>>,
    /// `G_k^ε` per leaf.
    pub terminal: Vec<f64>,
    pub drift_l2: f64,
    pub running_l2: f64,
    pub terminal_l2: f64,
    pub combined: f64,
    /// `ε(1 + k)`.
    pub threshold: f64,
    pub pass: bool,
}

pub fn estimate_approx_error(
    s: &Scenario,
    cyl: &CylinderCoefficientSet,
    k: f64,
    levels: usize,
    cap: u128,
) -> Result<ApproxErrorReport> {
    let grid = s.grid();
    let n = grid.steps();
    let d = s.state_dim();
    let tree = s.tree();
    let size = pow_sat(levels, d * n).saturating_mul(tree.nodes_u128(n));
    check_cap("approximation error sweep", size, cap)?;
    let orig = s.coefficients();

    let mut drift = Vec::with_capacity(n);
    let mut running = Vec::with_capacity(n);
    for i in 0..n {
        let paths = lattice(s, k, levels, i, cap)?;
        let walks = tree.layer(i)?;
        let rows: Vec<(f64, f64)> = walks
            .par_iter()
            .map(|w| {
                let mut eb = 0.0f64;
                let mut ef = 0.0f64;
                for x in &paths {
                    for v in s.controls().points() {
                        let b0 = orig.drift(i, x, w, v);
                        let b1 = cyl.drift(i, x, w, v);
                        eb = eb.max(euclid(b0.iter().zip(&b1).map(|(a, b)| a - b)));
                        ef = ef.max((orig.running_cost(i, x, w, v) - cyl.running_cost(i, x, w, v)).abs());
                    }
                }
                (eb, ef)
            })
            .collect();
        drift.push(rows.iter().map(|r| r.0).collect::<Vec<_>>());
        running.push(rows.iter().map(|r| r.1).collect::<Vec<_>>());
    }
    let paths = lattice(s, k, levels, n, cap)?;
    let terminal: Vec<f64> = tree
        .layer(n)?
        .par_iter()
        .map(|w| {
            paths
                .iter()
                .map(|x| (orig.terminal_cost(x, w) - cyl.terminal_cost(x, w)).abs())
                .fold(0.0f64, f64::max)
        })
        .collect();

    let dt = grid.dt();
    let mean_sq = |row: &[f64]| row.iter().map(|e| e * e).sum::<f64>() / row.len() as f64;
    let drift_l2 = drift.iter().map(|r| mean_sq(r) * dt).sum::<f64>().sqrt();
    let running_l2 = running.iter().map(|r| mean_sq(r) * dt).sum::<f64>().sqrt();
    let terminal_l2 = mean_sq(&terminal).sqrt();
    let combined = drift_l2 + running_l2 + terminal_l2;
    let threshold = cyl.target_eps() * (1.0 + k);
    Ok(ApproxErrorReport {
        k,
        levels,
        drift,
        running,
        terminal,
        drift_l2,
        running_l2,
        terminal_l2,
        combined,
        threshold,
        pass: combined < threshold,
    })
}

fn lattice(s: &Scenario, k: f64, levels: usize, end: usize, cap: u128) -> Result<Vec<GridPath>> {
    let spec = PathClassSpec::new(k, s.initial().clone(), end)?;
    enumerate_class_lattice(&spec, levels, cap)
}
