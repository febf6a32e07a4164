use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::path_space::{euclid, sup_distance, GridPath};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub bound: f64,
    pub lipschitz: f64,
    pub max_drift: f64,
    pub max_running: f64,
    pub max_terminal: f64,
    pub max_ratio_drift: f64,
    pub max_ratio_running: f64,
    pub max_ratio_terminal: f64,
    pub pass: bool,
}

const TOL: f64 = 1e-12;

/// Random lattice path through the initial prefix: every step moves each
/// component by `{−1, 0, 1}·k·dt/√d`.
fn lattice_path(s: &Scenario, k: f64, rng: &mut impl Rng) -> GridPath {
    let g = s.grid();
    let d = s.state_dim();
    let h = k * g.dt() / (d.max(1) as f64).sqrt();
    let mut x = s.initial().clone();
    while x.anchor() < g.steps() {
        let inc: Vec<f64> = (0..d).map(|_| h * (rng.gen_range(0..3) as f64 - 1.0)).collect();
        x = x.advanced(&inc).expect("lattice step");
    }
    x
}

/// Copy of `x` with one step after the prefix re-drawn, so that pairs at small
/// distance are sampled too.
fn neighbour(s: &Scenario, x: &GridPath, k: f64, rng: &mut impl Rng) -> GridPath {
    let g = s.grid();
    let d = s.state_dim();
    let start = s.initial().anchor();
    let h = k * g.dt() / (d.max(1) as f64).sqrt();
    let at = rng.gen_range(start..g.steps());
    let mut y = x.truncate(start).expect("prefix");
    for j in start..g.steps() {
        let inc: Vec<f64> = if j == at {
            (0..d).map(|_| h * (rng.gen_range(0..3) as f64 - 1.0)).collect()
        } else {
            (0..d).map(|c| x.value(j + 1, c) - x.value(j, c)).collect()
        };
        y = y.advanced(&inc).expect("lattice step");
    }
    y
}

/// Samples coefficient evaluations on lattice paths of slope `≤ L` from the
/// initial prefix and compares the observed sizes and path-Lipschitz ratios
/// with the declared constants.
pub fn validate_coefficients(s: &Scenario, sample_count: usize, seed: u64) -> ValidationReport {
    let c = s.coefficients();
    let g = s.grid();
    let tree = s.tree();
    let k = c.bound();
    let start = s.initial().anchor();
    let mut rng = stream(seed, "validate", 0);
    let mut rep = ValidationReport {
        samples: sample_count,
        bound: c.bound(),
        lipschitz: c.lipschitz(),
        max_drift: 0.0,
        max_running: 0.0,
        max_terminal: 0.0,
        max_ratio_drift: 0.0,
        max_ratio_running: 0.0,
        max_ratio_terminal: 0.0,
        pass: false,
    };
    let ratio = |a: f64, b: f64, dist: f64| if dist > 0.0 { a / dist } else { b };
    for n in 0..sample_count {
        let x = lattice_path(s, k, &mut rng);
        let y = if n % 2 == 0 { lattice_path(s, k, &mut rng) } else { neighbour(s, &x, k, &mut rng) };
        let node = rng.gen_range(0..tree.nodes_u128(g.steps()).min(usize::MAX as u128) as usize);
        let w = tree.path(g.steps(), node).expect("noise path");
        let u = s.controls().point(rng.gen_range(0..s.controls().len()));

        let gx = c.terminal_cost(&x, &w);
        let gy = c.terminal_cost(&y, &w);
        rep.max_terminal = rep.max_terminal.max(gx.abs()).max(gy.abs());
        let dist = sup_distance(&x, &y);
        rep.max_ratio_terminal = rep.max_ratio_terminal.max(ratio((gx - gy).abs(), 0.0, dist));

        if start < g.steps() {
            let i = rng.gen_range(start..g.steps());
            let xi = x.truncate(i).expect("prefix");
            let yi = y.truncate(i).expect("prefix");
            let wi = w.truncate(i).expect("prefix");
            let dist = sup_distance(&xi, &yi);
            let bx = c.drift(i, &xi, &wi, u);
            let by = c.drift(i, &yi, &wi, u);
            rep.max_drift = rep.max_drift.max(euclid(bx.iter().copied())).max(euclid(by.iter().copied()));
            let db = euclid(bx.iter().zip(&by).map(|(a, b)| a - b));
            rep.max_ratio_drift = rep.max_ratio_drift.max(ratio(db, 0.0, dist));
            let fx = c.running_cost(i, &xi, &wi, u);
            let fy = c.running_cost(i, &yi, &wi, u);
            rep.max_running = rep.max_running.max(fx.abs()).max(fy.abs());
            rep.max_ratio_running = rep.max_ratio_running.max(ratio((fx - fy).abs(), 0.0, dist));
        }
    }
    let b = rep.bound + TOL;
    let l = rep.lipschitz + TOL;
    rep.pass = rep.max_drift <= b
        && rep.max_running <= b
        && rep.max_terminal <= b
        && rep.max_ratio_drift <= l
        && rep.max_ratio_running <= l
        && rep.max_ratio_terminal <= l;
    rep
}
