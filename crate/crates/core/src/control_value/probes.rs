use rand::Rng;
use serde::Serialize;

use super::ValueTable;
use crate::dynamics::{euler_step, ControlPolicy};
use crate::error::Result;
use crate::path_space::{enumerate_class_lattice, sup_distance, GridPath, PathClassSpec};
use crate::rng::stream;
use crate::scenario::Scenario;

fn expected_to(
    tbl: &ValueTable,
    s: &Scenario,
    pol: &ControlPolicy,
    i: usize,
    until: usize,
    node: usize,
    w: &GridPath,
    x: &GridPath,
) -> Result<f64> {
    if i == until {
        return tbl.value_at(s, i, node, x);
    }
    let tree = s.tree();
    let bn = tree.branches();
    let u = pol.control(i, w, x);
    let run = s.coefficients().running_cost(i, x, w, s.controls().point(u)) * s.grid().dt();
    let next = euler_step(s, i, x, w, u)?;
    let mut acc = 0.0;
    for b in 0..bn {
        acc += expected_to(tbl, s, pol, i + 1, until, node * bn + b, &w.advanced(&tree.increment(b))?, &next)?;
    }
    Ok(run + acc / bn as f64)
}

/// `min over nodes at t of E[V(t̃, X_t̃) + Σ_{t≤i<t̃} f·dt | node] − V(t, X_t)`
/// along `pol` started from the table's initial prefix.
pub fn supermartingale_gap(
    tbl: &ValueTable,
    s: &Scenario,
    pol: &ControlPolicy,
    t: usize,
    t_tilde: usize,
) -> Result<f64> {
    if t > t_tilde || t_tilde > tbl.steps() || t < tbl.start() {
        return Err(crate::Error::InvalidParameter(format!("bad interval [{t}, {t_tilde}]")));
    }
    let tree = s.tree();
    let mut worst = f64::INFINITY;
    for node in 0..tree.nodes(t) {
        let w = tree.path(t, node)?;
        let mut x = s.initial().clone();
        for i in tbl.start()..t {
            let wi = w.truncate(i)?;
            x = euler_step(s, i, &x, &wi, pol.control(i, &wi, &x))?;
        }
        let now = tbl.value_at(s, t, node, &x)?;
        if t == t_tilde {
            worst = worst.min(0.0);
            continue;
        }
        let later = expected_to(tbl, s, pol, t, t_tilde, node, &w, &x)?;
        worst = worst.min(later - now);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub pairs: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub max_abs_value: f64,
    pub value_bound: f64,
    pub pass: bool,
}

/// `L(1 + T)(1 + L·dt)^N`.
pub fn lipschitz_bound(s: &Scenario) -> f64 {
    let l = s.constant_l();
    let g = s.grid();
    l * (1.0 + g.horizon()) * (1.0 + l * g.dt()).powi(g.steps() as i32)
}

struct Tally {
    pairs: usize,
    max_ratio: f64,
    max_abs: f64,
}

impl Tally {
    fn add(&mut self, vx: f64, vy: f64, dist: f64) {
        self.max_abs = self.max_abs.max(vx.abs()).max(vy.abs());
        if dist > 0.0 {
            self.pairs += 1;
            self.max_ratio = self.max_ratio.max((vx - vy).abs() / dist);
        }
    }

    fn report(self, tbl: &ValueTable, s: &Scenario, tol: f64) -> LipschitzReport {
        let bound = lipschitz_bound(s);
        let value_bound = s.constant_l() * (s.grid().horizon() + 1.0);
        let max_abs_value = self.max_abs.max(tbl.max_abs_value());
        LipschitzReport {
            pairs: self.pairs,
            max_ratio: self.max_ratio,
            bound,
            max_abs_value,
            value_bound,
            pass: self.max_ratio <= bound + tol && max_abs_value <= value_bound + tol,
        }
    }
}

fn random_lattice_path(s: &Scenario, end: usize, rng: &mut impl Rng) -> Result<GridPath> {
    let d = s.state_dim();
    let h = s.constant_l() * s.grid().dt() / (d as f64).sqrt();
    let mut x = s.initial().clone();
    while x.anchor() < end {
        let inc: Vec<f64> = (0..d).map(|_| h * (rng.gen_range(0..3) as f64 - 1.0)).collect();
        x = x.advanced(&inc)?;
    }
    Ok(x)
}

/// Sampled same-time pairs: independent lattice paths of slope `≤ L` from the
/// initial prefix, or one such path and a translate of it.
pub fn lipschitz_probe(tbl: &ValueTable, s: &Scenario, pairs: usize, seed: u64) -> Result<LipschitzReport> {
    let mut rng = stream(seed, "lipschitz_probe", 0);
    let tree = s.tree();
    let d = s.state_dim();
    let mut tally = Tally { pairs: 0, max_ratio: 0.0, max_abs: 0.0 };
    let mut drawn = 0;
    while drawn < pairs {
        let t = rng.gen_range(tbl.start()..=tbl.steps());
        let node = rng.gen_range(0..tree.nodes(t));
        let x = random_lattice_path(s, t, &mut rng)?;
        let y = if rng.gen_bool(0.5) {
            random_lattice_path(s, t, &mut rng)?
        } else {
            let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            x.translated(&h)
        };
        let dist = sup_distance(&x, &y);
        if dist == 0.0 {
            continue;
        }
        drawn += 1;
        tally.add(tbl.value_at(s, t, node, &x)?, tbl.value_at(s, t, node, &y)?, dist);
    }
    Ok(tally.report(tbl, s, 1e-12))
}

/// Every pair of lattice paths (`levels` slopes per step, bound `L`) and their
/// unit-offset translates, at every step and node.
pub fn lipschitz_sweep(tbl: &ValueTable, s: &Scenario, levels: usize, cap: u128) -> Result<LipschitzReport> {
    let tree = s.tree();
    let d = s.state_dim();
    let mut tally = Tally { pairs: 0, max_ratio: 0.0, max_abs: 0.0 };
    for t in tbl.start()..=tbl.steps() {
        let spec = PathClassSpec::new(s.constant_l(), s.initial().clone(), t)?;
        let mut paths = enumerate_class_lattice(&spec, levels, cap)?;
        let shifted: Vec<GridPath> = paths
            .iter()
            .flat_map(|x| [0.25, -0.25].map(|c| x.translated(&vec![c; d])))
            .collect();
        paths.extend(shifted);
        for node in 0..tree.nodes(t) {
            let vals: Vec<f64> = paths.iter().map(|x| tbl.value_at(s, t, node, x)).collect::<Result<_>>()?;
            for a in 0..paths.len() {
                for b in a + 1..paths.len() {
                    tally.add(vals[a], vals[b], sup_distance(&paths[a], &paths[b]));
                }
            }
        }
    }
    Ok(tally.report(tbl, s, 1e-12))
}
