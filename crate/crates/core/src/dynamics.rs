//! Forward Euler integration of the controlled state equation and the flow
//! estimates it satisfies.

use std::fmt;
use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::path_space::{d0, sup_distance, write_path_csv, GridPath};
use crate::rng::mix;
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    OpenLoop,
    FeedbackTable,
}

pub type PolicyRule = Arc<dyn Fn(usize, &GridPath, &GridPath) -> usize + Send + Sync>;

/// An adapted control: `rule(step, W_step, X_step)` returns an index into the
/// scenario's control set.
#[derive(Clone)]
pub struct ControlPolicy {
    pub kind: PolicyKind,
    pub rule: PolicyRule,
}

impl fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlPolicy").field("kind", &self.kind).finish()
    }
}

impl ControlPolicy {
    pub fn constant(index: usize) -> Self {
        ControlPolicy { kind: PolicyKind::OpenLoop, rule: Arc::new(move |_, _, _| index) }
    }

    /// Deterministic sequence indexed by absolute step.
    pub fn open_loop(seq: Vec<usize>) -> Self {
        ControlPolicy { kind: PolicyKind::OpenLoop, rule: Arc::new(move |i, _, _| seq[i]) }
    }

    pub fn feedback<F>(f: F) -> Self
    where
        F: Fn(usize, &GridPath, &GridPath) -> usize + Send + Sync + 'static,
    {
        ControlPolicy { kind: PolicyKind::FeedbackTable, rule: Arc::new(f) }
    }

    /// Reproducible pseudo-random feedback: a hash of `(seed, step, W, X)`.
    pub fn pseudo_random(seed: u64, count: usize) -> Self {
        ControlPolicy::feedback(move |i, w, x| {
            let mut h = mix(seed ^ (i as u64).rotate_left(32));
            for k in w.key().into_iter().chain(x.key()) {
                h = mix(h ^ k);
            }
            (h % count as u64) as usize
        })
    }

    pub fn control(&self, step: usize, w: &GridPath, x: &GridPath) -> usize {
        (self.rule)(step, w, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    pub path: GridPath,
    /// Control indices used on steps `start..N`.
    pub controls: Vec<usize>,
    pub noise: GridPath,
    pub start: usize,
}

/// One explicit Euler step `x ⊕ β(t_i, x, W, u)·dt`.
pub fn euler_step(s: &Scenario, i: usize, x: &GridPath, w: &GridPath, u: usize) -> Result<GridPath> {
    if u >= s.controls().len() {
        return Err(Error::OutOfRange { index: u, limit: s.controls().len() });
    }
    let dt = s.grid().dt();
    let b = s.coefficients().drift(i, x, w, s.controls().point(u));
    let inc: Vec<f64> = b.iter().map(|v| v * dt).collect();
    x.advanced(&inc)
}

fn check_inputs(s: &Scenario, noise: &GridPath, start: usize, xi: &GridPath) -> Result<()> {
    let g = s.grid();
    if xi.grid() != g || noise.grid() != g {
        return Err(Error::GridMismatch);
    }
    if xi.dim() != s.state_dim() {
        return Err(Error::Dimension { expected: s.state_dim(), got: xi.dim() });
    }
    if noise.dim() != s.noise().dims {
        return Err(Error::Dimension { expected: s.noise().dims, got: noise.dim() });
    }
    if xi.anchor() != start {
        return Err(Error::InvalidParameter(format!(
            "initial prefix ends at {}, integration starts at {start}",
            xi.anchor()
        )));
    }
    if noise.anchor() != g.steps() {
        return Err(Error::InvalidParameter("noise path must reach the horizon".into()));
    }
    Ok(())
}

/// `X` on `[t_start, T]` from the prefix `xi` under `pol`, driven by the full
/// noise path `noise`.
pub fn integrate_state(
    s: &Scenario,
    pol: &ControlPolicy,
    noise: &GridPath,
    start: usize,
    xi: &GridPath,
) -> Result<StateTrajectory> {
    check_inputs(s, noise, start, xi)?;
    let n = s.grid().steps();
    let mut x = xi.clone();
    let mut controls = Vec::with_capacity(n - start);
    for i in start..n {
        let wi = noise.truncate(i)?;
        let u = pol.control(i, &wi, &x);
        x = euler_step(s, i, &x, &wi, u)?;
        controls.push(u);
    }
    Ok(StateTrajectory { path: x, controls, noise: noise.clone(), start })
}

/// Integrates from `r` on `noise1`, restarts at `t` from the intermediate path
/// on `noise2`, and returns the largest node deviation of the two tails.
pub fn restart_deviation(
    s: &Scenario,
    pol: &ControlPolicy,
    noise1: &GridPath,
    noise2: &GridPath,
    r: usize,
    t: usize,
    xi: &GridPath,
) -> Result<f64> {
    if t < r {
        return Err(Error::InvalidParameter("restart time precedes the start".into()));
    }
    let first = integrate_state(s, pol, noise1, r, xi)?;
    let second = integrate_state(s, pol, noise2, t, &first.path.truncate(t)?)?;
    let d = s.state_dim();
    let dev = (t..=s.grid().steps())
        .map(|i| crate::path_space::euclid((0..d).map(|c| first.path.value(i, c) - second.path.value(i, c))))
        .fold(0.0, f64::max);
    Ok(dev)
}

/// Same-noise restart from the initial prefix frozen up to `r`.
pub fn restart_consistency(s: &Scenario, pol: &ControlPolicy, noise: &GridPath, r: usize, t: usize) -> Result<f64> {
    let a = s.initial().anchor();
    if r < a {
        return Err(Error::InvalidParameter("start precedes the initial prefix".into()));
    }
    let xi = s.initial().horizontal_extension(r - a)?;
    restart_deviation(s, pol, noise, noise, r, t, &xi)
}

/// `(max_l ‖X_l‖₀, (1 + L·T)(1 + ‖ξ‖₀))` with `L` the coefficient bound.
pub fn sup_bound_check(s: &Scenario, tr: &StateTrajectory) -> (f64, f64) {
    let l = s.coefficients().bound();
    let k = 1.0 + l * s.grid().horizon();
    let xi = tr.path.truncate(tr.start).expect("prefix");
    (tr.path.sup_norm(), k * (1.0 + xi.sup_norm()))
}

/// `max_{s ≤ t} d0(X_s, X_t) − (√(t − s) + L·(t − s))` over node pairs from the start.
pub fn time_regularity_excess(s: &Scenario, tr: &StateTrajectory) -> f64 {
    let g = s.grid();
    let l = s.coefficients().bound();
    let stopped: Vec<GridPath> = (tr.start..=g.steps()).map(|i| tr.path.truncate(i).expect("prefix")).collect();
    let mut worst = f64::NEG_INFINITY;
    for (a, xa) in stopped.iter().enumerate() {
        for xb in &stopped[a..] {
            let gap = g.time(xb.anchor()) - g.time(xa.anchor());
            let d = d0(xa, xb).expect("common grid");
            worst = worst.max(d - gap.sqrt() - l * gap);
        }
    }
    worst
}

/// Runs `pol` from `xi`, replays its realized controls from `xi_hat`, and
/// returns `(max_l ‖X_l − X̂_l‖₀, (1 + L·dt)^N·‖ξ − ξ̂‖₀)` with `L` the scenario
/// constant.
pub fn stability_check(
    s: &Scenario,
    pol: &ControlPolicy,
    noise: &GridPath,
    xi: &GridPath,
    xi_hat: &GridPath,
) -> Result<(f64, f64)> {
    if xi.anchor() != xi_hat.anchor() {
        return Err(Error::InvalidParameter("initial prefixes must share an anchor".into()));
    }
    let start = xi.anchor();
    let a = integrate_state(s, pol, noise, start, xi)?;
    let mut seq = vec![0; s.grid().steps()];
    seq[start..].copy_from_slice(&a.controls);
    let b = integrate_state(s, &ControlPolicy::open_loop(seq), noise, start, xi_hat)?;
    let l = s.constant_l();
    let g = s.grid();
    let factor = (1.0 + l * g.dt()).powi(g.steps() as i32);
    Ok((sup_distance(&a.path, &b.path), factor * sup_distance(xi, xi_hat)))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    start: usize,
    controls: &'a [usize],
    noise_dims: usize,
    noise_node: Option<usize>,
    noise: Vec<Vec<f64>>,
}

/// Writes `<stem>.csv` (path) and `<stem>.json` (controls and noise).
pub fn write_trajectory(tr: &StateTrajectory, dir: &Path, stem: &str) -> Result<()> {
    write_path_csv(&tr.path, File::create(dir.join(format!("{stem}.csv")))?)?;
    let m = tr.noise.dim();
    let tree = crate::scenario::NoiseTree::new(tr.noise.grid(), m)?;
    let on_walk = (0..tr.noise.anchor()).all(|j| {
        (0..m).all(|c| {
            let inc = (tr.noise.value(j + 1, c) - tr.noise.value(j, c)).abs();
            (inc - tr.noise.grid().dt().sqrt()).abs() < 1e-12
        })
    });
    let side = Sidecar {
        start: tr.start,
        controls: &tr.controls,
        noise_dims: m,
        noise_node: if on_walk { Some(tree.node_of(&tr.noise)?) } else { None },
        noise: (0..=tr.noise.anchor()).map(|i| tr.noise.point(i)).collect(),
    };
    serde_json::to_writer_pretty(File::create(dir.join(format!("{stem}.json")))?, &side)?;
    Ok(())
}
