//! Registered coefficient sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::habit::stieltjes;
use super::Coefficients;
use crate::path_space::{euclid, GridPath};
use crate::rng::stream;

/// `β = v`, `f = 0`, `G = |x(T)|`.
#[derive(Clone, Debug)]
pub struct DriftableAbs {
    bound: f64,
    dim: usize,
}

impl DriftableAbs {
    pub fn new(bound: f64) -> Self {
        DriftableAbs { bound, dim: 1 }
    }

    pub fn with_dim(bound: f64, dim: usize) -> Self {
        DriftableAbs { bound, dim }
    }
}

impl Coefficients for DriftableAbs {
    fn name(&self) -> &str {
        "driftable_abs"
    }
    fn state_dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        0
    }
    fn control_dim(&self) -> Option<usize> {
        Some(self.dim)
    }
    fn drift(&self, _: usize, _: &GridPath, _: &GridPath, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
    fn running_cost(&self, _: usize, _: &GridPath, _: &GridPath, _: &[f64]) -> f64 {
        0.0
    }
    fn terminal_cost(&self, x: &GridPath, _: &GridPath) -> f64 {
        euclid(x.terminal().into_iter())
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn path_lookback(&self, step: usize) -> Option<Vec<usize>> {
        Some(vec![step])
    }
    fn noise_lookback(&self, _: usize) -> Option<Vec<usize>> {
        Some(vec![])
    }
}

fn running_max(x: &GridPath, step: usize) -> f64 {
    (0..=step.min(x.anchor())).map(|j| x.value(j, 0)).fold(f64::NEG_INFINITY, f64::max)
}

/// Scalar state pulled down by its running maximum `M_t = max_{s≤t} x(s)`:
/// `β = clip(v − κ·M_t, ±L)`, `f = w·clip(M_t, ±1)`, `G = min(M_T − x(T), L)`.
#[derive(Clone, Debug)]
pub struct RunningMax {
    kappa: f64,
    weight: f64,
    bound: f64,
}

impl RunningMax {
    pub fn new(kappa: f64, weight: f64, bound: f64) -> Self {
        RunningMax { kappa, weight, bound }
    }
}

impl Coefficients for RunningMax {
    fn name(&self) -> &str {
        "running_max"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        0
    }
    fn drift(&self, step: usize, x: &GridPath, _: &GridPath, v: &[f64]) -> Vec<f64> {
        vec![(v[0] - self.kappa * running_max(x, step)).clamp(-self.bound, self.bound)]
    }
    fn running_cost(&self, step: usize, x: &GridPath, _: &GridPath, _: &[f64]) -> f64 {
        self.weight * running_max(x, step).clamp(-1.0, 1.0)
    }
    fn terminal_cost(&self, x: &GridPath, _: &GridPath) -> f64 {
        (running_max(x, x.anchor()) - x.value(x.anchor(), 0)).min(self.bound)
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn lipschitz(&self) -> f64 {
        self.kappa.max(self.weight).max(2.0)
    }
}

/// One smooth cylinder argument `a·v + q_now·x(t) + q_lag·x(t/2) + r·W(t) + s·t + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderArgument {
    pub a_v: f64,
    pub q_now: f64,
    pub q_lag: f64,
    pub r: Vec<f64>,
    pub s: f64,
    pub c: f64,
}

impl CylinderArgument {
    fn sample(rng: &mut impl Rng, m: usize) -> Self {
        // |q_now| + |q_lag| ≤ 1
        let q_now: f64 = rng.gen_range(-0.6..0.6);
        let q_lag: f64 = rng.gen_range(-0.4..0.4);
        CylinderArgument {
            a_v: rng.gen_range(-1.0..1.0),
            q_now,
            q_lag,
            r: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            s: rng.gen_range(-1.0..1.0),
            c: rng.gen_range(-0.5..0.5),
        }
    }

    fn eval(&self, step: usize, x: &GridPath, w: &GridPath, v: f64) -> f64 {
        let g = x.grid();
        let step = step.min(x.anchor());
        let mut z = self.a_v * v
            + self.q_now * x.value(step, 0)
            + self.q_lag * x.value(step / 2, 0)
            + self.s * g.time(step)
            + self.c;
        let wi = step.min(w.anchor());
        for (k, r) in self.r.iter().enumerate() {
            z += r * w.value(wi, k);
        }
        z
    }

    fn path_weight(&self) -> f64 {
        self.q_now.abs() + self.q_lag.abs()
    }
}

/// Seeded scalar coefficients built from smooth cylinder functionals of the
/// state and the first `m` noise components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCylinder {
    pub bound: f64,
    pub m: usize,
    pub drift: CylinderArgument,
    pub running: CylinderArgument,
    pub terminal: CylinderArgument,
}

impl RandomCylinder {
    pub fn generate(seed: u64, bound: f64, m: usize) -> Self {
        let mut rng = stream(seed, "random_cylinder", 0);
        let drift = CylinderArgument::sample(&mut rng, m);
        let running = CylinderArgument::sample(&mut rng, m);
        let mut terminal = CylinderArgument::sample(&mut rng, m);
        terminal.a_v = 0.0;
        RandomCylinder { bound, m, drift, running, terminal }
    }
}

impl Coefficients for RandomCylinder {
    fn name(&self) -> &str {
        "random_cylinder"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn drift(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> Vec<f64> {
        vec![self.bound * self.drift.eval(step, x, w, v[0]).tanh()]
    }
    fn running_cost(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> f64 {
        self.bound * self.running.eval(step, x, w, v[0]).sin()
    }
    fn terminal_cost(&self, x: &GridPath, w: &GridPath) -> f64 {
        self.bound * self.terminal.eval(x.anchor(), x, w, 0.0).tanh()
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn lipschitz(&self) -> f64 {
        self.bound
            * self
                .drift
                .path_weight()
                .max(self.running.path_weight())
                .max(self.terminal.path_weight())
    }
    fn path_lookback(&self, step: usize) -> Option<Vec<usize>> {
        Some(vec![step / 2, step])
    }
    fn noise_lookback(&self, step: usize) -> Option<Vec<usize>> {
        Some(vec![step])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HabitParams {
    /// `γ(t) = gamma0 + sigma_gamma·W(t)`.
    pub gamma0: f64,
    pub sigma_gamma: f64,
    /// `ξ(t, s) = exp(−decay·(t − s))`.
    pub decay: f64,
    /// Weight of the living standard inside the utility.
    pub weight: f64,
    pub utility_scale: f64,
    /// Terminal penalty slope on consumption above `budget`.
    pub penalty: f64,
    pub budget: f64,
    pub bound: f64,
}

impl Default for HabitParams {
    fn default() -> Self {
        HabitParams {
            gamma0: 0.2,
            sigma_gamma: 0.1,
            decay: 1.0,
            weight: 0.5,
            utility_scale: 1.0,
            penalty: 1.0,
            budget: 0.5,
            bound: 1.0,
        }
    }
}

/// Consumption with habit formation. The state is cumulative consumption `C`
/// with `dC = v dt`; the running cost is the negative utility
/// `−ū·tanh(v − w·Z(t, C_t))` and the terminal cost penalizes consumption above
/// the budget.
#[derive(Clone, Debug)]
pub struct Habit {
    params: HabitParams,
}

impl Habit {
    pub fn new(params: HabitParams) -> Self {
        Habit { params }
    }

    pub fn params(&self) -> &HabitParams {
        &self.params
    }

    pub fn gamma(&self, step: usize, w: &GridPath) -> f64 {
        let wv = if w.dim() == 0 { 0.0 } else { w.value(step.min(w.anchor()), 0) };
        self.params.gamma0 + self.params.sigma_gamma * wv
    }

    /// Living standard `Z(t_step, C)` with the built-in kernel.
    pub fn living_standard(&self, step: usize, x: &GridPath, w: &GridPath) -> f64 {
        let step = step.min(x.anchor());
        let g = x.grid();
        let decay = self.params.decay;
        self.gamma(step, w) + stieltjes(step, x, |s| (-decay * (g.time(step) - g.time(s))).exp())
    }
}

impl Coefficients for Habit {
    fn name(&self) -> &str {
        "habit"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, _: usize, _: &GridPath, _: &GridPath, v: &[f64]) -> Vec<f64> {
        vec![v[0]]
    }
    fn running_cost(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> f64 {
        let z = self.living_standard(step, x, w);
        -self.params.utility_scale * (v[0] - self.params.weight * z).tanh()
    }
    fn terminal_cost(&self, x: &GridPath, _: &GridPath) -> f64 {
        let over = (x.value(x.anchor(), 0) - self.params.budget).max(0.0);
        self.params.utility_scale * (self.params.penalty * over).tanh()
    }
    fn bound(&self) -> f64 {
        self.params.bound
    }
    fn lipschitz(&self) -> f64 {
        // the left-point habit sum is 2-Lipschitz in the sup norm
        let p = &self.params;
        (2.0 * p.utility_scale * p.weight).max(p.utility_scale * p.penalty)
    }
}
