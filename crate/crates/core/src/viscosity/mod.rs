//! Path-dependent Itô calculus on the quantized tree: vertical and time
//! derivatives of random fields, the Itô decomposition along frozen paths,
//! discrete Snell envelopes, and probes of the viscosity inequalities.

mod cylinder;
mod ito;
mod probe;
mod snell;

use std::sync::Arc;

pub use cylinder::{CylinderTerm, CylinderTestFunction, SampleFn, TimeFn};
pub use ito::{
    apply_generator, ito_decompose, ito_decompose_martingale_first, ito_kunita_residual, reconstruction_residual,
    refinement_slope, ItoDecomposition,
};
pub use probe::{test_tangency, viscosity_probe, write_probe_csv, ProbeReport, ProbeSide, Tangency, TangencySide};
pub use snell::{snell_envelope, SnellEnvelope};

use crate::control_value::ValueTable;
use crate::error::{Error, Result};
use crate::path_space::GridPath;
use crate::scenario::{NoiseTree, Scenario};

/// An adapted random field `u(t_i, x, ω)`, evaluated at a state path and a
/// noise path both stopped at `step`.
pub trait RandomField: Send + Sync {
    fn eval(&self, step: usize, x: &GridPath, w: &GridPath) -> Result<f64>;
    /// Partition nodes the field is regular between; `None` when regular on the whole grid.
    fn breakpoints(&self) -> Option<Vec<usize>> {
        None
    }
}

type FieldFn = Arc<dyn Fn(usize, &GridPath, &GridPath) -> Result<f64> + Send + Sync>;

/// A [`RandomField`] from a closure.
#[derive(Clone)]
pub struct FnField {
    f: FieldFn,
    breaks: Option<Vec<usize>>,
}

impl FnField {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(usize, &GridPath, &GridPath) -> Result<f64> + Send + Sync + 'static,
    {
        FnField { f: Arc::new(f), breaks: None }
    }

    pub fn with_breakpoints(mut self, b: Vec<usize>) -> Self {
        self.breaks = Some(b);
        self
    }
}

impl RandomField for FnField {
    fn eval(&self, step: usize, x: &GridPath, w: &GridPath) -> Result<f64> {
        (self.f)(step, x, w)
    }
    fn breakpoints(&self) -> Option<Vec<usize>> {
        self.breaks.clone()
    }
}

/// The value function of a scenario read from its table; paths off the table
/// are solved on the fly.
#[derive(Clone)]
pub struct ValueField {
    tbl: Arc<ValueTable>,
    s: Scenario,
    tree: NoiseTree,
}

impl ValueField {
    pub fn new(tbl: Arc<ValueTable>, s: Scenario) -> Self {
        let tree = s.tree();
        ValueField { tbl, s, tree }
    }

    pub fn table(&self) -> &ValueTable {
        &self.tbl
    }
}

impl RandomField for ValueField {
    fn eval(&self, step: usize, x: &GridPath, w: &GridPath) -> Result<f64> {
        let node = self.tree.node_of(w)?;
        self.tbl.value_at(&self.s, step, node, x)
    }
}

/// `u(t_i, x, ω) + c·(t_i − t_τ)`.
#[derive(Clone)]
pub struct TimeTilted {
    inner: Arc<dyn RandomField>,
    tau: usize,
    c: f64,
}

impl TimeTilted {
    pub fn new(inner: Arc<dyn RandomField>, tau: usize, c: f64) -> Self {
        TimeTilted { inner, tau, c }
    }
}

impl RandomField for TimeTilted {
    fn eval(&self, step: usize, x: &GridPath, w: &GridPath) -> Result<f64> {
        let g = x.grid();
        Ok(self.inner.eval(step, x, w)? + self.c * (g.time(step) - g.time(self.tau)))
    }
    fn breakpoints(&self) -> Option<Vec<usize>> {
        self.inner.breakpoints()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DifferenceMode {
    Centered,
    Forward,
    Backward,
    /// Centered differences at `h` and `h/2` combined to cancel the `h²` term.
    Richardson,
}

fn check_stopped(step: usize, x: &GridPath, w: &GridPath) -> Result<()> {
    if x.grid() != w.grid() {
        return Err(Error::GridMismatch);
    }
    if x.anchor() != step || w.anchor() != step {
        return Err(Error::InvalidParameter(format!("paths must end at step {step}")));
    }
    Ok(())
}

fn directional(u: &dyn RandomField, i: usize, x: &GridPath, w: &GridPath, c: usize, h: f64, mode: DifferenceMode) -> Result<f64> {
    let mut e = vec![0.0; x.dim()];
    let at = |e: &[f64]| u.eval(i, &x.vertical_perturbation(e)?, w);
    Ok(match mode {
        DifferenceMode::Centered => {
            e[c] = h;
            let up = at(&e)?;
            e[c] = -h;
            (up - at(&e)?) / (2.0 * h)
        }
        DifferenceMode::Forward => {
            e[c] = h;
            (at(&e)? - u.eval(i, x, w)?) / h
        }
        DifferenceMode::Backward => {
            e[c] = -h;
            (u.eval(i, x, w)? - at(&e)?) / h
        }
        DifferenceMode::Richardson => {
            let coarse = directional(u, i, x, w, c, h, DifferenceMode::Centered)?;
            let fine = directional(u, i, x, w, c, 0.5 * h, DifferenceMode::Centered)?;
            (4.0 * fine - coarse) / 3.0
        }
    })
}

/// `∇u(t_i, x)`: difference quotients of `u` under jumps `±h·e_c` of the state
/// at `t_i`, one per state component.
pub fn vertical_gradient(
    u: &dyn RandomField,
    i: usize,
    x: &GridPath,
    w: &GridPath,
    h: f64,
    mode: DifferenceMode,
) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("vertical step {h} must be positive")));
    }
    check_stopped(i, x, w)?;
    (0..x.dim()).map(|c| directional(u, i, x, w, c, h, mode)).collect()
}

/// Largest gap between forward and backward vertical differences; a kink of
/// `u` in the terminal value shows up as a gap that does not shrink with `h`.
pub fn kink_gap(u: &dyn RandomField, i: usize, x: &GridPath, w: &GridPath, h: f64) -> Result<f64> {
    let f = vertical_gradient(u, i, x, w, h, DifferenceMode::Forward)?;
    let b = vertical_gradient(u, i, x, w, h, DifferenceMode::Backward)?;
    Ok(f.iter().zip(&b).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max))
}

/// Least-squares exponent `α` in `|∇u(x + r) − ∇u(x)| ≈ C·r^α` over the radii,
/// with `x + r` the path translated by `r` in every component.
pub fn holder_exponent(u: &dyn RandomField, i: usize, x: &GridPath, w: &GridPath, radii: &[f64], h: f64) -> Result<f64> {
    let base = vertical_gradient(u, i, x, w, h, DifferenceMode::Centered)?;
    let mut pts = Vec::new();
    for &r in radii {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("radius {r} must be positive")));
        }
        let moved = vertical_gradient(u, i, &x.translated(&vec![r; x.dim()]), w, h, DifferenceMode::Centered)?;
        let d = base.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if d > 0.0 {
            pts.push((r.ln(), d.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::Numeric("gradient does not move with the path".into()));
    }
    Ok(ls_slope(&pts))
}

pub(crate) fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
