use std::sync::Arc;

use rand::Rng;

use super::RandomField;
use crate::error::{Error, Result};
use crate::path_space::{GridPath, TimeGrid};
use crate::rng::stream;

pub type SampleFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `g(W samples)·h(x samples)·ψ(t)`, with `ψ` supported on `(t̲_cell, t̲_{cell+1}]`.
#[derive(Clone)]
pub struct CylinderTerm {
    pub g: SampleFn,
    pub h: SampleFn,
    pub psi: TimeFn,
    pub cell: usize,
}

/// A finite sum of cylinder terms over a partition `0 = t̲_0 < … < t̲_n = N`.
/// Samples are read at `t̲_j ∧ t`, component by component, so the sample at
/// every breakpoint past `t` is the current value.
#[derive(Clone)]
pub struct CylinderTestFunction {
    terms: Vec<CylinderTerm>,
    breaks: Vec<usize>,
    rho: f64,
    alpha: f64,
}

impl std::fmt::Debug for CylinderTestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylinderTestFunction")
            .field("terms", &self.terms.len())
            .field("breakpoints", &self.breaks)
            .field("rho", &self.rho)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl CylinderTestFunction {
    /// `rho` is the declared bound on the vertical gradient and `alpha` the
    /// Hölder exponent of the derivatives inside each cell.
    pub fn new(terms: Vec<CylinderTerm>, breaks: Vec<usize>, rho: f64, alpha: f64) -> Result<Self> {
        if breaks.len() < 2 || breaks[0] != 0 || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(format!("bad partition {breaks:?}")));
        }
        if let Some(t) = terms.iter().find(|t| t.cell + 1 >= breaks.len()) {
            return Err(Error::OutOfRange { index: t.cell, limit: breaks.len() - 2 });
        }
        if !(rho >= 0.0) || !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter("need rho ≥ 0 and alpha in (0, 1]".into()));
        }
        Ok(CylinderTestFunction { terms, breaks, rho, alpha })
    }

    /// Sum of `terms` random terms `a·cos(r·W + c)·tanh(q·x + c')·(p₀ + p₁t)`
    /// over the partition `breaks` of `grid`, for `d` state and `m` noise components.
    pub fn random(seed: u64, grid: TimeGrid, breaks: &[usize], terms: usize, d: usize, m: usize) -> Result<Self> {
        if breaks.last() != Some(&grid.steps()) {
            return Err(Error::InvalidParameter(format!("partition {breaks:?} must end at step {}", grid.steps())));
        }
        let nb = breaks.len();
        let mut rng = stream(seed, "cylinder-test-function", 0);
        let mut out = Vec::with_capacity(terms);
        let mut rho = 0.0;
        for _ in 0..terms {
            let a: f64 = rng.gen_range(0.5..1.5);
            let r: Vec<f64> = (0..nb * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c0: f64 = rng.gen_range(-1.0..1.0);
            let q: Vec<f64> = (0..nb * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c1: f64 = rng.gen_range(-1.0..1.0);
            let (p0, p1): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let cell = rng.gen_range(0..nb - 1);
            rho += a * (p0.abs() + p1.abs() * grid.horizon()) * q.iter().map(|v| v.abs()).sum::<f64>();
            out.push(CylinderTerm {
                g: Arc::new(move |ws: &[f64]| a * (ws.iter().zip(&r).map(|(w, k)| w * k).sum::<f64>() + c0).cos()),
                h: Arc::new(move |xs: &[f64]| (xs.iter().zip(&q).map(|(x, k)| x * k).sum::<f64>() + c1).tanh()),
                psi: Arc::new(move |t| p0 + p1 * t),
                cell,
            });
        }
        CylinderTestFunction::new(out, breaks.to_vec(), rho, 1.0)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn terms(&self) -> &[CylinderTerm] {
        &self.terms
    }

    fn samples(&self, i: usize, p: &GridPath) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.breaks.len() * p.dim());
        for &b in &self.breaks {
            for c in 0..p.dim() {
                out.push(p.value(b.min(i), c));
            }
        }
        out
    }
}

impl RandomField for CylinderTestFunction {
    fn eval(&self, step: usize, x: &GridPath, w: &GridPath) -> Result<f64> {
        if step > *self.breaks.last().expect("partition") {
            return Err(Error::OutOfRange { index: step, limit: *self.breaks.last().expect("partition") });
        }
        let t = x.grid().time(step);
        let mut xs = None;
        let mut ws = None;
        let mut acc = 0.0;
        for term in &self.terms {
            if step <= self.breaks[term.cell] || step > self.breaks[term.cell + 1] {
                continue;
            }
            let xs = xs.get_or_insert_with(|| self.samples(step, x));
            let ws = ws.get_or_insert_with(|| self.samples(step, w));
            acc += (term.g)(ws) * (term.h)(xs) * (term.psi)(t);
        }
        Ok(acc)
    }

    fn breakpoints(&self) -> Option<Vec<usize>> {
        Some(self.breaks.clone())
    }
}
