use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_space::TimeGrid;
use crate::scenario::Scenario;

/// Rectangular grid in `(ỹ, x̃)`. With `ny = 1` the noise axis is absent and
/// the single row sits at `ỹ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub y_half: f64,
    pub x_half: f64,
    ny: usize,
    nx: usize,
    /// Fraction of the stability limit used when choosing substeps.
    pub cfl: f64,
    /// Fixed number of substeps per grid step; `None` picks the smallest stable one.
    pub substeps: Option<usize>,
}

impl PdeGrid {
    pub fn new(y_half: f64, x_half: f64, ny: usize, nx: usize) -> Result<Self> {
        if nx < 3 || ny == 0 {
            return Err(Error::InvalidParameter(format!("grid {ny}x{nx} too small")));
        }
        if !(x_half > 0.0) || (ny > 1 && !(y_half > 0.0)) {
            return Err(Error::InvalidParameter("box half-widths must be positive".into()));
        }
        Ok(PdeGrid { y_half, x_half, ny, nx, cfl: 0.9, substeps: None })
    }

    /// Box half-widths `4√T` in `ỹ` and `4·max(√T, |x₀| + L·T)` in `x̃`.
    pub fn for_scenario(s: &Scenario, ny: usize, nx: usize) -> Self {
        let t = s.grid().horizon();
        let x0 = s.initial().value(0, 0).abs();
        let l = s.coefficients().bound();
        let ny = if s.noise().dims == 0 { 1 } else { ny.max(3) };
        PdeGrid::new(4.0 * t.sqrt(), 4.0 * t.sqrt().max(x0 + l * t), ny, nx.max(3)).expect("valid box")
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.x_half / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        if self.ny == 1 {
            0.0
        } else {
            2.0 * self.y_half / (self.ny - 1) as f64
        }
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|b| -self.x_half + b as f64 * self.dx()).collect()
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.ny).map(|a| -self.y_half + a as f64 * self.dy()).collect()
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.nx + b
    }

    /// Bilinear interpolation of a layer, clamped to the box.
    pub fn interpolate(&self, layer: &[f64], y: f64, x: f64) -> f64 {
        let (b, tb) = locate(x, self.x_half, self.dx(), self.nx);
        if self.ny == 1 {
            return (1.0 - tb) * layer[b] + tb * layer[b + 1];
        }
        let (a, ta) = locate(y, self.y_half, self.dy(), self.ny);
        let row = |a: usize| (1.0 - tb) * layer[self.index(a, b)] + tb * layer[self.index(a, b + 1)];
        (1.0 - ta) * row(a) + ta * row(a + 1)
    }
}

fn locate(v: f64, half: f64, h: f64, n: usize) -> (usize, f64) {
    let s = ((v + half) / h).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

/// Markovian coefficients `β(t_i, ỹ, x̃, u)`, `f(t_i, ỹ, x̃, u)` over a finite
/// control index set.
pub trait MarkovProblem: Sync {
    fn controls(&self) -> usize;
    fn drift(&self, step: usize, y: f64, x: f64, u: usize) -> f64;
    fn running(&self, step: usize, y: f64, x: f64, u: usize) -> f64;
}

type MarkovCoef = Arc<dyn Fn(usize, f64, f64, usize) -> f64 + Send + Sync>;

/// A [`MarkovProblem`] from closures.
#[derive(Clone)]
pub struct MarkovFn {
    controls: usize,
    drift: MarkovCoef,
    running: MarkovCoef,
}

impl MarkovFn {
    pub fn new<B, F>(controls: usize, drift: B, running: F) -> Self
    where
        B: Fn(usize, f64, f64, usize) -> f64 + Send + Sync + 'static,
        F: Fn(usize, f64, f64, usize) -> f64 + Send + Sync + 'static,
    {
        MarkovFn { controls, drift: Arc::new(drift), running: Arc::new(running) }
    }
}

impl MarkovProblem for MarkovFn {
    fn controls(&self) -> usize {
        self.controls
    }
    fn drift(&self, step: usize, y: f64, x: f64, u: usize) -> f64 {
        (self.drift)(step, y, x, u)
    }
    fn running(&self, step: usize, y: f64, x: f64, u: usize) -> f64 {
        (self.running)(step, y, x, u)
    }
}

/// Backward explicit scheme for
/// `−∂_t u = ½Δ_ỹ u + (δ²/2)Δ_x̃ u + min_u {β·∂_x̃ u + f}` from grid step `to`
/// down to `from`, with upwind first differences and zero-flux ghosts.
/// Returns the layers at steps `from..=to`; coefficients are frozen on each
/// grid step.
pub fn solve_hjb_slab(
    problem: &dyn MarkovProblem,
    grid: &PdeGrid,
    time: TimeGrid,
    delta: f64,
    from: usize,
    to: usize,
    terminal: Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let (ny, nx) = (grid.ny, grid.nx);
    if terminal.len() != ny * nx {
        return Err(Error::Dimension { expected: ny * nx, got: terminal.len() });
    }
    if from > to || to > time.steps() {
        return Err(Error::OutOfRange { index: to, limit: time.steps() });
    }
    let nu = problem.controls();
    if nu == 0 {
        return Err(Error::InvalidParameter("no controls".into()));
    }
    let (dx, dy) = (grid.dx(), grid.dy());
    let ys = grid.y_nodes();
    let xs = grid.x_nodes();
    let inv_y = if ny > 1 { 1.0 / (dy * dy) } else { 0.0 };
    let diff_x = delta * delta / (dx * dx);

    let mut layers = vec![terminal];
    for i in (from..to).rev() {
        let cells: Vec<(Vec<f64>, Vec<f64>)> = (0..ny * nx)
            .into_par_iter()
            .map(|idx| {
                let (y, x) = (ys[idx / nx], xs[idx % nx]);
                let b = (0..nu).map(|u| problem.drift(i, y, x, u)).collect();
                let f = (0..nu).map(|u| problem.running(i, y, x, u)).collect();
                (b, f)
            })
            .collect();
        let bmax = cells.iter().flat_map(|c| c.0.iter()).fold(0.0f64, |a, b| a.max(b.abs()));
        if !bmax.is_finite() || cells.iter().any(|c| c.1.iter().any(|f| !f.is_finite())) {
            return Err(Error::Numeric(format!("non-finite coefficients at step {i}")));
        }
        let rate = inv_y + diff_x + bmax / dx;
        let limit = if rate > 0.0 { 1.0 / rate } else { f64::INFINITY };
        let dt = time.dt();
        let steps = match grid.substeps {
            Some(k) => {
                let h = dt / k.max(1) as f64;
                if h > limit * (1.0 + 1e-12) {
                    return Err(Error::Cfl { dt: h, limit });
                }
                k.max(1)
            }
            None => (dt / (grid.cfl * limit)).ceil().max(1.0) as usize,
        };
        let h = dt / steps as f64;

        let mut u = layers.last().expect("layer").clone();
        let mut next = vec![0.0; ny * nx];
        for _ in 0..steps {
            next.par_chunks_mut(nx).enumerate().for_each(|(a, row)| {
                let up = if a + 1 < ny { a + 1 } else { a };
                let dn = if a > 0 { a - 1 } else { a };
                for (b, out) in row.iter_mut().enumerate() {
                    let c = u[a * nx + b];
                    let right = u[a * nx + (b + 1).min(nx - 1)];
                    let left = u[a * nx + b.saturating_sub(1)];
                    let uyy = if ny > 1 { (u[up * nx + b] - 2.0 * c + u[dn * nx + b]) * inv_y } else { 0.0 };
                    let uxx = (right - 2.0 * c + left) / (dx * dx);
                    let fwd = (right - c) / dx;
                    let bwd = (c - left) / dx;
                    let (bs, fs) = &cells[a * nx + b];
                    let mut ham = f64::INFINITY;
                    for (bv, fv) in bs.iter().zip(fs) {
                        let tr = if *bv > 0.0 { bv * fwd } else { bv * bwd };
                        ham = ham.min(tr + fv);
                    }
                    *out = c + h * (0.5 * uyy + 0.5 * delta * delta * uxx + ham);
                }
            });
            std::mem::swap(&mut u, &mut next);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("PDE blew up at step {i}")));
        }
        layers.push(u);
    }
    layers.reverse();
    Ok(layers)
}
