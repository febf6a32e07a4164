//! Paths on a uniform time grid: the spaces of stopped paths, the quasi-norm
//! `‖·‖₀`, the metric `d0`, and the horizontal / vertical path operations.
//!
//! A path is stored by its node values only. Continuous paths are read
//! piecewise-linearly and càdlàg paths piecewise-constantly; every operation
//! here looks at node times only.

mod io;
mod lattice;
mod net;

pub use io::{read_path_csv, write_path_csv};
pub use lattice::{class_contains, enumerate_class_lattice, PathClassSpec};
pub use net::{build_epsilon_net, NetPartition};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_i = i·T/N`, `i = 0..=N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.steps as f64
    }

    /// Same horizon with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        TimeGrid::new(self.horizon, self.steps * factor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    #[serde(rename = "continuous_piecewise_linear")]
    Continuous,
    #[serde(rename = "cadlag_piecewise_constant")]
    Cadlag,
}

/// A stopped path `x_t`: node values on `0..=anchor` plus a pending vertical
/// jump at the anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    grid: TimeGrid,
    dim: usize,
    anchor: usize,
    values: Vec<f64>,
    jump: Vec<f64>,
    regularity: Regularity,
}

pub(crate) fn euclid(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|a| a * a).sum::<f64>().sqrt()
}

impl GridPath {
    /// Continuous path from node rows; the anchor is the last row.
    pub fn from_rows(grid: TimeGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = match rows.first() {
            Some(r) => r.len(),
            None => return Err(Error::InvalidParameter("path needs at least one node".into())),
        };
        if rows.len() > grid.steps() + 1 {
            return Err(Error::OutOfRange { index: rows.len() - 1, limit: grid.steps() });
        }
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension { expected: dim, got: r.len() });
            }
            values.extend_from_slice(r);
        }
        Ok(GridPath {
            grid,
            dim,
            anchor: rows.len() - 1,
            values,
            jump: vec![0.0; dim],
            regularity: Regularity::Continuous,
        })
    }

    /// One-dimensional continuous path.
    pub fn scalar(grid: TimeGrid, values: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        GridPath::from_rows(grid, &rows)
    }

    pub fn constant(grid: TimeGrid, point: &[f64], anchor: usize) -> Result<Self> {
        if anchor > grid.steps() {
            return Err(Error::OutOfRange { index: anchor, limit: grid.steps() });
        }
        GridPath::from_rows(grid, &vec![point.to_vec(); anchor + 1])
    }

    /// Marks the stored nodes as piecewise-constant.
    pub fn into_cadlag(mut self) -> Self {
        self.regularity = Regularity::Cadlag;
        self
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn time(&self) -> f64 {
        self.grid.time(self.anchor)
    }

    /// Stored node value, without the pending jump.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// `x(t_i)` component `c`, with the jump included at the anchor.
    pub fn value(&self, i: usize, c: usize) -> f64 {
        let v = self.values[i * self.dim + c];
        if i == self.anchor {
            v + self.jump[c]
        } else {
            v
        }
    }

    /// `x(t_i ∧ t)`: the path read as frozen after its anchor.
    pub fn frozen_value(&self, i: usize, c: usize) -> f64 {
        self.value(i.min(self.anchor), c)
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        (0..self.dim).map(|c| self.value(i, c)).collect()
    }

    /// `x(t)` at the anchor, jump included.
    pub fn terminal(&self) -> Vec<f64> {
        self.point(self.anchor)
    }

    pub fn terminal_jump(&self) -> &[f64] {
        &self.jump
    }

    pub fn regularity(&self) -> Regularity {
        if self.jump.iter().any(|&h| h != 0.0) {
            Regularity::Cadlag
        } else {
            self.regularity
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.regularity() == Regularity::Continuous
    }

    fn absorb_jump(&mut self) {
        if self.jump.iter().any(|&h| h != 0.0) {
            let base = self.anchor * self.dim;
            for c in 0..self.dim {
                self.values[base + c] += self.jump[c];
                self.jump[c] = 0.0;
            }
            self.regularity = Regularity::Cadlag;
        }
    }

    /// Appends the next node, absorbing any pending jump first.
    pub fn push(&mut self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: point.len() });
        }
        if self.anchor == self.grid.steps() {
            return Err(Error::OutOfRange { index: self.anchor + 1, limit: self.grid.steps() });
        }
        self.absorb_jump();
        self.values.extend_from_slice(point);
        self.anchor += 1;
        Ok(())
    }

    /// Next path `x ⊕ increment`: a new node at `x(t) + increment`.
    pub fn advanced(&self, increment: &[f64]) -> Result<GridPath> {
        if increment.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: increment.len() });
        }
        let next: Vec<f64> = (0..self.dim).map(|c| self.value(self.anchor, c) + increment[c]).collect();
        let mut out = self.clone();
        out.push(&next)?;
        Ok(out)
    }

    /// Restriction `x_{t_i}` for `i ≤ anchor`.
    pub fn truncate(&self, i: usize) -> Result<GridPath> {
        if i > self.anchor {
            return Err(Error::OutOfRange { index: i, limit: self.anchor });
        }
        if i == self.anchor {
            return Ok(self.clone());
        }
        Ok(GridPath {
            grid: self.grid,
            dim: self.dim,
            anchor: i,
            values: self.values[..(i + 1) * self.dim].to_vec(),
            jump: vec![0.0; self.dim],
            regularity: self.regularity,
        })
    }

    pub fn horizontal_extension(&self, extra: usize) -> Result<GridPath> {
        if self.anchor + extra > self.grid.steps() {
            return Err(Error::OutOfRange { index: self.anchor + extra, limit: self.grid.steps() });
        }
        if extra == 0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.absorb_jump();
        let last = out.node(out.anchor).to_vec();
        for _ in 0..extra {
            out.values.extend_from_slice(&last);
        }
        out.anchor += extra;
        Ok(out)
    }

    pub fn vertical_perturbation(&self, h: &[f64]) -> Result<GridPath> {
        if h.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: h.len() });
        }
        let mut out = self.clone();
        for c in 0..self.dim {
            out.jump[c] += h[c];
        }
        Ok(out)
    }

    /// Node-wise `self + a·other` on a common anchor (jumps combine too).
    pub fn combine(&self, a: f64, other: &GridPath) -> Result<GridPath> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.dim != other.dim {
            return Err(Error::Dimension { expected: self.dim, got: other.dim });
        }
        if self.anchor != other.anchor {
            return Err(Error::InvalidParameter("paths must share an anchor".into()));
        }
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v += a * w;
        }
        for (v, w) in out.jump.iter_mut().zip(&other.jump) {
            *v += a * w;
        }
        if other.regularity == Regularity::Cadlag {
            out.regularity = Regularity::Cadlag;
        }
        Ok(out)
    }

    /// Every node moved by the same vector `h`.
    pub fn translated(&self, h: &[f64]) -> GridPath {
        let mut out = self.clone();
        for (j, v) in out.values.iter_mut().enumerate() {
            *v += h[j % self.dim];
        }
        out
    }

    /// Exact identity key: anchor plus the bit patterns of all effective values.
    pub fn key(&self) -> Vec<u64> {
        let mut k = Vec::with_capacity(1 + self.values.len());
        k.push(self.anchor as u64);
        for i in 0..=self.anchor {
            for c in 0..self.dim {
                k.push((self.value(i, c) + 0.0).to_bits());
            }
        }
        k
    }

    /// `max_i ‖x(t_i)‖`, jump included.
    pub fn sup_norm(&self) -> f64 {
        (0..=self.anchor)
            .map(|i| euclid((0..self.dim).map(|c| self.value(i, c))))
            .fold(0.0, f64::max)
    }
}

pub fn sup_norm(x: &GridPath) -> f64 {
    x.sup_norm()
}

pub fn horizontal_extension(x: &GridPath, extra: usize) -> Result<GridPath> {
    x.horizontal_extension(extra)
}

pub fn vertical_perturbation(x: &GridPath, h: &[f64]) -> Result<GridPath> {
    x.vertical_perturbation(h)
}

/// `d0(x_r, y_t) = √|t − r| + sup_s |x(s ∧ r) − y(s)|` with the shorter path
/// frozen at its anchor value.
pub fn d0(x: &GridPath, y: &GridPath) -> Result<f64> {
    if x.grid != y.grid {
        return Err(Error::GridMismatch);
    }
    if x.dim != y.dim {
        return Err(Error::Dimension { expected: x.dim, got: y.dim });
    }
    let (a, b) = if x.anchor <= y.anchor { (x, y) } else { (y, x) };
    let gap = (a.grid.time(b.anchor) - a.grid.time(a.anchor)).abs().sqrt();
    Ok(gap + sup_distance(a, b))
}

/// `sup_i |x(t_i ∧ r) − y(t_i)|` over the nodes of the longer path.
pub(crate) fn sup_distance(a: &GridPath, b: &GridPath) -> f64 {
    let mut sup = 0.0f64;
    for i in 0..=b.anchor {
        let d = euclid((0..a.dim).map(|c| a.frozen_value(i, c) - b.value(i, c)));
        sup = sup.max(d);
    }
    sup
}
