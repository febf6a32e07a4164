//! The quantized walk as a tree: `2^m` equally likely branches per step, branch
//! `b` moving component `c` by `+√dt` when bit `c` of `b` is set and by `−√dt`
//! otherwise.
//!
//! Node ids at step `i` are base-`2^m` numbers whose leading digit is the first
//! branch, so `child = node·2^m + b`.

use crate::error::{Error, Result};
use crate::path_space::{GridPath, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseTree {
    grid: TimeGrid,
    dims: usize,
}

impl NoiseTree {
    pub fn new(grid: TimeGrid, dims: usize) -> Result<Self> {
        if dims > 16 {
            return Err(Error::InvalidParameter("at most 16 noise components".into()));
        }
        Ok(NoiseTree { grid, dims })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn branches(&self) -> usize {
        1 << self.dims
    }

    /// Number of nodes at `step`. Panics on overflow; callers check caps first.
    pub fn nodes(&self, step: usize) -> usize {
        let b = self.branches();
        (0..step).fold(1usize, |acc, _| acc.checked_mul(b).expect("tree too large"))
    }

    pub fn nodes_u128(&self, step: usize) -> u128 {
        crate::error::pow_sat(self.branches(), step)
    }

    pub fn increment(&self, b: usize) -> Vec<f64> {
        let s = self.grid.dt().sqrt();
        (0..self.dims).map(|c| if (b >> c) & 1 == 1 { s } else { -s }).collect()
    }

    pub fn child(&self, node: usize, b: usize) -> usize {
        node * self.branches() + b
    }

    pub fn parent(&self, node: usize) -> usize {
        node / self.branches()
    }

    /// Ancestor at step `at` of `node` at step `step`.
    pub fn ancestor(&self, node: usize, step: usize, at: usize) -> usize {
        debug_assert!(at <= step);
        node >> (self.dims * (step - at))
    }

    /// Branch taken from step `j` to `j + 1` on the way to `node` at `step`.
    pub fn branch_at(&self, node: usize, step: usize, j: usize) -> usize {
        self.ancestor(node, step, j + 1) & (self.branches() - 1)
    }

    pub fn root(&self) -> GridPath {
        GridPath::from_rows(self.grid, &[vec![0.0; self.dims]]).expect("root path")
    }

    /// The walk `W` on `0..=step` that ends at `node`.
    pub fn path(&self, step: usize, node: usize) -> Result<GridPath> {
        if step > self.grid.steps() {
            return Err(Error::OutOfRange { index: step, limit: self.grid.steps() });
        }
        let mut w = self.root();
        for j in 0..step {
            w = w.advanced(&self.increment(self.branch_at(node, step, j)))?;
        }
        Ok(w)
    }

    /// All walk paths at `step`, indexed by node.
    pub fn layer(&self, step: usize) -> Result<Vec<GridPath>> {
        let mut layer = vec![self.root()];
        for _ in 0..step {
            let mut next = Vec::with_capacity(layer.len() * self.branches());
            for w in &layer {
                for b in 0..self.branches() {
                    next.push(w.advanced(&self.increment(b))?);
                }
            }
            layer = next;
        }
        Ok(layer)
    }

    /// Node id of a walk path, read off the signs of its increments.
    pub fn node_of(&self, w: &GridPath) -> Result<usize> {
        if w.dim() != self.dims {
            return Err(Error::Dimension { expected: self.dims, got: w.dim() });
        }
        let mut node = 0;
        for j in 0..w.anchor() {
            let mut b = 0;
            for c in 0..self.dims {
                if w.value(j + 1, c) > w.value(j, c) {
                    b |= 1 << c;
                }
            }
            node = self.child(node, b);
        }
        Ok(node)
    }
}
