//! Cylinder approximation of the coefficients, a regularized Markovian HJB
//! equation solved slab by slab, linear BSDE envelopes on the tree and the
//! sandwich bounds they give for the value function.
//!
//! The PDE side is scalar: one state component and at most one noise component.

mod bsde;
mod cylinder;
mod errors;
mod field;
mod pde;
mod sandwich;

pub use bsde::{solve_linear_bsde, BSDESolution};
pub use cylinder::{build_cylinder_approximation, CylinderCoefficientSet};
pub use errors::{estimate_approx_error, ApproxErrorReport};
pub use field::{estimate_gradient_bound, solve_markovian_hjb, MarkovField};
pub use pde::{solve_hjb_slab, MarkovFn, MarkovProblem, PdeGrid};
pub use sandwich::{
    build_sandwich, compare_sandwich, sandwich_gap_study, GapRow, GapStudy, Sandwich, SandwichCheck, SandwichPoint,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_space::{euclid, GridPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    /// Number of partition cells `N_c`; must divide the grid's step count.
    pub partition: usize,
    pub target_eps: f64,
    /// Class bound `k` of the lattice the errors are measured on.
    pub k: f64,
    pub delta: f64,
    /// Projection level `M_p`: paths are held at the `2^M_p` dyadic points of `[0, T)`.
    pub levels: usize,
    pub width: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature: usize,
    #[serde(default = "default_lattice_levels")]
    pub lattice_levels: usize,
}

fn default_quadrature() -> usize {
    6
}

fn default_lattice_levels() -> usize {
    3
}

impl ApproxParams {
    pub fn new(partition: usize, target_eps: f64, k: f64, delta: f64, levels: usize, width: f64) -> Result<Self> {
        let p = ApproxParams {
            partition,
            target_eps,
            k,
            delta,
            levels,
            width,
            quadrature: default_quadrature(),
            lattice_levels: default_lattice_levels(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.partition == 0 {
            return bad("partition needs at least one cell".into());
        }
        if !(self.target_eps.is_finite() && self.target_eps > 0.0) {
            return bad(format!("target_eps must be positive, got {}", self.target_eps));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad(format!("class bound must be positive, got {}", self.k));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.width.is_finite() && self.width >= 0.0) {
            return bad(format!("mollifier width must be non-negative, got {}", self.width));
        }
        if self.quadrature == 0 || self.lattice_levels == 0 {
            return bad("quadrature and lattice levels must be positive".into());
        }
        Ok(())
    }
}

/// Spacing (in steps) between hold points at projection level `levels`.
pub(crate) fn hold_spacing(steps: usize, levels: usize) -> Result<usize> {
    let cells = 1usize.checked_shl(levels as u32).filter(|&c| c <= steps);
    match cells {
        Some(c) if steps % c == 0 => Ok(steps / c),
        _ => Err(Error::InvalidParameter(format!("{steps} steps do not split into 2^{levels} dyadic cells"))),
    }
}

/// `P^M x`: the path held at the dyadic points `n·T/2^M` below each node, with
/// the terminal value kept.
pub fn project_path(x: &GridPath, levels: usize) -> Result<GridPath> {
    let h = hold_spacing(x.grid().steps(), levels)?;
    let d = x.dim();
    let rows: Vec<Vec<f64>> = (0..=x.anchor())
        .map(|l| {
            let src = if l == x.anchor() { l } else { l / h * h };
            (0..d).map(|c| x.value(src, c)).collect()
        })
        .collect();
    Ok(GridPath::from_rows(x.grid(), &rows)?.into_cadlag())
}

/// Continuous-time sup distance between the piecewise-linear `x` and its
/// piecewise-constant projection.
pub fn projection_error(x: &GridPath, levels: usize) -> Result<f64> {
    let h = hold_spacing(x.grid().steps(), levels)?;
    let d = x.dim();
    let mut err = 0.0f64;
    for l in 1..=x.anchor() {
        let held = (l - 1) / h * h;
        err = err.max(euclid((0..d).map(|c| x.value(l, c) - x.value(held, c))));
    }
    Ok(err)
}
