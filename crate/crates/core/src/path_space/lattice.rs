//! The compact classes `Λ^{0,k;ξ}_{t,s}` and their slope-lattice surrogate.

use serde::{Deserialize, Serialize};

use super::{euclid, GridPath};
use crate::error::{check_cap, pow_sat, Error, Result};

/// Continuous paths on `[0, s]` that agree with `base` up to its anchor `t` and
/// move with speed at most `k` afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathClassSpec {
    k: f64,
    base: GridPath,
    end: usize,
}

impl PathClassSpec {
    pub fn new(k: f64, base: GridPath, end: usize) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter(format!("class bound must be positive, got {k}")));
        }
        if end < base.anchor() || end > base.grid().steps() {
            return Err(Error::OutOfRange { index: end, limit: base.grid().steps() });
        }
        if !base.is_continuous() {
            return Err(Error::InvalidParameter("class prefix must be continuous".into()));
        }
        Ok(PathClassSpec { k, base, end })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn base(&self) -> &GridPath {
        &self.base
    }

    pub fn start(&self) -> usize {
        self.base.anchor()
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn steps(&self) -> usize {
        self.end - self.base.anchor()
    }
}

pub fn class_contains(spec: &PathClassSpec, x: &GridPath) -> bool {
    let base = &spec.base;
    if x.grid() != base.grid() || x.dim() != base.dim() || x.anchor() != spec.end || !x.is_continuous() {
        return false;
    }
    for i in 0..=spec.start() {
        if x.node(i) != base.node(i) {
            return false;
        }
    }
    let bound = spec.k * x.grid().dt();
    for i in spec.start()..spec.end {
        let step = euclid((0..x.dim()).map(|c| x.value(i + 1, c) - x.value(i, c)));
        let scale = 1.0 + euclid(x.node(i).iter().copied()) + euclid(x.node(i + 1).iter().copied());
        if step > bound + 1e-12 * scale {
            return false;
        }
    }
    true
}

/// The `levels`-point uniform grid of `[−k, k]`; the middle level is exactly 0.
pub(crate) fn slope_levels(k: f64, levels: usize) -> Result<Vec<f64>> {
    if levels == 0 || levels % 2 == 0 {
        return Err(Error::InvalidParameter(format!("lattice levels must be odd, got {levels}")));
    }
    if levels == 1 {
        return Ok(vec![0.0]);
    }
    let half = (levels - 1) as f64;
    Ok((0..levels)
        .map(|j| k * (2.0 * j as f64 - half) / half)
        .collect())
}

/// Every path of the class whose per-step slope vector lies on the `levels`-point
/// grid of `[−k/√d, k/√d]^d`, in lexicographic order (earliest step most
/// significant). The `1/√d` keeps corner slopes inside the Euclidean bound.
pub fn enumerate_class_lattice(spec: &PathClassSpec, levels: usize, cap: u128) -> Result<Vec<GridPath>> {
    let d = spec.base.dim();
    let per_component = if d > 1 { spec.k / (d as f64).sqrt() } else { spec.k };
    let slopes = slope_levels(per_component, levels)?;
    let per_step = pow_sat(levels, d);
    check_cap("class lattice", pow_sat(levels, d * spec.steps()), cap)?;
    let dt = spec.base.grid().dt();
    let moves: Vec<Vec<f64>> = (0..per_step as usize)
        .map(|mut idx| {
            let mut v = vec![0.0; d];
            for c in (0..d).rev() {
                v[c] = slopes[idx % levels] * dt;
                idx /= levels;
            }
            v
        })
        .collect();

    let mut layer = vec![spec.base.clone()];
    for _ in 0..spec.steps() {
        let mut next = Vec::with_capacity(layer.len() * moves.len());
        for p in &layer {
            for m in &moves {
                next.push(p.advanced(m)?);
            }
        }
        layer = next;
    }
    Ok(layer)
}
