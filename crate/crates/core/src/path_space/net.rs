//! Finite ε-net partition of a class lattice by ball subtraction.

use serde::{Deserialize, Serialize};

use super::{enumerate_class_lattice, sup_distance, GridPath, PathClassSpec};
use crate::error::{Error, Result};

/// Cells `D^j = B_{δ/3}(c_j) \ ∪_{i<j} B_{δ/3}(c_i)`; each has diameter at most
/// `2δ/3 < δ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetPartition {
    spec: PathClassSpec,
    delta: f64,
    centers: Vec<GridPath>,
}

impl NetPartition {
    pub fn spec(&self) -> &PathClassSpec {
        &self.spec
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn radius(&self) -> f64 {
        self.delta / 3.0
    }

    pub fn centers(&self) -> &[GridPath] {
        &self.centers
    }

    /// First center within `δ/3`, or `None` for paths outside every ball.
    pub fn assign(&self, x: &GridPath) -> Option<usize> {
        if x.anchor() != self.spec.end() || x.grid() != self.spec.base().grid() {
            return None;
        }
        let r = self.radius();
        self.centers.iter().position(|c| sup_distance(c, x) <= r)
    }

    /// Center whose ball is closest, for paths that may fall outside every ball.
    pub fn nearest(&self, x: &GridPath) -> (usize, f64) {
        self.centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sup_distance(c, x)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }
}

pub fn build_epsilon_net(spec: &PathClassSpec, delta: f64, levels: usize, cap: u128) -> Result<NetPartition> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let lattice = enumerate_class_lattice(spec, levels, cap)?;
    let r = delta / 3.0;
    let mut centers: Vec<GridPath> = Vec::new();
    for p in lattice {
        if !centers.iter().any(|c| sup_distance(c, &p) <= r) {
            centers.push(p);
        }
    }
    Ok(NetPartition { spec: spec.clone(), delta, centers })
}
