use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::NoiseTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnellEnvelope {
    /// Reward `Y` indexed `[step][node]`.
    pub y: Vec<Vec<f64>>,
    /// Envelope `Z_n = max(Y_n, E[Z_{n+1} | node])`.
    pub z: Vec<Vec<f64>>,
    /// Whether `Z = Y` at the node.
    pub stop: Vec<Vec<bool>>,
    branches: usize,
    dims: usize,
}

impl SnellEnvelope {
    /// First step along the path to `leaf` where the envelope meets the reward.
    pub fn tau_star(&self, leaf: usize) -> usize {
        let n = self.y.len() - 1;
        (0..=n).find(|&i| self.stop[i][leaf >> (self.dims * (n - i))]).unwrap_or(n)
    }

    pub fn root(&self) -> f64 {
        self.z[0][0]
    }

    pub fn branches(&self) -> usize {
        self.branches
    }
}

/// Backward recursion for the smallest supermartingale above `y` on the tree.
pub fn snell_envelope(y: &[Vec<f64>], tree: &NoiseTree) -> Result<SnellEnvelope> {
    let n = tree.grid().steps();
    if y.len() != n + 1 {
        return Err(Error::Dimension { expected: n + 1, got: y.len() });
    }
    for (i, row) in y.iter().enumerate() {
        if row.len() != tree.nodes(i) {
            return Err(Error::Dimension { expected: tree.nodes(i), got: row.len() });
        }
    }
    let b = tree.branches();
    let mut z = vec![Vec::new(); n + 1];
    z[n] = y[n].clone();
    for i in (0..n).rev() {
        z[i] = y[i]
            .iter()
            .enumerate()
            .map(|(node, &r)| {
                let cont = z[i + 1][node * b..(node + 1) * b].iter().sum::<f64>() / b as f64;
                r.max(cont)
            })
            .collect();
    }
    let stop = y.iter().zip(&z).map(|(yr, zr)| yr.iter().zip(zr).map(|(a, b)| a == b).collect()).collect();
    Ok(SnellEnvelope { y: y.to_vec(), z, stop, branches: b, dims: tree.dims() })
}

/// Envelope at the top of a subtree whose rows hold `b^j` rewards at depth `j`;
/// `upper` takes the supremum over stopping times, otherwise the infimum.
pub(crate) fn subtree_envelope(rows: &[Vec<f64>], b: usize, upper: bool) -> f64 {
    let mut z = rows.last().expect("rows").clone();
    for row in rows[..rows.len() - 1].iter().rev() {
        z = row
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let cont = z[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64;
                if upper {
                    r.max(cont)
                } else {
                    r.min(cont)
                }
            })
            .collect();
    }
    z[0]
}
