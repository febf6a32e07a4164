use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::NoiseTree;

/// `(Y, Z)` of a linear backward equation on the quantized tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSDESolution {
    /// `Y` indexed `[step][node]`, steps `0..=N`.
    pub y: Vec<Vec<f64>>,
    /// `Z` indexed `[step][node][component]`, steps `0..N`.
    pub z: Vec<Vec<Vec<f64>>>,
}

/// `Y_N = terminal`, `Y_n = E[Y_{n+1} | node] + driver_n·dt`, and
/// `Z_n = E[Y_{n+1}·ΔW | node] / dt`. With one noise component `Z` reproduces
/// the branch values exactly; with more it is the least-squares fit.
pub fn solve_linear_bsde(terminal: &[f64], driver: &[Vec<f64>], tree: &NoiseTree) -> Result<BSDESolution> {
    let n = tree.grid().steps();
    if terminal.len() != tree.nodes(n) {
        return Err(Error::Dimension { expected: tree.nodes(n), got: terminal.len() });
    }
    if driver.len() < n {
        return Err(Error::Dimension { expected: n, got: driver.len() });
    }
    for (i, row) in driver.iter().take(n).enumerate() {
        if row.len() != tree.nodes(i) {
            return Err(Error::Dimension { expected: tree.nodes(i), got: row.len() });
        }
    }
    let dt = tree.grid().dt();
    let b = tree.branches();
    let m = tree.dims();
    let incs: Vec<Vec<f64>> = (0..b).map(|k| tree.increment(k)).collect();

    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    y[n] = terminal.to_vec();
    for i in (0..n).rev() {
        let next = &y[i + 1];
        let mut yi = Vec::with_capacity(tree.nodes(i));
        let mut zi = Vec::with_capacity(tree.nodes(i));
        for node in 0..tree.nodes(i) {
            let kids = &next[node * b..(node + 1) * b];
            let mean = kids.iter().sum::<f64>() / b as f64;
            yi.push(mean + driver[i][node] * dt);
            zi.push(
                (0..m)
                    .map(|c| kids.iter().zip(&incs).map(|(v, inc)| v * inc[c]).sum::<f64>() / b as f64 / dt)
                    .collect(),
            );
        }
        y[i] = yi;
        z[i] = zi;
    }
    Ok(BSDESolution { y, z })
}
