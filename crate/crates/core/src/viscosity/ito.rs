use rayon::prelude::*;

use super::{check_stopped, ls_slope, vertical_gradient, DifferenceMode, RandomField};
use crate::dynamics::{integrate_state, ControlPolicy};
use crate::error::{Error, Result};
use crate::path_space::GridPath;
use crate::scenario::{NoiseTree, Scenario};

/// Discrete Itô decomposition of `n ↦ u(t_n, x_{r, n−r}, W)` on the tree, where
/// `x_{r, n−r}` is `x_r` held constant after `t_r`:
/// `u_{n+1} − u_n = dt_part·dt + dw_part·ΔW + orth`. The remainder `orth` is
/// orthogonal to `1` and `ΔW` and vanishes for a single noise component.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoDecomposition {
    pub start: usize,
    pub path: GridPath,
    /// `u` indexed `[n − start][node]`, `n = start..=N`.
    pub values: Vec<Vec<f64>>,
    dt_part: Vec<Vec<f64>>,
    dw_part: Vec<Vec<Vec<f64>>>,
    /// Indexed `[n − start][node][branch]`.
    orth: Vec<Vec<Vec<f64>>>,
    tree: NoiseTree,
}

impl ItoDecomposition {
    pub fn dt_part(&self, n: usize, node: usize) -> f64 {
        self.dt_part[n - self.start][node]
    }

    pub fn dw_part(&self, n: usize, node: usize) -> &[f64] {
        &self.dw_part[n - self.start][node]
    }

    pub fn orth(&self, n: usize, node: usize) -> &[f64] {
        &self.orth[n - self.start][node]
    }

    pub fn tree(&self) -> NoiseTree {
        self.tree
    }

    pub fn max_orthogonal(&self) -> f64 {
        self.orth.iter().flatten().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Largest difference between the `dt` and `dW` parts of two decompositions.
    pub fn max_difference(&self, other: &ItoDecomposition) -> f64 {
        let a = self.dt_part.iter().flatten().zip(other.dt_part.iter().flatten());
        let b = self.dw_part.iter().flatten().flatten().zip(other.dw_part.iter().flatten().flatten());
        a.chain(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }
}

fn tabulate(u: &dyn RandomField, r: usize, xr: &GridPath, tree: &NoiseTree) -> Result<Vec<Vec<f64>>> {
    let g = tree.grid();
    if xr.grid() != g {
        return Err(Error::GridMismatch);
    }
    if xr.anchor() != r {
        return Err(Error::InvalidParameter(format!("path ends at {}, expected {r}", xr.anchor())));
    }
    (r..=g.steps())
        .map(|n| {
            let x = xr.horizontal_extension(n - r)?;
            tree.layer(n)?.par_iter().map(|w| u.eval(n, &x, w)).collect()
        })
        .collect()
}

fn decompose(u: &dyn RandomField, r: usize, xr: &GridPath, tree: &NoiseTree, drift_first: bool) -> Result<ItoDecomposition> {
    let values = tabulate(u, r, xr, tree)?;
    let n = tree.grid().steps();
    let dt = tree.grid().dt();
    let b = tree.branches();
    let m = tree.dims();
    let incs: Vec<Vec<f64>> = (0..b).map(|k| tree.increment(k)).collect();
    let mut dt_part = Vec::with_capacity(n - r);
    let mut dw_part = Vec::with_capacity(n - r);
    let mut orth = Vec::with_capacity(n - r);
    for i in r..n {
        let (cur, next) = (&values[i - r], &values[i + 1 - r]);
        let mut rows = (Vec::new(), Vec::new(), Vec::new());
        for (node, &u0) in cur.iter().enumerate() {
            let kids = &next[node * b..(node + 1) * b];
            let mean = kids.iter().sum::<f64>() / b as f64;
            let (a, z, o): (f64, Vec<f64>, Vec<f64>) = if drift_first {
                let a = (mean - u0) / dt;
                let z: Vec<f64> = (0..m)
                    .map(|c| kids.iter().zip(&incs).map(|(k, inc)| (k - mean) * inc[c]).sum::<f64>() / b as f64 / dt)
                    .collect();
                let o = kids.iter().zip(&incs).map(|(k, inc)| k - mean - dot(&z, inc)).collect();
                (a, z, o)
            } else {
                let z: Vec<f64> = (0..m)
                    .map(|c| kids.iter().zip(&incs).map(|(k, inc)| k * inc[c]).sum::<f64>() / b as f64 / dt)
                    .collect();
                let a = kids.iter().zip(&incs).map(|(k, inc)| k - dot(&z, inc) - u0).sum::<f64>() / b as f64 / dt;
                let o = kids.iter().zip(&incs).map(|(k, inc)| k - u0 - a * dt - dot(&z, inc)).collect();
                (a, z, o)
            };
            rows.0.push(a);
            rows.1.push(z);
            rows.2.push(o);
        }
        dt_part.push(rows.0);
        dw_part.push(rows.1);
        orth.push(rows.2);
    }
    Ok(ItoDecomposition { start: r, path: xr.clone(), values, dt_part, dw_part, orth, tree: *tree })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Drift part first as `(E[u_{n+1}] − u_n)/dt`, then the `dW` part from the
/// centred increments.
pub fn ito_decompose(u: &dyn RandomField, r: usize, xr: &GridPath, tree: &NoiseTree) -> Result<ItoDecomposition> {
    decompose(u, r, xr, tree, true)
}

/// `dW` part first as `E[u_{n+1}·ΔW]/dt`, then the drift part from what remains.
pub fn ito_decompose_martingale_first(
    u: &dyn RandomField,
    r: usize,
    xr: &GridPath,
    tree: &NoiseTree,
) -> Result<ItoDecomposition> {
    decompose(u, r, xr, tree, false)
}

/// Largest `|u_τ − u_r − Σ (dt_part·dt + dw_part·ΔW + orth)|` over every
/// node at every step `τ ≥ r`.
pub fn reconstruction_residual(dec: &ItoDecomposition) -> f64 {
    let tree = dec.tree;
    let n = tree.grid().steps();
    let r = dec.start;
    let dt = tree.grid().dt();
    let incs: Vec<Vec<f64>> = (0..tree.branches()).map(|k| tree.increment(k)).collect();
    let mut worst = 0.0f64;
    for tau in r..=n {
        for (node, &ut) in dec.values[tau - r].iter().enumerate() {
            let mut acc = 0.0;
            for i in r..tau {
                let anc = tree.ancestor(node, tau, i);
                let b = tree.branch_at(node, tau, i);
                acc += dec.dt_part[i - r][anc] * dt + dot(&dec.dw_part[i - r][anc], &incs[b]) + dec.orth[i - r][anc][b];
            }
            let u0 = dec.values[0][tree.ancestor(node, tau, r)];
            worst = worst.max((ut - u0 - acc).abs());
        }
    }
    worst
}

/// `(E[u(t_{i+1}, x_{i,1}, W ⊕ ΔW)] − u(t_i, x, W))/dt` and the `dW` part at
/// one node, along the frozen extension.
fn local_parts(u: &dyn RandomField, tree: &NoiseTree, i: usize, x: &GridPath, w: &GridPath) -> Result<(f64, Vec<f64>)> {
    let dt = tree.grid().dt();
    let b = tree.branches();
    let ext = x.horizontal_extension(1)?;
    let incs: Vec<Vec<f64>> = (0..b).map(|k| tree.increment(k)).collect();
    let kids: Vec<f64> = incs.iter().map(|inc| u.eval(i + 1, &ext, &w.advanced(inc)?)).collect::<Result<_>>()?;
    let mean = kids.iter().sum::<f64>() / b as f64;
    let z = (0..tree.dims())
        .map(|c| kids.iter().zip(&incs).map(|(k, inc)| (k - mean) * inc[c]).sum::<f64>() / b as f64 / dt)
        .collect();
    Ok(((mean - u.eval(i, x, w)?) / dt, z))
}

/// `𝓛^v u = 𝔡_t u + β(t_i, x, W, v)·∇u` at one point, with the time part taken
/// along the frozen extension and a centred vertical gradient of step `h`.
pub fn apply_generator(
    u: &dyn RandomField,
    s: &Scenario,
    i: usize,
    x: &GridPath,
    w: &GridPath,
    v: &[f64],
    h: f64,
) -> Result<f64> {
    check_stopped(i, x, w)?;
    if i >= s.grid().steps() {
        return Err(Error::OutOfRange { index: i, limit: s.grid().steps() - 1 });
    }
    let (a, _) = local_parts(u, &s.tree(), i, x, w)?;
    let grad = vertical_gradient(u, i, x, w, h, DifferenceMode::Centered)?;
    let beta = s.coefficients().drift(i, x, w, v);
    Ok(a + dot(&beta, &grad))
}

/// `|u(τ, X_τ) − u(ρ, x_ρ) − Σ 𝓛^{θ_n} u·dt − Σ dw_part·ΔW_n|` along the state
/// driven by `pol` and the realized `noise` from `x_rho`.
#[allow(clippy::too_many_arguments)]
pub fn ito_kunita_residual(
    u: &dyn RandomField,
    s: &Scenario,
    pol: &ControlPolicy,
    noise: &GridPath,
    rho: usize,
    tau: usize,
    x_rho: &GridPath,
    h: f64,
) -> Result<f64> {
    let n = s.grid().steps();
    if rho > tau || tau > n {
        return Err(Error::InvalidParameter(format!("need rho ≤ tau ≤ {n}, got [{rho}, {tau}]")));
    }
    if let Some(bp) = u.breakpoints() {
        if !bp.windows(2).any(|c| c[0] <= rho && tau <= c[1]) {
            return Err(Error::CellStraddle { rho, tau });
        }
    }
    let tr = integrate_state(s, pol, noise, rho, x_rho)?;
    let tree = s.tree();
    let dt = s.grid().dt();
    let mut acc = 0.0;
    for i in rho..tau {
        let xi = tr.path.truncate(i)?;
        let wi = noise.truncate(i)?;
        let v = s.controls().point(tr.controls[i - rho]);
        let (a, z) = local_parts(u, &tree, i, &xi, &wi)?;
        let grad = vertical_gradient(u, i, &xi, &wi, h, DifferenceMode::Centered)?;
        let beta = s.coefficients().drift(i, &xi, &wi, v);
        let dw: Vec<f64> = (0..tree.dims()).map(|c| noise.value(i + 1, c) - noise.value(i, c)).collect();
        acc += (a + dot(&beta, &grad)) * dt + dot(&z, &dw);
    }
    let end = u.eval(tau, &tr.path.truncate(tau)?, &noise.truncate(tau)?)?;
    let start = u.eval(rho, x_rho, &noise.truncate(rho)?)?;
    Ok((end - start - acc).abs())
}

/// Least-squares slope of `log₂ residual` against `log₂ dt` for a refinement
/// sequence that halves `dt` at each entry.
pub fn refinement_slope(residuals: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        residuals.iter().enumerate().map(|(k, r)| (-(k as f64), r.max(f64::MIN_POSITIVE).log2())).collect();
    ls_slope(&pts)
}
