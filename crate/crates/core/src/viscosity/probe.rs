use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::snell::subtree_envelope;
use super::{check_stopped, ls_slope, RandomField};
use crate::dynamics::euler_step;
use crate::error::{check_cap, pow_sat, Error, Result};
use crate::path_space::{enumerate_class_lattice, GridPath, PathClassSpec};
use crate::scenario::{NoiseTree, Scenario};

/// `φ − u ≤ 0` in the optimal-stopping sense (`Upper`) or `≥ 0` (`Lower`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TangencySide {
    Upper,
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tangency {
    pub side: TangencySide,
    pub member: bool,
    /// First horizon `τ̂ > τ` at which the envelope vanishes.
    pub tau_hat: Option<usize>,
    /// Constant added to `φ` so it meets `u` at `(τ, ξ)`.
    pub shift: f64,
    /// Envelope at `τ` for the window ending at `tau_hat`, or at `τ + 1` when
    /// there is none.
    pub envelope: f64,
}

const TOUCH_TOL: f64 = 1e-10;

/// Walks below `w` after `depth` more steps, ordered by node id.
fn descendants(tree: &NoiseTree, w: &GridPath, depth: usize) -> Result<Vec<GridPath>> {
    let mut layer = vec![w.clone()];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(layer.len() * tree.branches());
        for p in &layer {
            for b in 0..tree.branches() {
                next.push(p.advanced(&tree.increment(b))?);
            }
        }
        layer = next;
    }
    Ok(layer)
}

fn lattice(xi: &GridPath, k: f64, s: usize, levels: usize, cap: u128) -> Result<Vec<GridPath>> {
    enumerate_class_lattice(&PathClassSpec::new(k, xi.clone(), s)?, levels, cap)
}

/// Whether `φ`, shifted to meet `u` at `(τ, ξ)` along the noise path `w`,
/// touches `u` from the requested side: with
/// `S(s) = max (or min) over Λ^{0,k;ξ}_{τ,s} of (φ − u)(s, ·)`, the Snell
/// envelope of `S` on `[τ, τ̂]` vanishes at `τ` for some `τ̂ > τ`.
#[allow(clippy::too_many_arguments)]
pub fn test_tangency(
    phi: &dyn RandomField,
    u: &dyn RandomField,
    tau: usize,
    xi: &GridPath,
    w: &GridPath,
    k: f64,
    levels: usize,
    side: TangencySide,
    cap: u128,
) -> Result<Tangency> {
    check_stopped(tau, xi, w)?;
    let n = xi.grid().steps();
    if tau >= n {
        return Err(Error::OutOfRange { index: tau, limit: n - 1 });
    }
    let tree = NoiseTree::new(xi.grid(), w.dim())?;
    let shift = u.eval(tau, xi, w)? - phi.eval(tau, xi, w)?;
    let upper = side == TangencySide::Upper;
    let mut rows = vec![vec![0.0]];
    let mut first = None;
    for hat in tau + 1..=n {
        let depth = hat - tau;
        check_cap("tangency lattice", pow_sat(levels, depth).saturating_mul(tree.nodes_u128(depth)), cap)?;
        let paths = lattice(xi, k, hat, levels, cap)?;
        let walks = descendants(&tree, w, depth)?;
        let row = walks
            .par_iter()
            .map(|wd| {
                let mut ext = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
                for x in &paths {
                    let d = phi.eval(hat, x, wd)? + shift - u.eval(hat, x, wd)?;
                    ext = if upper { ext.max(d) } else { ext.min(d) };
                }
                Ok(ext)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        let env = subtree_envelope(&rows, tree.branches(), upper);
        first.get_or_insert(env);
        let touches = if upper { env <= TOUCH_TOL } else { env >= -TOUCH_TOL };
        if touches {
            return Ok(Tangency { side, member: true, tau_hat: Some(hat), shift, envelope: env });
        }
    }
    Ok(Tangency { side, member: false, tau_hat: None, shift, envelope: first.unwrap_or(0.0) })
}

/// Sub-solution probes take the infimum over each shell, super-solution
/// probes the supremum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeSide {
    Sub,
    Super,
}

impl ProbeSide {
    pub fn tangency(self) -> TangencySide {
        match self {
            ProbeSide::Sub => TangencySide::Upper,
            ProbeSide::Super => TangencySide::Lower,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub side: ProbeSide,
    pub tau: usize,
    pub k: f64,
    /// Shell margin closest to `τ`.
    pub margin: f64,
    /// `(step, margin)` for each shell `s > τ`.
    pub shell_margins: Vec<(usize, f64)>,
    /// Least-squares slope of the shell margins against `t_s − t_τ`.
    pub trend_slope: f64,
    pub tau_hat: usize,
}

impl ProbeReport {
    /// `margin ≤ tol` on the sub side, `margin ≥ −tol` on the super side.
    pub fn holds(&self, tol: f64) -> bool {
        match self.side {
            ProbeSide::Sub => self.margin <= tol,
            ProbeSide::Super => self.margin >= -tol,
        }
    }
}

/// `−𝔡_s φ − H(s, x, φ)` at one point. The Hamiltonian is
/// `min_v { f + (E φ(s+1, x ⊕ β·dt) − E φ(s+1, x_{s,1}))/dt }`: the vertical
/// derivative along `β` taken as the difference under the jump `β·dt` of the
/// frozen extension.
fn pointwise(phi: &dyn RandomField, s: &Scenario, tree: &NoiseTree, i: usize, x: &GridPath, w: &GridPath) -> Result<f64> {
    let dt = s.grid().dt();
    let b = tree.branches();
    let kids: Vec<GridPath> = (0..b).map(|k| w.advanced(&tree.increment(k))).collect::<Result<_>>()?;
    let mean_at = |p: &GridPath| -> Result<f64> {
        Ok(kids.iter().map(|wk| phi.eval(i + 1, p, wk)).sum::<Result<f64>>()? / b as f64)
    };
    let frozen = mean_at(&x.horizontal_extension(1)?)?;
    let time_part = (frozen - phi.eval(i, x, w)?) / dt;
    let c = s.coefficients();
    let mut ham = f64::INFINITY;
    for ui in 0..s.controls().len() {
        let moved = mean_at(&euler_step(s, i, x, w, ui)?)?;
        ham = ham.min(c.running_cost(i, x, w, s.controls().point(ui)) + (moved - frozen) / dt);
    }
    Ok(-time_part - ham)
}

/// Signed margin of the viscosity inequality for the test field `phi` at
/// `(τ, ξ)` on the noise node `node`, after checking that `phi` touches `u`
/// from the matching side. Each shell `s = τ+1, …` averages the pointwise
/// quantity over the noise nodes below `node` and takes the infimum (sub) or
/// supremum (super) over the lattice `Λ^{0,k;ξ}_{τ,s}`.
#[allow(clippy::too_many_arguments)]
pub fn viscosity_probe(
    u: &dyn RandomField,
    s: &Scenario,
    phi: &dyn RandomField,
    tau: usize,
    xi: &GridPath,
    node: usize,
    k: f64,
    levels: usize,
    side: ProbeSide,
    shells: usize,
    cap: u128,
) -> Result<ProbeReport> {
    let n = s.grid().steps();
    if tau + 2 > n {
        return Err(Error::InvalidParameter(format!("probes need tau ≤ {}", n.saturating_sub(2))));
    }
    if shells == 0 {
        return Err(Error::InvalidParameter("at least one shell".into()));
    }
    let tree = s.tree();
    let w = tree.path(tau, node)?;
    let t = test_tangency(phi, u, tau, xi, &w, k, levels, side.tangency(), cap)?;
    if !t.member {
        return Err(Error::NotTangent);
    }
    let last = (tau + shells).min(n - 1);
    let mut shell_margins = Vec::new();
    for sh in tau + 1..=last {
        let depth = sh - tau;
        check_cap("probe shell", pow_sat(levels, depth).saturating_mul(tree.nodes_u128(depth)), cap)?;
        let paths = lattice(xi, k, sh, levels, cap)?;
        let walks = descendants(&tree, &w, depth)?;
        let vals = paths
            .par_iter()
            .map(|x| {
                let total = walks.iter().map(|wd| pointwise(phi, s, &tree, sh, x, wd)).sum::<Result<f64>>()?;
                Ok(total / walks.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let m = match side {
            ProbeSide::Sub => vals.iter().copied().fold(f64::INFINITY, f64::min),
            ProbeSide::Super => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        if !m.is_finite() {
            return Err(Error::Numeric(format!("non-finite probe margin at step {sh}")));
        }
        shell_margins.push((sh, m));
    }
    let g = s.grid();
    let pts: Vec<(f64, f64)> = shell_margins.iter().map(|&(sh, m)| (g.time(sh) - g.time(tau), m)).collect();
    Ok(ProbeReport {
        side,
        tau,
        k,
        margin: shell_margins[0].1,
        trend_slope: if pts.len() > 1 { ls_slope(&pts) } else { 0.0 },
        shell_margins,
        tau_hat: t.tau_hat.expect("member"),
    })
}

/// One row per probe: `tau,xi_id,k,side,margin,shells,trend_slope`.
pub fn write_probe_csv<W: Write>(rows: &[(usize, ProbeReport)], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["tau", "xi_id", "k", "side", "margin", "shells", "trend_slope"])?;
    for (id, r) in rows {
        let side = match r.side {
            ProbeSide::Sub => "sub",
            ProbeSide::Super => "super",
        };
        wr.write_record([
            r.tau.to_string(),
            id.to_string(),
            r.k.to_string(),
            side.to_string(),
            format!("{:.17e}", r.margin),
            r.shell_margins.len().to_string(),
            format!("{:.17e}", r.trend_slope),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
