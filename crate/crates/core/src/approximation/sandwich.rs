use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_cylinder_approximation, estimate_approx_error, estimate_gradient_bound, solve_linear_bsde,
    solve_markovian_hjb, ApproxErrorReport, ApproxParams, BSDESolution, MarkovField, PdeGrid,
};
use crate::control_value::{DPConfig, ValueTable};
use crate::error::{Error, Result};
use crate::path_space::{enumerate_class_lattice, GridPath, PathClassSpec};
use crate::scenario::{NoiseTree, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichPoint {
    pub step: usize,
    pub w_node: usize,
    pub b_node: usize,
    pub path: GridPath,
    /// `V^ε(t_i, (x − δB)_{t_i})`.
    pub center: f64,
    pub upper: f64,
    pub lower: f64,
}

/// Upper and lower envelopes on the class lattice of the enlarged tree
/// (noise node × auxiliary node).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub points: Vec<SandwichPoint>,
    pub delta: f64,
    pub lc: f64,
    pub c1: f64,
    pub c2: f64,
    /// Error envelope `Y_k^ε` on the noise tree.
    pub y: BSDESolution,
    /// Auxiliary envelope `y` on the tree of `B`.
    pub yb: BSDESolution,
}

/// `V̄ = V^ε(x − δB) + Y_k^ε + δ·C_2·y` and `V̲ = V^ε(x − δB) − Y_k^ε − δ·C_2·y`
/// at every lattice path of `Λ^{0,k}` from the initial point, every noise node
/// and every node of the auxiliary walk `aux`.
pub fn build_sandwich(
    field: &MarkovField,
    s: &Scenario,
    p: &ApproxParams,
    errors: &ApproxErrorReport,
    aux: &NoiseTree,
) -> Result<Sandwich> {
    let grid = s.grid();
    let n = grid.steps();
    if aux.grid() != grid || field.cylinder().source().grid() != grid {
        return Err(Error::GridMismatch);
    }
    if aux.dims() != s.state_dim() {
        return Err(Error::Dimension { expected: s.state_dim(), got: aux.dims() });
    }
    if field.delta() != p.delta {
        return Err(Error::InvalidParameter("field was solved for another delta".into()));
    }
    let tree = s.tree();
    if errors.drift.len() != n || errors.terminal.len() != tree.nodes(n) {
        return Err(Error::InvalidParameter("error report does not match the noise tree".into()));
    }

    let mut jobs = Vec::new();
    for i in 0..=n {
        let spec = PathClassSpec::new(p.k, s.initial().clone(), i)?;
        let paths = enumerate_class_lattice(&spec, p.lattice_levels, 1 << 24)?;
        let walks = tree.layer(i)?;
        let bs = aux.layer(i)?;
        for x in &paths {
            for (wn, w) in walks.iter().enumerate() {
                for (bn, b) in bs.iter().enumerate() {
                    jobs.push((i, wn, bn, x.clone(), w.clone(), b.clone()));
                }
            }
        }
    }
    let centers: Vec<f64> = jobs
        .par_iter()
        .map(|(i, _, _, x, w, b)| field.value(*i, &x.combine(-p.delta, b)?, w))
        .collect::<Result<_>>()?;

    // the gradient bound covers every slab used above
    let c1 = estimate_gradient_bound(field);
    let lc = s.coefficients().lipschitz();
    let c2 = 4.0 * lc * (c1 + 1.0);
    let driver: Vec<Vec<f64>> = (0..n)
        .map(|i| errors.running[i].iter().zip(&errors.drift[i]).map(|(f, b)| f + c1 * b).collect())
        .collect();
    let y = solve_linear_bsde(&errors.terminal, &driver, &tree)?;
    let bnorm: Vec<Vec<f64>> = (0..=n).map(|i| Ok(aux.layer(i)?.iter().map(|b| b.sup_norm()).collect())).collect::<Result<_>>()?;
    let yb = solve_linear_bsde(&bnorm[n], &bnorm[..n], aux)?;

    let points = jobs
        .into_iter()
        .zip(centers)
        .map(|((i, wn, bn, x, _, _), c)| {
            let env = y.y[i][wn] + p.delta * c2 * yb.y[i][bn];
            SandwichPoint { step: i, w_node: wn, b_node: bn, path: x, center: c, upper: c + env, lower: c - env }
        })
        .collect();
    Ok(Sandwich { points, delta: p.delta, lc, c1, c2, y, yb })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub points: usize,
    /// `max (V̄ − V)`.
    pub max_upper_gap: f64,
    /// `max (V − V̲)`.
    pub max_lower_gap: f64,
    /// `min (V̄ − V)`, negative when the upper envelope is violated.
    pub min_upper_margin: f64,
    pub min_lower_margin: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Compares the envelopes with the value table at every sandwich point.
pub fn compare_sandwich(sw: &Sandwich, tbl: &ValueTable, s: &Scenario, tol: f64) -> Result<SandwichCheck> {
    let mut uniq: HashMap<(usize, usize, Vec<u64>), usize> = HashMap::new();
    let mut queries = Vec::new();
    let idx: Vec<usize> = sw
        .points
        .iter()
        .map(|p| {
            let key = (p.step, p.w_node, p.path.key());
            *uniq.entry(key).or_insert_with(|| {
                queries.push((p.step, p.w_node, &p.path));
                queries.len() - 1
            })
        })
        .collect();
    let values: Vec<f64> =
        queries.par_iter().map(|(i, wn, x)| tbl.value_at(s, *i, *wn, x)).collect::<Result<_>>()?;

    let mut chk = SandwichCheck {
        points: sw.points.len(),
        max_upper_gap: f64::NEG_INFINITY,
        max_lower_gap: f64::NEG_INFINITY,
        min_upper_margin: f64::INFINITY,
        min_lower_margin: f64::INFINITY,
        violations: 0,
        pass: true,
    };
    for (p, &q) in sw.points.iter().zip(&idx) {
        let v = values[q];
        let (up, lo) = (p.upper - v, v - p.lower);
        chk.max_upper_gap = chk.max_upper_gap.max(up);
        chk.max_lower_gap = chk.max_lower_gap.max(lo);
        chk.min_upper_margin = chk.min_upper_margin.min(up);
        chk.min_lower_margin = chk.min_lower_margin.min(lo);
        if up < -tol || lo < -tol {
            chk.violations += 1;
        }
    }
    chk.pass = chk.violations == 0;
    Ok(chk)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub eps: f64,
    pub delta: f64,
    pub k: f64,
    pub combined_error: f64,
    pub c1: f64,
    pub max_upper_gap: f64,
    pub max_lower_gap: f64,
    pub gap: f64,
    /// `gap / (ε(1 + k) + δ)`.
    pub fitted_constant: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub rows: Vec<GapRow>,
    /// Largest over smallest fitted constant.
    pub band_ratio: f64,
    /// Whether the gap drops from each setting to the next.
    pub decreasing: bool,
}

/// Builds the sandwich for each setting and measures its gap to the value table.
pub fn sandwich_gap_study(
    s: &Scenario,
    tbl: &ValueTable,
    settings: &[ApproxParams],
    grid: &PdeGrid,
    cfg: &DPConfig,
) -> Result<GapStudy> {
    if settings.is_empty() {
        return Err(Error::InvalidParameter("no settings".into()));
    }
    let aux = NoiseTree::new(s.grid(), s.state_dim())?;
    let mut rows = Vec::with_capacity(settings.len());
    for p in settings {
        let cyl = build_cylinder_approximation(s, p)?;
        let errors = estimate_approx_error(s, &cyl, p.k, p.lattice_levels, cfg.cap)?;
        let field = solve_markovian_hjb(&cyl, p, grid)?;
        let sw = build_sandwich(&field, s, p, &errors, &aux)?;
        let chk = compare_sandwich(&sw, tbl, s, 1e-8)?;
        let gap = chk.max_upper_gap.max(chk.max_lower_gap);
        rows.push(GapRow {
            eps: p.target_eps,
            delta: p.delta,
            k: p.k,
            combined_error: errors.combined,
            c1: sw.c1,
            max_upper_gap: chk.max_upper_gap,
            max_lower_gap: chk.max_lower_gap,
            gap,
            fitted_constant: gap / (p.target_eps * (1.0 + p.k) + p.delta),
            violations: chk.violations,
        });
    }
    let hi = rows.iter().map(|r| r.fitted_constant).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.fitted_constant).fold(f64::INFINITY, f64::min);
    let decreasing = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    Ok(GapStudy { rows, band_ratio: hi / lo, decreasing })
}
