use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::pde::{solve_hjb_slab, MarkovProblem, PdeGrid};
use super::{ApproxParams, CylinderCoefficientSet};
use crate::error::{Error, Result};
use crate::path_space::{GridPath, TimeGrid};
use crate::scenario::Coefficients;

type Layers = Arc<Vec<Vec<f64>>>;

/// `V^ε` as a family of slab solutions of the regularized HJB equation, one per
/// tuple of frozen samples, solved on demand and memoized.
pub struct MarkovField {
    cyl: Arc<CylinderCoefficientSet>,
    grid: PdeGrid,
    time: TimeGrid,
    delta: f64,
    x0: f64,
    m: usize,
    controls: Vec<Vec<f64>>,
    /// Frozen state and noise nodes read inside slab `j`, all `≤ t_j`.
    keys_x: Vec<Vec<usize>>,
    keys_w: Vec<Vec<usize>>,
    memo: Mutex<HashMap<(usize, Vec<u64>), Layers>>,
}

impl std::fmt::Debug for MarkovField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MarkovField")
            .field("grid", &self.grid)
            .field("delta", &self.delta)
            .field("keys_x", &self.keys_x)
            .field("keys_w", &self.keys_w)
            .field("slabs", &self.slab_count())
            .finish()
    }
}

/// Sets up the field for `cyl` and solves the slab chain through the initial point.
pub fn solve_markovian_hjb(cyl: &CylinderCoefficientSet, p: &ApproxParams, grid: &PdeGrid) -> Result<MarkovField> {
    p.validate()?;
    let s = cyl.source();
    if s.state_dim() != 1 {
        return Err(Error::InvalidParameter("the Markovian solver handles one state component".into()));
    }
    let m = s.coefficients().noise_dim();
    if m > 1 {
        return Err(Error::InvalidParameter("the Markovian solver handles at most one noise component".into()));
    }
    if m == 0 && grid.ny() != 1 {
        return Err(Error::InvalidParameter("noise-free coefficients need a grid with one ỹ row".into()));
    }
    if m == 1 && grid.ny() < 3 {
        return Err(Error::InvalidParameter("a noise axis needs at least three ỹ rows".into()));
    }
    let time = s.grid();
    let n = time.steps();
    let part = cyl.partition().to_vec();
    let nc = part.len() - 1;

    let mut keys_x = vec![Vec::new(); nc];
    let mut keys_w = vec![Vec::new(); nc];
    for j in (0..nc).rev() {
        let mut kx = BTreeSet::new();
        let mut kw = BTreeSet::new();
        let mut steps: Vec<usize> = (part[j]..part[j + 1]).collect();
        if j + 1 == nc {
            steps.push(n);
        }
        for i in steps {
            kx.extend(cyl.path_lookback(i).unwrap_or_default().into_iter().filter(|&l| l < i));
            if m > 0 {
                kw.extend(cyl.noise_lookback(i).unwrap_or_default().into_iter().filter(|&l| l < i));
            }
        }
        if j + 1 < nc {
            kx.extend(keys_x[j + 1].iter().copied().filter(|&l| l <= part[j]));
            kw.extend(keys_w[j + 1].iter().copied().filter(|&l| l <= part[j]));
        }
        keys_x[j] = kx.into_iter().collect();
        keys_w[j] = kw.into_iter().collect();
    }

    let field = MarkovField {
        cyl: Arc::new(cyl.clone()),
        grid: grid.clone(),
        time,
        delta: p.delta,
        x0: s.initial().value(0, 0),
        m,
        controls: s.controls().points().to_vec(),
        keys_x,
        keys_w,
        memo: Mutex::new(HashMap::new()),
    };
    let root = GridPath::scalar(time, &[field.x0])?;
    let w0 = GridPath::from_rows(time, &[vec![0.0; m]])?;
    field.value(0, &root, &w0)?;
    Ok(field)
}

struct SlabProblem<'a> {
    field: &'a MarkovField,
    j: usize,
    fx: &'a [f64],
    fw: &'a [f64],
}

impl MarkovProblem for SlabProblem<'_> {
    fn controls(&self) -> usize {
        self.field.controls.len()
    }
    fn drift(&self, step: usize, y: f64, x: f64, u: usize) -> f64 {
        let (xp, wp) = self.field.representative(self.j, step, self.fx, self.fw, x, y);
        self.field.cyl.drift(step, &xp, &wp, &self.field.controls[u])[0]
    }
    fn running(&self, step: usize, y: f64, x: f64, u: usize) -> f64 {
        let (xp, wp) = self.field.representative(self.j, step, self.fx, self.fw, x, y);
        self.field.cyl.running_cost(step, &xp, &wp, &self.field.controls[u])
    }
}

fn bits(fx: &[f64], fw: &[f64]) -> Vec<u64> {
    fx.iter().chain(fw).map(|v| (v + 0.0).to_bits()).collect()
}

impl MarkovField {
    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn cylinder(&self) -> &CylinderCoefficientSet {
        &self.cyl
    }

    /// Number of slab solutions computed so far.
    pub fn slab_count(&self) -> usize {
        self.memo.lock().expect("memo").len()
    }

    fn slab_of(&self, i: usize) -> usize {
        let part = self.cyl.partition();
        (0..part.len() - 1).rev().find(|&j| part[j] <= i).unwrap_or(0)
    }

    /// State and noise paths up to `step` carrying the frozen samples at their
    /// nodes, the current values at `step`, and placeholders elsewhere.
    fn representative(&self, j: usize, step: usize, fx: &[f64], fw: &[f64], x: f64, y: f64) -> (GridPath, GridPath) {
        let xs: Vec<f64> = (0..=step)
            .map(|l| {
                if l == step {
                    return x;
                }
                let h = self.cyl.hold(l);
                self.keys_x[j].iter().position(|&k| k == h).map_or(self.x0, |q| fx[q])
            })
            .collect();
        let ws: Vec<Vec<f64>> = (0..=step)
            .map(|l| {
                if self.m == 0 {
                    return vec![];
                }
                if l == step {
                    return vec![y];
                }
                let h = self.cyl.hold(l);
                vec![self.keys_w[j].iter().position(|&k| k == h).map_or(0.0, |q| fw[q])]
            })
            .collect();
        (
            GridPath::scalar(self.time, &xs).expect("representative path"),
            GridPath::from_rows(self.time, &ws).expect("representative noise"),
        )
    }

    /// Frozen samples for slab `j + 1` given those of slab `j` and the current
    /// values at `t_{j+1}`.
    fn next_keys(&self, j: usize, fx: &[f64], fw: &[f64], x: f64, y: f64) -> (Vec<f64>, Vec<f64>) {
        let t = self.cyl.partition()[j + 1];
        let pick = |keys: &[usize], own: &[usize], vals: &[f64], cur: f64| -> Vec<f64> {
            keys.iter()
                .map(|&k| if k == t { cur } else { vals[own.iter().position(|&o| o == k).expect("inherited key")] })
                .collect()
        };
        (pick(&self.keys_x[j + 1], &self.keys_x[j], fx, x), pick(&self.keys_w[j + 1], &self.keys_w[j], fw, y))
    }

    fn slab(&self, j: usize, fx: &[f64], fw: &[f64]) -> Result<Layers> {
        let key = (j, bits(fx, fw));
        if let Some(l) = self.memo.lock().expect("memo").get(&key) {
            return Ok(l.clone());
        }
        let part = self.cyl.partition();
        let nc = part.len() - 1;
        let (ys, xs) = (self.grid.y_nodes(), self.grid.x_nodes());
        let nx = self.grid.nx();
        let cells: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();

        let terminal: Vec<f64> = if j + 1 == nc {
            cells
                .par_iter()
                .map(|&(y, x)| {
                    let (xp, wp) = self.representative(j, self.time.steps(), fx, fw, x, y);
                    self.cyl.terminal_cost(&xp, &wp)
                })
                .collect()
        } else {
            let t = part[j + 1];
            let branch_x = self.keys_x[j + 1].contains(&t);
            let branch_w = self.keys_w[j + 1].contains(&t);
            if !branch_x && !branch_w {
                let (nfx, nfw) = self.next_keys(j, fx, fw, 0.0, 0.0);
                self.slab(j + 1, &nfx, &nfw)?[0].clone()
            } else {
                cells
                    .par_iter()
                    .enumerate()
                    .map(|(idx, &(y, x))| {
                        let (nfx, nfw) = self.next_keys(j, fx, fw, x, y);
                        Ok(self.slab(j + 1, &nfx, &nfw)?[0][idx])
                    })
                    .collect::<Result<Vec<f64>>>()?
            }
        };
        debug_assert_eq!(terminal.len(), nx * self.grid.ny());
        let problem = SlabProblem { field: self, j, fx, fw };
        let layers = Arc::new(solve_hjb_slab(&problem, &self.grid, self.time, self.delta, part[j], part[j + 1], terminal)?);
        self.memo.lock().expect("memo").insert(key, layers.clone());
        Ok(layers)
    }

    /// `V^ε(t_i, x)` along the noise path `w`, both stopped at `i`.
    pub fn value(&self, i: usize, x: &GridPath, w: &GridPath) -> Result<f64> {
        let n = self.time.steps();
        if x.grid() != self.time || w.grid() != self.time {
            return Err(Error::GridMismatch);
        }
        if x.anchor() != i || w.anchor() != i || i > n {
            return Err(Error::InvalidParameter(format!("paths must end at step {i}")));
        }
        if x.dim() != 1 || w.dim() != self.m {
            return Err(Error::Dimension { expected: self.m, got: w.dim() });
        }
        if i == n {
            return Ok(self.cyl.terminal_cost(x, w));
        }
        let j = self.slab_of(i);
        let fx: Vec<f64> = self.keys_x[j].iter().map(|&k| x.value(k, 0)).collect();
        let fw: Vec<f64> = self.keys_w[j].iter().map(|&k| w.value(k, 0)).collect();
        let layers = self.slab(j, &fx, &fw)?;
        let y = if self.m == 0 { 0.0 } else { w.value(i, 0) };
        Ok(self.grid.interpolate(&layers[i - self.cyl.partition()[j]], y, x.value(i, 0)))
    }

    fn max_slope(&self) -> f64 {
        let nx = self.grid.nx();
        let dx = self.grid.dx();
        let memo = self.memo.lock().expect("memo");
        let mut best = 0.0f64;
        for layers in memo.values() {
            for layer in layers.iter() {
                for row in layer.chunks(nx) {
                    for pair in row.windows(2) {
                        best = best.max((pair[1] - pair[0]).abs() / dx);
                    }
                }
            }
        }
        best
    }
}

/// `L̃`: the largest one-sided `x̃`-difference quotient over every solved slab
/// layer, which is the Lipschitz constant of the interpolated field in `x̃`.
pub fn estimate_gradient_bound(field: &MarkovField) -> f64 {
    field.max_slope()
}
