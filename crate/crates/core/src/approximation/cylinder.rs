use std::sync::Arc;

use super::{hold_spacing, ApproxParams};
use crate::error::{Error, Result};
use crate::path_space::GridPath;
use crate::scenario::{Coefficients, Scenario};

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

/// Shifts and weights of the bump mollifier `∝ exp(−1/(1 − (a/w)²))` on `[−w, w]`.
fn mollifier(width: f64, points: usize) -> Vec<(f64, f64)> {
    if width == 0.0 {
        return vec![(0.0, 1.0)];
    }
    let (z, w) = gauss_legendre(points);
    let raw: Vec<f64> = z.iter().zip(&w).map(|(&z, &w)| w * (-1.0 / (1.0 - z * z)).exp()).collect();
    let total: f64 = raw.iter().sum();
    z.iter().zip(raw).map(|(&z, r)| (width * z, r / total)).collect()
}

/// Coefficients that read the state and the noise only at the hold points
/// below the current node (plus the current node itself), averaged over common
/// translations of the whole state path.
#[derive(Clone)]
pub struct CylinderCoefficientSet {
    source: Scenario,
    name: String,
    partition: Vec<usize>,
    spacing: usize,
    shifts: Vec<Vec<f64>>,
    weights: Vec<f64>,
    width: f64,
    target_eps: f64,
}

impl std::fmt::Debug for CylinderCoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylinderCoefficientSet")
            .field("name", &self.name)
            .field("partition", &self.partition)
            .field("spacing", &self.spacing)
            .field("width", &self.width)
            .finish()
    }
}

pub fn build_cylinder_approximation(s: &Scenario, p: &ApproxParams) -> Result<CylinderCoefficientSet> {
    p.validate()?;
    let n = s.grid().steps();
    if p.partition > n || n % p.partition != 0 {
        return Err(Error::InvalidParameter(format!("{} cells do not divide {n} steps", p.partition)));
    }
    let spacing = hold_spacing(n, p.levels)?;
    let cell = n / p.partition;
    if spacing % cell != 0 {
        return Err(Error::InvalidParameter(format!(
            "hold points every {spacing} steps are not partition nodes (cells of {cell})"
        )));
    }
    if s.initial().anchor() != 0 {
        return Err(Error::InvalidParameter("cylinder approximation needs an initial prefix of one node".into()));
    }
    let d = s.state_dim();
    let one = mollifier(p.width, p.quadrature);
    // separable product rule over the state components
    let mut shifts = vec![Vec::new()];
    let mut weights = vec![1.0];
    for _ in 0..d {
        let mut ns = Vec::new();
        let mut nw = Vec::new();
        for (sh, w) in shifts.iter().zip(&weights) {
            for &(a, q) in &one {
                let mut v: Vec<f64> = sh.clone();
                v.push(a);
                ns.push(v);
                nw.push(w * q);
            }
        }
        shifts = ns;
        weights = nw;
    }
    Ok(CylinderCoefficientSet {
        source: s.clone(),
        name: format!("cylinder({})", s.coefficients().name()),
        partition: (0..=p.partition).map(|j| j * cell).collect(),
        spacing,
        shifts,
        weights,
        width: p.width,
        target_eps: p.target_eps,
    })
}

impl CylinderCoefficientSet {
    pub fn source(&self) -> &Scenario {
        &self.source
    }

    fn inner(&self) -> &Arc<dyn Coefficients> {
        self.source.coefficients()
    }

    /// Partition nodes `t_0 = 0 < … < t_{N_c} = T` as step indices.
    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn hold(&self, l: usize) -> usize {
        l / self.spacing * self.spacing
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn target_eps(&self) -> f64 {
        self.target_eps
    }

    /// The scenario with these coefficients in place of the originals.
    pub fn scenario(&self) -> Result<Scenario> {
        self.source.with_coefficients(Arc::new(self.clone()))
    }

    fn held(&self, i: usize, x: &GridPath) -> GridPath {
        let d = x.dim();
        let top = i.min(x.anchor());
        let rows: Vec<Vec<f64>> = (0..=top)
            .map(|l| {
                let src = if l == top { l } else { self.hold(l) };
                (0..d).map(|c| x.value(src, c)).collect()
            })
            .collect();
        GridPath::from_rows(x.grid(), &rows).expect("held path")
    }

    fn average<F: Fn(&GridPath) -> f64>(&self, x: &GridPath, g: F) -> f64 {
        self.shifts.iter().zip(&self.weights).map(|(a, w)| w * g(&x.translated(a))).sum()
    }

    fn held_reads(&self, step: usize, inner: Option<Vec<usize>>) -> Vec<usize> {
        let mut out: Vec<usize> = match inner {
            Some(ls) => ls.into_iter().filter(|&l| l <= step).map(|l| if l == step { l } else { self.hold(l) }).collect(),
            None => (0..step).map(|l| self.hold(l)).chain(std::iter::once(step)).collect(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl Coefficients for CylinderCoefficientSet {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner().noise_dim()
    }
    fn control_dim(&self) -> Option<usize> {
        self.inner().control_dim()
    }
    fn drift(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> Vec<f64> {
        let (xh, wh) = (self.held(step, x), self.held(step, w));
        let mut out = vec![0.0; x.dim()];
        for (a, q) in self.shifts.iter().zip(&self.weights) {
            let b = self.inner().drift(step, &xh.translated(a), &wh, v);
            for (o, bi) in out.iter_mut().zip(b) {
                *o += q * bi;
            }
        }
        out
    }
    fn running_cost(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> f64 {
        let wh = self.held(step, w);
        self.average(&self.held(step, x), |y| self.inner().running_cost(step, y, &wh, v))
    }
    fn terminal_cost(&self, x: &GridPath, w: &GridPath) -> f64 {
        let wh = self.held(w.anchor(), w);
        self.average(&self.held(x.anchor(), x), |y| self.inner().terminal_cost(y, &wh))
    }
    fn bound(&self) -> f64 {
        self.inner().bound()
    }
    fn lipschitz(&self) -> f64 {
        self.inner().lipschitz()
    }
    fn path_lookback(&self, step: usize) -> Option<Vec<usize>> {
        Some(self.held_reads(step, self.inner().path_lookback(step)))
    }
    fn noise_lookback(&self, step: usize) -> Option<Vec<usize>> {
        Some(self.held_reads(step, self.inner().noise_lookback(step)))
    }
}
