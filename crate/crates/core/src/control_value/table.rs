use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use super::DPConfig;
use crate::dynamics::{euler_step, ControlPolicy};
use crate::error::{check_cap, pow_sat, Error, Result};
use crate::path_space::GridPath;
use crate::scenario::{NoiseMode, Scenario};

/// One `(noise node, control history)` cell of a layer.
#[derive(Clone, Debug, Serialize)]
pub struct Entry {
    pub node: usize,
    /// Base-`|U|` digits of the controls used since the table start.
    pub ctrl_seq: usize,
    pub path: GridPath,
    pub value: f64,
    /// Lowest-index minimizing control; `None` on the terminal layer.
    pub argmin: Option<usize>,
}

/// Value function on every reachable `(step, noise node, state path)`.
///
/// Layer `i` holds `B^i · U^{i−r}` entries, entry `node·U^{i−r} + ctrl_seq`.
#[derive(Clone, Debug)]
pub struct ValueTable {
    start: usize,
    steps: usize,
    branches: usize,
    controls: usize,
    layers: Vec<Vec<Entry>>,
    index: Vec<HashMap<(usize, Vec<u64>), usize>>,
}

fn check_quantized(s: &Scenario) -> Result<()> {
    if s.noise().mode != NoiseMode::QuantizedWalk {
        return Err(Error::InvalidParameter("dynamic programming needs quantized_walk noise".into()));
    }
    Ok(())
}

/// Backward dynamic programming over the quantized tree.
pub fn solve_value(s: &Scenario, cfg: &DPConfig) -> Result<ValueTable> {
    check_quantized(s)?;
    let tree = s.tree();
    let g = s.grid();
    let (r, n) = (s.initial().anchor(), g.steps());
    let (bn, un) = (tree.branches(), s.controls().len());
    let total: u128 = (r..=n)
        .map(|i| pow_sat(bn, i).saturating_mul(pow_sat(un, i - r)))
        .fold(0u128, |a, b| a.saturating_add(b));
    check_cap("value table entries", total, cfg.cap)?;

    let dt = g.dt();
    let coeffs = s.coefficients();
    let mut layers: Vec<Vec<Entry>> = Vec::with_capacity(n - r + 1);
    let first: Vec<Entry> = (0..tree.nodes(r))
        .map(|node| Entry { node, ctrl_seq: 0, path: s.initial().clone(), value: 0.0, argmin: None })
        .collect();
    layers.push(first);
    let mut noise = tree.layer(r)?;
    let mut noise_layers = Vec::with_capacity(n - r + 1);
    for i in r..n {
        let prev = layers.last().expect("layer");
        let per = pow_sat(un, i - r) as usize;
        let mut next: Vec<Option<Entry>> = vec![None; prev.len() * bn * un];
        for e in prev {
            let w = &noise[e.node];
            for u in 0..un {
                let path = euler_step(s, i, &e.path, w, u)?;
                for b in 0..bn {
                    let node = e.node * bn + b;
                    let ctrl_seq = e.ctrl_seq * un + u;
                    next[node * per * un + ctrl_seq] =
                        Some(Entry { node, ctrl_seq, path: path.clone(), value: 0.0, argmin: None });
                }
            }
        }
        layers.push(next.into_iter().map(|e| e.expect("every child is filled")).collect());
        let mut wn = Vec::with_capacity(noise.len() * bn);
        for w in &noise {
            for b in 0..bn {
                wn.push(w.advanced(&tree.increment(b))?);
            }
        }
        noise_layers.push(std::mem::replace(&mut noise, wn));
    }
    noise_layers.push(noise);

    for e in layers.last_mut().expect("terminal layer") {
        e.value = coeffs.terminal_cost(&e.path, &noise_layers[n - r][e.node]);
    }
    for i in (r..n).rev() {
        let per = pow_sat(un, i - r) as usize;
        let (head, tail) = layers.split_at_mut(i - r + 1);
        let cur = &mut head[i - r];
        let nxt = &tail[0];
        for e in cur.iter_mut() {
            let w = &noise_layers[i - r][e.node];
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for u in 0..un {
                let run = coeffs.running_cost(i, &e.path, w, s.controls().point(u)) * dt;
                let mut acc = 0.0;
                for b in 0..bn {
                    let child = (e.node * bn + b) * per * un + e.ctrl_seq * un + u;
                    acc += nxt[child].value;
                }
                let q = run + acc / bn as f64;
                if q < best {
                    best = q;
                    arg = u;
                }
            }
            if !best.is_finite() {
                return Err(Error::Numeric(format!("non-finite value at step {i}")));
            }
            e.value = best;
            e.argmin = Some(arg);
        }
    }

    let index = layers
        .iter()
        .map(|layer| {
            let mut m = HashMap::with_capacity(layer.len());
            for (k, e) in layer.iter().enumerate() {
                m.entry((e.node, e.path.key())).or_insert(k);
            }
            m
        })
        .collect();
    Ok(ValueTable { start: r, steps: n, branches: bn, controls: un, layers, index })
}

/// Value and minimizing control at an arbitrary `(step, node, path)` by
/// recursion, reusing table entries where they exist.
fn solve_at(tbl: &ValueTable, s: &Scenario, step: usize, node: usize, x: &GridPath) -> Result<(f64, Option<usize>)> {
    if let Some(e) = tbl.entry_for(step, node, x) {
        return Ok((e.value, e.argmin));
    }
    let tree = s.tree();
    let w = tree.path(step, node)?;
    let c = s.coefficients();
    if step == tbl.steps {
        return Ok((c.terminal_cost(x, &w), None));
    }
    let bn = tree.branches();
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for u in 0..s.controls().len() {
        let run = c.running_cost(step, x, &w, s.controls().point(u)) * s.grid().dt();
        let next = euler_step(s, step, x, &w, u)?;
        let mut acc = 0.0;
        for b in 0..bn {
            acc += solve_at(tbl, s, step + 1, node * bn + b, &next)?.0;
        }
        let q = run + acc / bn as f64;
        if q < best {
            best = q;
            arg = u;
        }
    }
    Ok((best, Some(arg)))
}

impl ValueTable {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn control_count(&self) -> usize {
        self.controls
    }

    pub fn layer(&self, i: usize) -> &[Entry] {
        &self.layers[i - self.start]
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `V(t_r, x_r)` at the first node of the start layer.
    pub fn root_value(&self) -> f64 {
        self.layers[0][0].value
    }

    pub fn entry_for(&self, step: usize, node: usize, x: &GridPath) -> Option<&Entry> {
        if step < self.start || step > self.steps || x.anchor() != step {
            return None;
        }
        let k = *self.index[step - self.start].get(&(node, x.key()))?;
        Some(&self.layers[step - self.start][k])
    }

    pub fn lookup(&self, step: usize, node: usize, x: &GridPath) -> Option<f64> {
        self.entry_for(step, node, x).map(|e| e.value)
    }

    /// `V(t_step, x)` at a noise node; paths outside the table are solved on
    /// the fly.
    pub fn value_at(&self, s: &Scenario, step: usize, node: usize, x: &GridPath) -> Result<f64> {
        self.check_query(s, step, node, x)?;
        Ok(solve_at(self, s, step, node, x)?.0)
    }

    /// Lowest-index minimizing control at `(step, node, x)`.
    pub fn argmin_at(&self, s: &Scenario, step: usize, node: usize, x: &GridPath) -> Result<usize> {
        self.check_query(s, step, node, x)?;
        solve_at(self, s, step, node, x)?
            .1
            .ok_or(Error::OutOfRange { index: step, limit: self.steps - 1 })
    }

    fn check_query(&self, s: &Scenario, step: usize, node: usize, x: &GridPath) -> Result<()> {
        if step > self.steps {
            return Err(Error::OutOfRange { index: step, limit: self.steps });
        }
        if x.anchor() != step {
            return Err(Error::InvalidParameter(format!("path ends at {}, expected {step}", x.anchor())));
        }
        if x.grid() != s.grid() {
            return Err(Error::GridMismatch);
        }
        let nodes = s.tree().nodes_u128(step);
        if node as u128 >= nodes {
            return Err(Error::OutOfRange { index: node, limit: nodes.saturating_sub(1) as usize });
        }
        Ok(())
    }

    /// Feedback policy following the table's minimizers.
    pub fn argmin_policy(self: &Arc<Self>, s: &Scenario) -> ControlPolicy {
        let tbl = Arc::clone(self);
        let s = s.clone();
        let tree = s.tree();
        ControlPolicy::feedback(move |i, w, x| {
            let node = tree.node_of(w).expect("walk path");
            tbl.argmin_at(&s, i, node, x).expect("argmin query")
        })
    }

    pub fn max_abs_value(&self) -> f64 {
        self.layers.iter().flatten().map(|e| e.value.abs()).fold(0.0, f64::max)
    }
}
