use serde::Serialize;

use super::{DPConfig, ValueTable};
use crate::dynamics::euler_step;
use crate::error::{check_cap, pow_sat, Error, Result};
use crate::path_space::GridPath;
use crate::scenario::Scenario;

struct Enumeration<'a> {
    s: &'a Scenario,
    tbl: &'a ValueTable,
    node: usize,
    depth: usize,
    tau: usize,
    offsets: Vec<usize>,
}

impl Enumeration<'_> {
    /// Expected `Σ f·dt + V(τ̂, ·)` below local node `l` at depth `j` when the
    /// control at decision node `(j, l)` is `digits[offsets[j] + l]`.
    fn eval(&self, digits: &[usize], j: usize, l: usize, w: &GridPath, x: &GridPath) -> Result<f64> {
        let s = self.s;
        let tree = s.tree();
        let bn = tree.branches();
        let step = self.tau + j;
        if j == self.depth {
            if step == s.grid().steps() {
                return Ok(s.coefficients().terminal_cost(x, w));
            }
            let node = self.node * pow_sat(bn, j) as usize + l;
            return self.tbl.value_at(s, step, node, x);
        }
        let u = digits[self.offsets[j] + l];
        let run = s.coefficients().running_cost(step, x, w, s.controls().point(u)) * s.grid().dt();
        let next = euler_step(s, step, x, w, u)?;
        let mut acc = 0.0;
        for b in 0..bn {
            acc += self.eval(digits, j + 1, l * bn + b, &w.advanced(&tree.increment(b))?, &next)?;
        }
        Ok(run + acc / bn as f64)
    }
}

/// `|V(τ, ξ) − min_θ E[Σ_{τ≤i<τ̂} f·dt + V(τ̂, X_τ̂) | node]` where the minimum
/// runs over every assignment of a control to each noise node of the subtree
/// on `[τ, τ̂)`. The forward evaluation only reads the table at `τ̂`.
pub fn dpp_residual(
    tbl: &ValueTable,
    s: &Scenario,
    tau: usize,
    tau_hat: usize,
    xi: &GridPath,
    node: usize,
    cfg: &DPConfig,
) -> Result<f64> {
    if tau > tau_hat || tau_hat > s.grid().steps() {
        return Err(Error::InvalidParameter(format!("need tau ≤ tau_hat ≤ N, got {tau}, {tau_hat}")));
    }
    if xi.anchor() != tau {
        return Err(Error::InvalidParameter("xi must end at tau".into()));
    }
    let lhs = tbl.value_at(s, tau, node, xi)?;
    if tau == tau_hat {
        return Ok(0.0);
    }
    let tree = s.tree();
    let bn = tree.branches();
    let un = s.controls().len();
    let depth = tau_hat - tau;
    let mut offsets = Vec::with_capacity(depth);
    let mut decision = 0usize;
    for j in 0..depth {
        offsets.push(decision);
        decision += pow_sat(bn, j) as usize;
    }
    check_cap("enumerated policies", pow_sat(un, decision), cfg.cap)?;
    let en = Enumeration { s, tbl, node, depth, tau, offsets };
    let w = tree.path(tau, node)?;
    let mut digits = vec![0usize; decision];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(en.eval(&digits, 0, 0, &w, xi)?);
        let mut k = 0;
        while k < decision {
            digits[k] += 1;
            if digits[k] < un {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
        if k == decision {
            break;
        }
    }
    Ok((lhs - best).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DppRow {
    pub tau: usize,
    pub tau_hat: usize,
    pub node: usize,
    pub ctrl_seq: usize,
    pub residual: f64,
}

/// Residuals for every `τ ≤ τ̂`, every node at `τ` and every distinct table
/// path there.
pub fn dpp_sweep(tbl: &ValueTable, s: &Scenario, cfg: &DPConfig) -> Result<Vec<DppRow>> {
    let mut rows = Vec::new();
    for tau in tbl.start()..=tbl.steps() {
        let mut seen = std::collections::HashSet::new();
        for e in tbl.layer(tau) {
            if !seen.insert((e.node, e.path.key())) {
                continue;
            }
            for tau_hat in tau..=tbl.steps() {
                let residual = dpp_residual(tbl, s, tau, tau_hat, &e.path, e.node, cfg)?;
                rows.push(DppRow { tau, tau_hat, node: e.node, ctrl_seq: e.ctrl_seq, residual });
            }
        }
    }
    Ok(rows)
}
