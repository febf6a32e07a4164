use std::sync::Arc;

use serde::Serialize;

use super::{cost_functional, lipschitz_bound, DPConfig, ValueTable};
use crate::dynamics::{euler_step, ControlPolicy};
use crate::error::{Error, Result};
use crate::path_space::{build_epsilon_net, sup_distance, PathClassSpec};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlueReport {
    pub eps: f64,
    pub delta: f64,
    pub cells: usize,
    /// Largest distance from a reached state to the center whose controls it used.
    pub max_center_distance: f64,
    pub cost: f64,
    pub value: f64,
    pub pass: bool,
}

/// Glued near-optimal control: optimal feedback on `[t_r, t_τ̂)`; from `τ̂` on,
/// each state follows the noise-adapted optimal controls of the center of its
/// cell in a `δ`-net of `Λ^{0,L;ξ}_{r,τ̂}` with `δ = ε / L_V`.
pub fn glued_policy_demo(
    tbl: &Arc<ValueTable>,
    s: &Scenario,
    tau_hat: usize,
    eps: f64,
    levels: usize,
    cap: u128,
) -> Result<GlueReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    let r = tbl.start();
    let n = tbl.steps();
    if tau_hat < r || tau_hat > n {
        return Err(Error::OutOfRange { index: tau_hat, limit: n });
    }
    let delta = eps / lipschitz_bound(s);
    let spec = PathClassSpec::new(s.constant_l(), s.initial().clone(), tau_hat)?;
    let net = Arc::new(build_epsilon_net(&spec, delta, levels, cap)?);
    let tree = s.tree();

    let max_dist = Arc::new(std::sync::Mutex::new(0.0f64));
    let policy = {
        let tbl = Arc::clone(tbl);
        let s = s.clone();
        let net = Arc::clone(&net);
        let max_dist = Arc::clone(&max_dist);
        ControlPolicy::feedback(move |i, w, x| {
            let node_of = |w: &crate::path_space::GridPath| tree.node_of(w).expect("walk path");
            if i < tau_hat {
                return tbl.argmin_at(&s, i, node_of(w), x).expect("argmin");
            }
            let x_hat = x.truncate(tau_hat).expect("prefix");
            let j = match net.assign(&x_hat) {
                Some(j) => j,
                None => net.nearest(&x_hat).0,
            };
            let center = &net.centers()[j];
            {
                let mut m = max_dist.lock().expect("lock");
                *m = m.max(sup_distance(center, &x_hat));
            }
            let mut y = center.clone();
            for k in tau_hat..i {
                let wk = w.truncate(k).expect("prefix");
                let u = tbl.argmin_at(&s, k, node_of(&wk), &y).expect("argmin");
                y = euler_step(&s, k, &y, &wk, u).expect("euler step");
            }
            tbl.argmin_at(&s, i, node_of(w), &y).expect("argmin")
        })
    };
    let prefix = tree.path(r, 0)?;
    let cost = cost_functional(s, r, s.initial(), &policy, &prefix, &DPConfig { cap, ..DPConfig::default() })?.mean;
    let value = tbl.value_at(s, r, 0, s.initial())?;
    let max_center_distance = *max_dist.lock().expect("lock");
    Ok(GlueReport {
        eps,
        delta,
        cells: net.centers().len(),
        max_center_distance,
        cost,
        value,
        pass: cost - value <= 3.0 * eps && cost >= value - 1e-12,
    })
}
