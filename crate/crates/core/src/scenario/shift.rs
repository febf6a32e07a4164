use std::sync::Arc;

use super::{Coefficients, Scenario};
use crate::path_space::GridPath;

/// Adapted path-valued functional of the noise: `η(j, W_{t_j})` is the value of
/// `η` at node `j` given the noise stopped there.
pub type EtaFn = Arc<dyn Fn(usize, &GridPath) -> Vec<f64> + Send + Sync>;

pub fn eta_constant(value: Vec<f64>) -> EtaFn {
    Arc::new(move |_, _| value.clone())
}

/// `η_c(t) = scale_c · W_{c mod m}(t)`; zero when there is no noise.
pub fn eta_scaled_noise(scale: Vec<f64>) -> EtaFn {
    Arc::new(move |_, w: &GridPath| {
        let m = w.dim();
        let now = w.terminal();
        scale
            .iter()
            .enumerate()
            .map(|(c, a)| if m == 0 { 0.0 } else { a * now[c % m] })
            .collect()
    })
}

/// Coefficients evaluated on `X + η`.
pub struct Shifted {
    name: String,
    inner: Arc<dyn Coefficients>,
    eta: EtaFn,
}

impl Shifted {
    pub fn new(inner: Arc<dyn Coefficients>, eta: EtaFn) -> Self {
        Shifted { name: format!("shifted({})", inner.name()), inner, eta }
    }

    fn moved(&self, x: &GridPath, w: &GridPath) -> GridPath {
        let d = x.dim();
        let rows: Vec<Vec<f64>> = (0..=x.anchor())
            .map(|j| {
                let wj = w.truncate(j.min(w.anchor())).expect("noise prefix");
                let e = (self.eta)(j, &wj);
                (0..d).map(|c| x.value(j, c) + e[c]).collect()
            })
            .collect();
        let out = GridPath::from_rows(x.grid(), &rows).expect("shifted path");
        if x.is_continuous() {
            out
        } else {
            out.into_cadlag()
        }
    }
}

impl Coefficients for Shifted {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn control_dim(&self) -> Option<usize> {
        self.inner.control_dim()
    }
    fn drift(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> Vec<f64> {
        self.inner.drift(step, &self.moved(x, w), w, v)
    }
    fn running_cost(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> f64 {
        self.inner.running_cost(step, &self.moved(x, w), w, v)
    }
    fn terminal_cost(&self, x: &GridPath, w: &GridPath) -> f64 {
        self.inner.terminal_cost(&self.moved(x, w), w)
    }
    fn bound(&self) -> f64 {
        self.inner.bound()
    }
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }
    fn path_lookback(&self, step: usize) -> Option<Vec<usize>> {
        self.inner.path_lookback(step)
    }
}

/// The scenario rewritten for `X = X̃ − η`: every coefficient reads `X + η`.
/// The initial prefix is kept as given.
pub fn shift_by_eta(s: &Scenario, eta: EtaFn) -> Scenario {
    let coeffs: Arc<dyn Coefficients> = Arc::new(Shifted::new(s.coeffs.clone(), eta));
    Scenario { coeffs, ..s.clone() }
}
