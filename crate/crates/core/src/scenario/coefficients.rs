use std::sync::Arc;

use crate::path_space::GridPath;

/// Coefficient functionals `β`, `f`, `G`.
///
/// `drift` and `running_cost` receive the state path stopped at `step` and the
/// noise path stopped at `step`; the terminal cost receives both at the horizon.
/// Implementations must be pure.
pub trait Coefficients: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    /// Number of leading noise components read.
    fn noise_dim(&self) -> usize;
    /// Required control dimension, if the functionals insist on one.
    fn control_dim(&self) -> Option<usize> {
        None
    }
    fn drift(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> Vec<f64>;
    fn running_cost(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> f64;
    fn terminal_cost(&self, x: &GridPath, w: &GridPath) -> f64;
    /// Declared bound `L` on `|β|`, `|f|`, `|G|`.
    fn bound(&self) -> f64;
    /// Declared Lipschitz constant in the path argument (w.r.t. `‖·‖₀`).
    fn lipschitz(&self) -> f64;
    /// Path nodes read by `β`, `f` at `step` (and by `G` at the horizon);
    /// `None` means the whole past.
    fn path_lookback(&self, _step: usize) -> Option<Vec<usize>> {
        None
    }
    /// Noise nodes read at `step`; `None` means the whole past.
    fn noise_lookback(&self, _step: usize) -> Option<Vec<usize>> {
        None
    }
}

pub type DriftFn = Arc<dyn Fn(usize, &GridPath, &GridPath, &[f64]) -> Vec<f64> + Send + Sync>;
pub type RunningFn = Arc<dyn Fn(usize, &GridPath, &GridPath, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&GridPath, &GridPath) -> f64 + Send + Sync>;

/// Coefficients assembled from closures. Unset pieces are zero.
#[derive(Clone)]
pub struct FnCoefficients {
    name: String,
    state_dim: usize,
    noise_dim: usize,
    bound: f64,
    lipschitz: f64,
    drift: DriftFn,
    running: RunningFn,
    terminal: TerminalFn,
}

impl FnCoefficients {
    pub fn new(name: &str, state_dim: usize, bound: f64, lipschitz: f64) -> Self {
        FnCoefficients {
            name: name.to_string(),
            state_dim,
            noise_dim: 0,
            bound,
            lipschitz,
            drift: Arc::new(move |_, _, _, _| vec![0.0; state_dim]),
            running: Arc::new(|_, _, _, _| 0.0),
            terminal: Arc::new(|_, _| 0.0),
        }
    }

    pub fn with_noise_dim(mut self, m: usize) -> Self {
        self.noise_dim = m;
        self
    }

    pub fn with_drift<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, &GridPath, &GridPath, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_running<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, &GridPath, &GridPath, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.running = Arc::new(f);
        self
    }

    pub fn with_terminal<F>(mut self, f: F) -> Self
    where
        F: Fn(&GridPath, &GridPath) -> f64 + Send + Sync + 'static,
    {
        self.terminal = Arc::new(f);
        self
    }
}

impl Coefficients for FnCoefficients {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn drift(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> Vec<f64> {
        (self.drift)(step, x, w, v)
    }
    fn running_cost(&self, step: usize, x: &GridPath, w: &GridPath, v: &[f64]) -> f64 {
        (self.running)(step, x, w, v)
    }
    fn terminal_cost(&self, x: &GridPath, w: &GridPath) -> f64 {
        (self.terminal)(x, w)
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}
