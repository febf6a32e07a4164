use crate::error::{Error, Result};
use crate::path_space::GridPath;

/// `Z(t, C_t) = γ(t) + Σ_{s<t} ξ(t, s)·(C(t_{s+1}) − C(t_s))`, with the habit
/// integral taken by the left-point rule. `kernel[t][s]` holds `ξ(t_t, t_s)`.
pub fn habit_living_standard(t: usize, c: &GridPath, gamma: &[f64], kernel: &[Vec<f64>]) -> Result<f64> {
    if c.dim() != 1 {
        return Err(Error::Dimension { expected: 1, got: c.dim() });
    }
    if t > c.anchor() {
        return Err(Error::OutOfRange { index: t, limit: c.anchor() });
    }
    if t >= gamma.len() || t >= kernel.len() || kernel[t].len() < t {
        return Err(Error::OutOfRange { index: t, limit: gamma.len().min(kernel.len()) });
    }
    for s in 0..t {
        if c.value(s + 1, 0) < c.value(s, 0) {
            return Err(Error::DecreasingConsumption(s));
        }
    }
    Ok(gamma[t] + stieltjes(t, c, |s| kernel[t][s]))
}

/// Left-point sum without the monotonicity check.
pub(crate) fn stieltjes(t: usize, c: &GridPath, xi: impl Fn(usize) -> f64) -> f64 {
    (0..t).map(|s| xi(s) * (c.value(s + 1, 0) - c.value(s, 0))).sum()
}
