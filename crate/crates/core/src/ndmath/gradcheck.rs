use super::tensor::ParamStore;
use crate::error::Result;

pub const DEFAULT_PERTURBATION: f64 = 1e-5;

/// Smallest denominator of the relative error. A central difference at `h = 1e-5` carries
/// roundoff of order `1e-16 * |loss| / h`, so gradient components below this floor are
/// held to an absolute error of `1e-4 * GRADIENT_FLOOR` instead.
pub const GRADIENT_FLOOR: f64 = 1e-5;

/// Compares analytic gradients against central differences.
///
/// `loss` must be deterministic. `analytic` is a store whose gradient fields already hold
/// the analytic gradient of `loss` at its current values. Returns the maximum over the
/// checked scalars of `|a - n| / max(|a|, |n|, GRADIENT_FLOOR)`.
pub fn grad_check<F>(loss: F, analytic: &ParamStore, perturbation: f64) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let all: Vec<usize> = (0..analytic.num_scalars()).collect();
    grad_check_at(loss, analytic, perturbation, &all)
}

/// Same as [`grad_check`] restricted to the listed flat parameter positions.
pub fn grad_check_at<F>(
    mut loss: F,
    analytic: &ParamStore,
    perturbation: f64,
    positions: &[usize],
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut probe = analytic.clone();
    let mut worst = 0.0f64;
    for &p in positions {
        let orig = probe.scalar(p);
        probe.set_scalar(p, orig + perturbation);
        let up = loss(&probe)?;
        probe.set_scalar(p, orig - perturbation);
        let down = loss(&probe)?;
        probe.set_scalar(p, orig);
        let numeric = (up - down) / (2.0 * perturbation);
        let a = analytic.scalar_grad(p);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
