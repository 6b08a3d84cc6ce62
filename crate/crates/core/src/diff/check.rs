use super::program::{ParameterVector, Program};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Largest relative disagreement between the reverse-mode gradient and a
/// central difference with step `eps`, over all parameters. The denominator
/// is `max(|g|, |fd|, 1e-6)`, so entries that are zero up to rounding are
/// judged on an absolute scale.
pub fn finite_difference_check(
    program: &Program,
    params: &ParameterVector,
    inputs: &[Matrix],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let grad = program.gradient(params, inputs)?;
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for k in 0..params.len() {
        let orig = probe.0[k];
        probe.0[k] = orig + eps;
        let up = program.forward_scalar(&probe, inputs)?;
        probe.0[k] = orig - eps;
        let down = program.forward_scalar(&probe, inputs)?;
        probe.0[k] = orig;
        let fd = (up - down) / (2.0 * eps);
        let g = grad.0[k];
        let rel = libm::fabs(g - fd) / libm::fabs(g).max(libm::fabs(fd)).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
