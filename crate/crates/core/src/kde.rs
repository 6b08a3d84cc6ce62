//! Gaussian kernel density estimates: Silverman bandwidths, product-kernel
//! joint density, Nadaraya–Watson conditional density and conditional mean.
//!
//! Ratios of kernel sums are formed in log space so queries far from the
//! sample do not silently turn into `0 / 0`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{sample_std, Matrix};

/// Smallest bandwidth handed out; degenerate (constant) columns get this.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const UNDERFLOW: f64 = 1e-300;

/// `w * std * n^(-1/5)`, or [`BANDWIDTH_FLOOR`] when `std == 0`.
pub fn silverman_bandwidth(std: f64, n: usize, window: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("silverman bandwidth needs n >= 2, got {n}")));
    }
    if !(window > 0.0) {
        return Err(Error::invalid(format!("window must be positive, got {window}")));
    }
    if !(std >= 0.0) {
        return Err(Error::invalid(format!("standard deviation must be >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(BANDWIDTH_FLOOR);
    }
    Ok((window * std * libm::pow(n as f64, -0.2)).max(BANDWIDTH_FLOOR))
}

/// `K_h(u) = phi(u / h) / h` with `phi` the standard normal density.
pub fn gaussian_kernel(u: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    Ok(libm::exp(log_kernel(u, h)))
}

#[inline]
fn log_kernel(u: f64, h: f64) -> f64 {
    let z = u / h;
    -0.5 * z * z - LN_SQRT_2PI - libm::log(h)
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("bandwidth must be positive and finite, got {h}")))
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(terms.iter().map(|t| libm::exp(t - max)).sum::<f64>())
}

/// Bandwidths for a KDE over observed columns and one latent.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelConfig {
    pub window: f64,
    /// One bandwidth per observed column.
    pub bandwidths: Vec<f64>,
    pub latent_bandwidth: f64,
}

impl KernelConfig {
    /// Silverman bandwidths from column standard deviations, with `n` the
    /// number of points each density estimate is built from.
    pub fn from_sample(observations: &Matrix, latents: &[f64], n: usize, window: f64) -> Result<Self> {
        let bandwidths = observations
            .column_stds()
            .into_iter()
            .map(|s| silverman_bandwidth(s, n, window))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            window,
            bandwidths,
            latent_bandwidth: silverman_bandwidth(sample_std(latents), n, window)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.bandwidths.iter().try_for_each(|&h| check_bandwidth(h))?;
        check_bandwidth(self.latent_bandwidth)
    }
}

/// `(1/M) sum_i K_{h*}(z - z_i) prod_j K_{h_j}(x_j - x_ij)`.
pub fn joint_density(
    observations: &Matrix,
    latents: &[f64],
    query_x: &[f64],
    query_z: f64,
    config: &KernelConfig,
) -> Result<f64> {
    let m = observations.rows();
    let k = query_x.len();
    if m == 0 {
        return Err(Error::invalid("joint density needs at least one observation"));
    }
    if latents.len() != m || observations.cols() != k || config.bandwidths.len() != k {
        return Err(Error::shape(format!(
            "joint density: {m} observations x {} columns, {} latents, query of {k}, {} bandwidths",
            observations.cols(),
            latents.len(),
            config.bandwidths.len()
        )));
    }
    config.validate()?;
    let terms: Vec<f64> = (0..m)
        .map(|i| {
            let row = observations.row(i);
            log_kernel(query_z - latents[i], config.latent_bandwidth)
                + (0..k)
                    .map(|j| log_kernel(query_x[j] - row[j], config.bandwidths[j]))
                    .sum::<f64>()
        })
        .collect();
    Ok(libm::exp(log_sum_exp(&terms) - libm::log(m as f64)))
}

fn latent_log_weights(latents: &[f64], query_z: f64, h_star: f64) -> Result<Vec<f64>> {
    let w: Vec<f64> = latents.iter().map(|&z| log_kernel(query_z - z, h_star)).collect();
    if log_sum_exp(&w) < libm::log(UNDERFLOW) {
        return Err(Error::DensityUnderflow);
    }
    Ok(w)
}

/// Nadaraya–Watson conditional density of `X_j` at `query_x` given latent `query_z`.
pub fn conditional_density(
    values: &[f64],
    latents: &[f64],
    query_x: f64,
    query_z: f64,
    h_j: f64,
    h_star: f64,
) -> Result<f64> {
    if values.is_empty() || values.len() != latents.len() {
        return Err(Error::shape(format!(
            "conditional density: {} values vs {} latents",
            values.len(),
            latents.len()
        )));
    }
    check_bandwidth(h_j)?;
    check_bandwidth(h_star)?;
    let w = latent_log_weights(latents, query_z, h_star)?;
    let num: Vec<f64> = values
        .iter()
        .zip(&w)
        .map(|(&x, &lw)| lw + log_kernel(query_x - x, h_j))
        .collect();
    Ok(libm::exp(log_sum_exp(&num) - log_sum_exp(&w)))
}

/// Nadaraya–Watson estimate of `E[X_1 | Z = query_z]`.
pub fn conditional_mean(values: &[f64], latents: &[f64], query_z: f64, h_star: f64) -> Result<f64> {
    if values.is_empty() || values.len() != latents.len() {
        return Err(Error::shape(format!(
            "conditional mean: {} values vs {} latents",
            values.len(),
            latents.len()
        )));
    }
    check_bandwidth(h_star)?;
    let w = latent_log_weights(latents, query_z, h_star)?;
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Weighted mean of deviations from the first value keeps constant samples exact.
    let base = values[0];
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &lw) in values.iter().zip(&w) {
        let e = libm::exp(lw - max);
        num += e * (x - base);
        den += e;
    }
    Ok(base + num / den)
}
