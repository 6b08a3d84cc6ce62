//! Seeded generators for the synthetic designs.
//!
//! Every random column draws from its own [`Stream`], so a dataset is a pure
//! function of `(design, sizes, seed)`. Train, validation and test rows are
//! consecutive draws of the same streams and never overlap.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Stream};

/// Standard normal CDF, via `erfc` for accuracy in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
fn logistic_decreasing(z: f64) -> f64 {
    // 1 / (1 + e^z), written to avoid overflow for large |z|.
    if z > 0.0 {
        let e = libm::exp(-z);
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + libm::exp(z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    Baseline,
    LinearError,
    DoubleError,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::LinearError, Variant::DoubleError];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::LinearError => "linear_error",
            Variant::DoubleError => "double_error",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "baseline" => Ok(Variant::Baseline),
            "linear_error" => Ok(Variant::LinearError),
            "double_error" => Ok(Variant::DoubleError),
            other => Err(Error::invalid(format!(
                "unknown variant `{other}` (expected baseline, linear_error, double_error)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Domain {
    Continuous,
    Discrete,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Continuous => "continuous",
            Domain::Discrete => "discrete",
        }
    }
}

impl core::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Domain::Continuous),
            "discrete" => Ok(Domain::Discrete),
            other => Err(Error::invalid(format!(
                "unknown domain `{other}` (expected continuous or discrete)"
            ))),
        }
    }
}

/// Row counts of the three consecutive blocks of a generated dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Splits {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: 8000,
            validation: 1000,
            test: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum GeneratorSpec {
    Univariate {
        variant: Variant,
        domain: Domain,
        splits: Splits,
    },
    Structural {
        n: usize,
        sigma: f64,
        rows: usize,
    },
    Distributional {
        n: usize,
        rows: usize,
    },
    /// Data that did not come from a generator (e.g. read from disk).
    External,
}

/// Observations, optional ground truth and auxiliary labels.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub x: Matrix,
    pub z: Option<Matrix>,
    pub u: Option<Vec<u32>>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    pub spec: GeneratorSpec,
    pub seed: u64,
}

impl Dataset {
    /// Wraps observations with default column names `X1..Xm` / `Z1..Zn`.
    pub fn new(x: Matrix, z: Option<Matrix>, u: Option<Vec<u32>>) -> Result<Self> {
        let x_names = (1..=x.cols()).map(|j| format!("X{j}")).collect();
        let z_names = z
            .as_ref()
            .map(|z| (1..=z.cols()).map(|k| format!("Z{k}")).collect())
            .unwrap_or_default();
        let ds = Self {
            x,
            z,
            u,
            x_names,
            z_names,
            spec: GeneratorSpec::External,
            seed: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.z.as_ref().is_some_and(|z| z.rows() != n) {
            return Err(Error::shape("latent rows differ from observation rows"));
        }
        if self.u.as_ref().is_some_and(|u| u.len() != n) {
            return Err(Error::shape("label rows differ from observation rows"));
        }
        if self.x_names.len() != self.x.cols()
            || self.z.as_ref().map_or(0, |z| z.cols()) != self.z_names.len()
        {
            return Err(Error::shape("column names do not match column counts"));
        }
        if !self.x.is_finite() || !self.z.as_ref().map_or(true, |z| z.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(())
    }

    /// Rows `[start, start + len)` as a new dataset.
    pub fn slice(&self, start: usize, len: usize) -> Dataset {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            z: self.z.as_ref().map(|z| z.select_rows(idx)),
            u: self.u.as_ref().map(|u| idx.iter().map(|&i| u[i]).collect()),
            x_names: self.x_names.clone(),
            z_names: self.z_names.clone(),
            spec: self.spec.clone(),
            seed: self.seed,
        }
    }

    pub fn splits(&self) -> Option<Splits> {
        match &self.spec {
            GeneratorSpec::Univariate { splits, .. } => Some(*splits),
            _ => None,
        }
    }

    /// `(train, validation, test)` blocks of a univariate dataset.
    pub fn split(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let s = self
            .splits()
            .ok_or_else(|| Error::invalid("dataset carries no train/validation/test split"))?;
        Ok((
            self.slice(0, s.train),
            self.slice(s.train, s.validation),
            self.slice(s.train + s.validation, s.test),
        ))
    }

    /// Ground-truth column `k`, if present.
    pub fn latent(&self, k: usize) -> Option<Vec<f64>> {
        self.z.as_ref().map(|z| z.col(k))
    }
}

/// Stream ids; one per random column.
mod streams {
    pub const LATENT: u64 = 0;
    pub const EPS: [u64; 4] = [1, 2, 3, 4];
    pub const MEASUREMENT_NOISE: u64 = 1_000;
    pub const FAMILY: u64 = 50_000;
    pub const LABEL: u64 = 50_001;
}

/// The four-measurement design with one latent.
pub fn generate_univariate(variant: Variant, domain: Domain, splits: Splits, seed: u64) -> Result<Dataset> {
    if splits.train == 0 || splits.validation == 0 || splits.test == 0 {
        return Err(Error::invalid("train, validation and test sizes must all be >= 1"));
    }
    let rows = splits.total();
    let mut z_rng = Stream::new(seed, streams::LATENT);
    let mut e_rng: Vec<Stream> = streams::EPS.iter().map(|&s| Stream::new(seed, s)).collect();
    let mut x = Matrix::zeros(rows, 4);
    let mut z = Matrix::zeros(rows, 1);

    for i in 0..rows {
        let zi = match domain {
            Domain::Continuous => rng::normal(&mut z_rng, 0.0, 2.0),
            Domain::Discrete => rng::binomial(&mut z_rng, 10, 0.5) as f64,
        };
        let (e1, e2, e3) = match variant {
            Variant::Baseline => (
                rng::standard_normal(&mut e_rng[0]),
                rng::beta_int(&mut e_rng[1], 2, 2) - 0.5,
                rng::laplace(&mut e_rng[2], 0.0, 1.0),
            ),
            Variant::LinearError => (
                0.5 * libm::fabs(zi) * rng::standard_normal(&mut e_rng[0]),
                rng::beta_int(&mut e_rng[1], 2, 2) - 0.5,
                rng::laplace(&mut e_rng[2], 0.0, 0.5 * libm::fabs(zi)),
            ),
            Variant::DoubleError => {
                let beta = rng::beta_int(&mut e_rng[1], 2, 4);
                let e2 = match domain {
                    Domain::Continuous => beta - 1.0 / 3.0,
                    Domain::Discrete => beta,
                };
                (
                    2.0 * rng::standard_normal(&mut e_rng[0]),
                    e2,
                    rng::laplace(&mut e_rng[2], 0.0, 2.0),
                )
            }
        };
        let flip = rng::bernoulli(&mut e_rng[3], 0.5);
        let row = x.row_mut(i);
        row[0] = zi + e1;
        row[1] = logistic_decreasing(zi) + e2;
        row[2] = zi * zi + e3;
        row[3] = normal_cdf(zi / 3.0) * if flip { -1.0 } else { 1.0 };
        z[(i, 0)] = zi;
    }

    let mut ds = Dataset::new(x, Some(z), None)?;
    ds.spec = GeneratorSpec::Univariate {
        variant,
        domain,
        splits,
    };
    ds.seed = seed;
    Ok(ds)
}

/// `F[i][k]`: measurement `i` depends on latent `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupportMatrix {
    rows: Vec<Vec<bool>>,
    latents: usize,
}

impl SupportMatrix {
    /// Requires at least one `true` in every row and every column.
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self> {
        let latents = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || latents == 0 {
            return Err(Error::invalid("support matrix must be non-empty"));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != latents) {
            return Err(Error::shape(format!("support row {i} has the wrong length")));
        }
        if let Some(i) = rows.iter().position(|r| !r.iter().any(|&b| b)) {
            return Err(Error::invalid(format!("measurement {i} depends on no latent")));
        }
        if let Some(k) = (0..latents).find(|&k| !rows.iter().any(|r| r[k])) {
            return Err(Error::invalid(format!("latent {k} feeds no measurement")));
        }
        Ok(Self { rows, latents })
    }

    pub fn measurements(&self) -> usize {
        self.rows.len()
    }

    pub fn latents(&self) -> usize {
        self.latents
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> bool {
        self.rows[i][k]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }

    /// Latents measurement `i` depends on.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        (0..self.latents).filter(|&k| self.rows[i][k]).collect()
    }
}

/// Nonlinearity for measurement `3k + j` of latent `k`.
#[inline]
pub fn structural_link(j: usize, z: f64) -> f64 {
    match j % 3 {
        0 => 3.0 * z,
        1 => crate::diff::Activation::Sigmoid.apply(z),
        _ => z * z,
    }
}

fn structural_measurements(z: &Matrix, sigma: f64, seed: u64) -> Matrix {
    let (rows, n) = z.shape();
    let m = 3 * n;
    let mut noise: Vec<Stream> = (0..m)
        .map(|i| Stream::new(seed, streams::MEASUREMENT_NOISE + i as u64))
        .collect();
    let mut x = Matrix::zeros(rows, m);
    for r in 0..rows {
        for (i, stream) in noise.iter_mut().enumerate() {
            let e = rng::standard_normal(stream);
            x[(r, i)] = structural_link(i % 3, z[(r, i / 3)]) + sigma * e;
        }
    }
    x
}

fn block_support(n: usize) -> SupportMatrix {
    let rows = (0..3 * n)
        .map(|i| (0..n).map(|k| k == i / 3).collect())
        .collect();
    SupportMatrix::new(rows).expect("block-diagonal support is non-degenerate")
}

/// `n` independent N(0, 4) latents, three measurements each.
pub fn generate_structural(n: usize, sigma: f64, rows: usize, seed: u64) -> Result<(Dataset, SupportMatrix)> {
    if n == 0 {
        return Err(Error::invalid("need at least one latent"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("noise scale must be >= 0"));
    }
    let mut z = Matrix::zeros(rows, n);
    let mut z_rng: Vec<Stream> = (0..n).map(|k| Stream::new(seed, streams::LATENT + 100 + k as u64)).collect();
    for r in 0..rows {
        for (k, s) in z_rng.iter_mut().enumerate() {
            z[(r, k)] = rng::normal(s, 0.0, 2.0);
        }
    }
    let x = structural_measurements(&z, sigma, seed);
    let mut ds = Dataset::new(x, Some(z), None)?;
    ds.spec = GeneratorSpec::Structural { n, sigma, rows };
    ds.seed = seed;
    Ok((ds, block_support(n)))
}

/// Per-regime Gaussian laws of each latent: `means[u][k]`, `stds[u][k]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianFamily {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl GaussianFamily {
    pub fn new(means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>) -> Result<Self> {
        if means.is_empty() || means.len() != stds.len() {
            return Err(Error::shape("means and stds must list the same regimes"));
        }
        let n = means[0].len();
        if means.iter().chain(&stds).any(|r| r.len() != n) || n == 0 {
            return Err(Error::shape("every regime must give one value per latent"));
        }
        if stds.iter().flatten().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        Ok(Self { means, stds })
    }

    pub fn regimes(&self) -> usize {
        self.means.len()
    }

    pub fn latents(&self) -> usize {
        self.means[0].len()
    }
}

/// `2n + 1` Gaussian regimes; means ~ U[-5, 5], variances ~ U[0.5, 2].
pub fn generate_distributional(n: usize, rows: usize, seed: u64) -> Result<(Dataset, GaussianFamily)> {
    if n == 0 {
        return Err(Error::invalid("need at least one latent"));
    }
    let regimes = 2 * n + 1;
    let mut fam_rng = Stream::new(seed, streams::FAMILY);
    let mut means = vec![vec![0.0; n]; regimes];
    let mut stds = vec![vec![0.0; n]; regimes];
    for u in 0..regimes {
        for k in 0..n {
            means[u][k] = rng::uniform(&mut fam_rng, -5.0, 5.0);
            stds[u][k] = libm::sqrt(rng::uniform(&mut fam_rng, 0.5, 2.0));
        }
    }
    let family = GaussianFamily::new(means, stds)?;

    let mut u_rng = Stream::new(seed, streams::LABEL);
    let mut z_rng: Vec<Stream> = (0..n).map(|k| Stream::new(seed, streams::LATENT + 100 + k as u64)).collect();
    let mut z = Matrix::zeros(rows, n);
    let mut labels = Vec::with_capacity(rows);
    for r in 0..rows {
        let u = rng::index_below(&mut u_rng, regimes);
        labels.push(u as u32);
        for (k, s) in z_rng.iter_mut().enumerate() {
            z[(r, k)] = rng::normal(s, family.means[u][k], family.stds[u][k]);
        }
    }
    let x = structural_measurements(&z, 1.0, seed);
    let mut ds = Dataset::new(x, Some(z), Some(labels))?;
    ds.spec = GeneratorSpec::Distributional { n, rows };
    ds.seed = seed;
    Ok((ds, family))
}

impl core::fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeneratorSpec::Univariate { variant, domain, splits } => write!(
                f,
                "univariate {} {} ({}/{}/{})",
                variant.name(),
                domain.name(),
                splits.train,
                splits.validation,
                splits.test
            ),
            GeneratorSpec::Structural { n, sigma, rows } => {
                write!(f, "structural n={n} sigma={sigma} rows={rows}")
            }
            GeneratorSpec::Distributional { n, rows } => write!(f, "distributional n={n} rows={rows}"),
            GeneratorSpec::External => f.write_str(&"external".to_string()),
        }
    }
}
