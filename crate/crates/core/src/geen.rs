//! Univariate latent extraction by divergence minimization.
//!
//! A small tanh network maps each observation row to a latent draw `ẑ`. On a
//! batch of `M` rows the loss is
//!
//! ```text
//! D = mean_i [ ln p(x_i, ẑ_i) - ln p(ẑ_i) - sum_g ln p(x_ig | ẑ_i) ]
//! C = mean_i ( E[x_1 | ẑ = ẑ_i] - ẑ_i )^2
//! loss = D + lambda * C
//! ```
//!
//! with every density a Gaussian product-kernel estimate over the batch and
//! `E[x_1 | ẑ]` the Nadaraya–Watson mean. `D` measures how far the joint is
//! from "measurements independent given ẑ"; `C` pins the location and scale
//! of `ẑ` to the first measurement.
//!
//! Observed-column bandwidths come from the whole training sample; the latent
//! bandwidth is re-derived from each batch and is not differentiated.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::diff::nets::{init_uniform, mlp, MlpNodes};
use crate::diff::{Activation, AdamConfig, AdamState, Bandwidth, Node, ParameterVector, Program, ProgramBuilder};
use crate::error::{Error, Result};
use crate::kde::silverman_bandwidth;
use crate::matrix::{sample_std, Matrix};
use crate::rng::{derive_seed, Stream};
use crate::train::{evaluation_chunks, sample_with_replacement, select_best, RestartRecord, Standardization};

pub const DEFAULT_WINDOWS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeenConfig {
    /// Observed columns.
    pub m: usize,
    /// Hidden layer widths; the network is `m -> hidden... -> 1`.
    pub hidden: Vec<usize>,
    pub window: f64,
    pub lambda: f64,
    /// Rows per batch (`M`).
    pub batch_size: usize,
    /// Batches per epoch, and the training rows the generators produce.
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Feed the network z-scored columns instead of the raw ones.
    pub standardize_input: bool,
    /// Optional partition of the columns into at least three
    /// conditionally independent groups; `None` means one column per group.
    pub groups: Option<Vec<Vec<usize>>>,
}

impl GeenConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            hidden: vec![10; 5],
            window: 1.0,
            lambda: 0.0,
            batch_size: 500,
            n_train: 8000,
            n_validation: 1000,
            n_test: 1000,
            epochs: 1,
            learning_rate: 2e-2,
            restarts: 5,
            seed: 0,
            standardize_input: false,
            groups: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("need at least one observed column"));
        }
        if !(0.5..=4.0).contains(&self.window) {
            return Err(Error::invalid(format!("window {} outside [0.5, 4]", self.window)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layers must be non-empty"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("need at least one restart"));
        }
        if let Some(groups) = &self.groups {
            if groups.len() < 3 {
                return Err(Error::invalid("conditional-independence grouping needs at least three groups"));
            }
            let mut seen = vec![false; self.m];
            for &j in groups.iter().flatten() {
                if j >= self.m || seen[j] {
                    return Err(Error::invalid(format!("column {j} missing or repeated in grouping")));
                }
                seen[j] = true;
            }
            if groups.iter().any(|g| g.is_empty()) || seen.iter().any(|s| !s) {
                return Err(Error::invalid("grouping must partition every column into non-empty groups"));
            }
        }
        Ok(())
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.m];
        s.extend(&self.hidden);
        s.push(1);
        s
    }

    fn group_list(&self) -> Vec<Vec<usize>> {
        self.groups
            .clone()
            .unwrap_or_else(|| (0..self.m).map(|j| vec![j]).collect())
    }
}

fn extractor(b: &mut ProgramBuilder, input: Node, config: &GeenConfig) -> MlpNodes {
    mlp(b, input, &config.layer_sizes(), Activation::Tanh, Activation::Identity)
}

/// The extractor alone: network-input rows in (see `GeenConfig::standardize_input`), one latent per row out.
pub fn network_program(config: &GeenConfig) -> Result<Program> {
    let mut b = ProgramBuilder::new();
    let x = b.input(Some(config.m));
    let net = extractor(&mut b, x, config);
    b.finish(net.output)
}

/// The batch loss as a differentiable program, plus handles on its parts.
#[derive(Clone, Debug)]
pub struct GeenObjective {
    pub program: Program,
    pub divergence: Node,
    pub constraint: Node,
    pub latent: Node,
    pub kernel: Node,
    pub bandwidths: Vec<f64>,
    pub lambda: f64,
    pub standardization: Standardization,
}

impl GeenObjective {
    /// Inputs of the program: raw batch rows, then the network-input rows.
    pub fn new(
        config: &GeenConfig,
        bandwidths: &[f64],
        latent_bandwidth: Bandwidth,
        standardization: Standardization,
    ) -> Result<Self> {
        if bandwidths.len() != config.m {
            return Err(Error::shape(format!(
                "{} bandwidths for {} columns",
                bandwidths.len(),
                config.m
            )));
        }
        let mut b = ProgramBuilder::new();
        let raw = b.input(Some(config.m));
        let std_in = b.input(Some(config.m));
        let net = extractor(&mut b, std_in, config);
        let z = net.output;

        let kz = b.gaussian_kernel(z, latent_bandwidth);
        let kz_rows = b.row_sum(kz);
        let col_kernels: Vec<Node> = (0..config.m)
            .map(|j| {
                let c = b.columns(raw, j, 1);
                b.gaussian_kernel(c, Bandwidth::Fixed(bandwidths[j]))
            })
            .collect();
        let product = |b: &mut ProgramBuilder, cols: &[usize]| -> Node {
            let mut acc = col_kernels[cols[0]];
            for &j in &cols[1..] {
                acc = b.mul(acc, col_kernels[j]);
            }
            acc
        };
        let all: Vec<usize> = (0..config.m).collect();
        let x_joint = product(&mut b, &all);
        let joint = b.mul(kz, x_joint);
        // The 1/M factors cancel between ln p(x, z) and ln p(z).
        let joint_rows = b.row_sum(joint);
        let mut terms = b.log(joint_rows);
        let log_z = b.log(kz_rows);
        terms = b.sub(terms, log_z);
        for g in config.group_list() {
            let kg = product(&mut b, &g);
            let weighted = b.mul(kz, kg);
            let num = b.row_sum(weighted);
            let cond = b.div(num, kz_rows);
            let log_cond = b.log(cond);
            terms = b.sub(terms, log_cond);
        }
        let divergence = b.mean(terms);

        let x1 = b.columns(raw, 0, 1);
        let num = b.matmul(kz, x1);
        let cond_mean = b.div(num, kz_rows);
        let gap = b.sub(cond_mean, z);
        let sq = b.square(gap);
        let constraint = b.mean(sq);
        let penalty = b.scale(constraint, config.lambda);
        let loss = b.add(divergence, penalty);
        Ok(Self {
            program: b.finish(loss)?,
            divergence,
            constraint,
            latent: z,
            kernel: kz,
            bandwidths: bandwidths.to_vec(),
            lambda: config.lambda,
            standardization,
        })
    }

    fn inputs(&self, batch: &Matrix) -> Result<[Matrix; 2]> {
        if batch.rows() < 2 {
            return Err(Error::invalid("a batch needs at least two rows"));
        }
        Ok([batch.clone(), self.standardization.apply(batch)?])
    }

    pub fn loss(&self, batch: &Matrix, params: &ParameterVector) -> Result<f64> {
        let inputs = self.inputs(batch)?;
        let v = self.program.forward_scalar(params, &inputs).map_err(|e| diagnose(e, batch))?;
        finite_or(v, batch)
    }

    /// `(divergence, constraint)` at `params`.
    pub fn terms(&self, batch: &Matrix, params: &ParameterVector) -> Result<(f64, f64)> {
        let inputs = self.inputs(batch)?;
        let eval = self.program.evaluate(params, &inputs).map_err(|e| diagnose(e, batch))?;
        Ok((eval.value(self.divergence).value(), eval.value(self.constraint).value()))
    }

    /// Latent bandwidth the program used on this batch.
    pub fn latent_bandwidth(&self, batch: &Matrix, params: &ParameterVector) -> Result<f64> {
        let inputs = self.inputs(batch)?;
        Ok(self.program.evaluate(params, &inputs)?.bandwidth(self.kernel))
    }

    pub fn loss_and_gradient(&self, batch: &Matrix, params: &ParameterVector) -> Result<(f64, ParameterVector)> {
        let inputs = self.inputs(batch)?;
        let (v, g) = self
            .program
            .value_and_gradient(params, &inputs)
            .map_err(|e| diagnose(e, batch))?;
        finite_or(v, batch)?;
        Ok((v, g))
    }

    /// Mean loss over consecutive chunks of `chunk` rows.
    pub fn chunked_loss(&self, x: &Matrix, params: &ParameterVector, chunk: usize) -> Result<f64> {
        let chunks = evaluation_chunks(x.rows(), chunk);
        let mut total = 0.0;
        for range in &chunks {
            let idx: Vec<usize> = range.clone().collect();
            total += self.loss(&x.select_rows(&idx), params)?;
        }
        Ok(total / chunks.len() as f64)
    }
}

fn diagnose(e: Error, batch: &Matrix) -> Error {
    match e {
        Error::NonFinite { index, op } => Error::NonFiniteLoss(format!(
            "operation {index} ({op}) on a batch of {} rows{}",
            batch.rows(),
            if batch.is_finite() { "" } else { " containing non-finite inputs" }
        )),
        other => other,
    }
}

fn finite_or(v: f64, batch: &Matrix) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss(format!("loss {v} on a batch of {} rows", batch.rows())))
    }
}

/// Observed-column bandwidths from the full training sample, with `batch`
/// the number of points each estimate is built from.
pub fn column_bandwidths(train: &Matrix, batch: usize, window: f64) -> Result<Vec<f64>> {
    train
        .column_stds()
        .into_iter()
        .map(|s| silverman_bandwidth(s, batch, window))
        .collect()
}

/// `D + lambda * C` on one batch; see [`GeenObjective`].
pub fn geen_loss(batch: &Matrix, params: &ParameterVector, objective: &GeenObjective) -> Result<f64> {
    objective.loss(batch, params)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainedGeen {
    pub config: GeenConfig,
    pub params: ParameterVector,
    pub standardization: Standardization,
    pub bandwidths: Vec<f64>,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Seed of the selected restart.
    pub seed: u64,
    pub selected_restart: usize,
    pub restarts: Vec<RestartRecord>,
}

impl TrainedGeen {
    pub fn objective(&self) -> Result<GeenObjective> {
        GeenObjective::new(
            &self.config,
            &self.bandwidths,
            Bandwidth::Silverman {
                window: self.config.window,
            },
            self.standardization.clone(),
        )
    }

    /// Re-evaluates the recorded validation loss.
    pub fn validation_loss_on(&self, valid: &Matrix) -> Result<f64> {
        self.objective()?
            .chunked_loss(valid, &self.params, self.config.batch_size)
    }
}

/// One latent value per row.
pub fn extract(model: &TrainedGeen, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != model.config.m {
        return Err(Error::shape(format!(
            "model expects {} columns, got {}",
            model.config.m,
            x.cols()
        )));
    }
    let program = network_program(&model.config)?;
    let eval = program.evaluate(&model.params, &[model.standardization.apply(x)?])?;
    Ok(eval.value(program.output()).as_slice().to_vec())
}

/// A fully trained restart, before selection.
#[derive(Clone, Debug)]
pub struct RestartOutcome {
    pub record: RestartRecord,
    pub params: Option<ParameterVector>,
}

struct Prepared {
    objective: GeenObjective,
    bandwidths: Vec<f64>,
    standardization: Standardization,
}

fn prepare(train: &Matrix, valid: &Matrix, config: &GeenConfig) -> Result<Prepared> {
    config.validate()?;
    if train.rows() == 0 || valid.rows() == 0 {
        return Err(Error::invalid("training and validation data must be non-empty"));
    }
    if train.rows() < 2 || valid.rows() < 2 {
        return Err(Error::invalid("need at least two training and two validation rows"));
    }
    if train.cols() != config.m || valid.cols() != config.m {
        return Err(Error::shape(format!("data has {} columns, config expects {}", train.cols(), config.m)));
    }
    if !train.is_finite() || !valid.is_finite() {
        return Err(Error::invalid("data contain non-finite values"));
    }
    let standardization = if config.standardize_input {
        Standardization::fit(train)
    } else {
        Standardization::identity(config.m)
    };
    let bandwidths = column_bandwidths(train, config.batch_size, config.window)?;
    let objective = GeenObjective::new(
        config,
        &bandwidths,
        Bandwidth::Silverman { window: config.window },
        standardization.clone(),
    )?;
    Ok(Prepared {
        objective,
        bandwidths,
        standardization,
    })
}

/// Trains restart `index` (seed derived from the config seed).
pub fn train_restart(train: &Matrix, valid: &Matrix, config: &GeenConfig, index: usize) -> Result<RestartOutcome> {
    let prep = prepare(train, valid, config)?;
    Ok(run_restart(&prep, train, valid, config, index))
}

fn run_restart(prep: &Prepared, train: &Matrix, valid: &Matrix, config: &GeenConfig, index: usize) -> RestartOutcome {
    let seed = derive_seed(config.seed, index as u64);
    let mut params = init_uniform(prep.objective.program.layout(), &mut Stream::new(seed, 0));
    let mut batches = Stream::new(seed, 1);
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let steps = config.epochs * config.n_train;
    let mut diverged = false;
    for _ in 0..steps {
        let idx = sample_with_replacement(&mut batches, train.rows(), config.batch_size);
        let batch = train.select_rows(&idx);
        match prep.objective.loss_and_gradient(&batch, &params) {
            Ok((_, g)) if adam.step(&mut params, &g).is_ok() && params.is_finite() => {}
            _ => {
                diverged = true;
                break;
            }
        }
    }
    if !diverged && adam.t > 0 {
        align_to_first_column(&mut params, config, &prep.standardization, train);
    }
    let losses = if diverged {
        None
    } else {
        let t = prep.objective.chunked_loss(train, &params, config.batch_size);
        let v = prep.objective.chunked_loss(valid, &params, config.batch_size);
        match (t, v) {
            (Ok(t), Ok(v)) => Some((t, v)),
            _ => None,
        }
    };
    RestartOutcome {
        record: RestartRecord {
            index,
            seed,
            train_loss: losses.map(|l| l.0),
            validation_loss: losses.map(|l| l.1),
            steps: adam.t as usize,
        },
        params: losses.map(|_| params),
    }
}

/// Replaces the output `ẑ` by its least-squares fit of the first raw
/// column, `a + b ẑ`, by rewriting the final affine layer. This pins the sign
/// and scale that the divergence leaves free. Constant outputs are left as is.
fn align_to_first_column(
    params: &mut ParameterVector,
    config: &GeenConfig,
    standardization: &Standardization,
    train: &Matrix,
) {
    let Ok(std_x) = standardization.apply(train) else { return };
    let Ok(program) = network_program(config) else { return };
    let Ok(eval) = program.evaluate(params, &[std_x]) else { return };
    let z = eval.value(program.output()).as_slice();
    let x1 = train.col(0);
    let (mz, mx) = (crate::matrix::mean(z), crate::matrix::mean(&x1));
    let (mut sxz, mut szz) = (0.0, 0.0);
    for (zi, xi) in z.iter().zip(&x1) {
        sxz += (zi - mz) * (xi - mx);
        szz += (zi - mz) * (zi - mz);
    }
    if !(szz > 0.0) || !sxz.is_finite() {
        return;
    }
    let slope = sxz / szz;
    let intercept = mx - slope * mz;
    let last = *program.layout().layers.last().expect("extractor has layers");
    let p = params.as_mut_slice();
    for w in &mut p[last.weight_range()] {
        *w *= slope;
    }
    for b in &mut p[last.bias_range()] {
        *b = intercept + slope * *b;
    }
}

/// Picks the restart with the lowest validation loss.
pub fn select_restart(
    train: &Matrix,
    valid: &Matrix,
    config: &GeenConfig,
    outcomes: Vec<RestartOutcome>,
) -> Result<TrainedGeen> {
    let prep = prepare(train, valid, config)?;
    let records: Vec<RestartRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let best = select_best(&records).ok_or(Error::AllRestartsDiverged(records.len()))?;
    let chosen = &outcomes[best];
    Ok(TrainedGeen {
        config: config.clone(),
        params: chosen.params.clone().expect("selected restart has parameters"),
        standardization: prep.standardization,
        bandwidths: prep.bandwidths,
        train_loss: chosen.record.train_loss.unwrap_or(f64::NAN),
        validation_loss: chosen.record.validation_loss.unwrap_or(f64::NAN),
        seed: chosen.record.seed,
        selected_restart: best,
        restarts: records,
    })
}

/// All restarts in sequence, then selection by validation loss.
pub fn train_geen(train: &Matrix, valid: &Matrix, config: &GeenConfig) -> Result<TrainedGeen> {
    let prep = prepare(train, valid, config)?;
    let outcomes = (0..config.restarts)
        .map(|r| run_restart(&prep, train, valid, config, r))
        .collect();
    select_restart(train, valid, config, outcomes)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TuningTrial {
    pub window: f64,
    pub lambda: f64,
    pub validation_loss: Option<f64>,
}

/// Grid search over `(window, lambda)`; lowest validation loss wins, ties
/// go to the smaller window, then the smaller lambda.
pub fn tune_hyperparameters(
    train: &Matrix,
    valid: &Matrix,
    windows: &[f64],
    lambdas: &[f64],
    config: &GeenConfig,
) -> Result<(GeenConfig, Vec<TuningTrial>)> {
    if windows.is_empty() || lambdas.is_empty() {
        return Err(Error::invalid("tuning grid is empty"));
    }
    let mut ws = windows.to_vec();
    let mut ls = lambdas.to_vec();
    ws.sort_by(f64::total_cmp);
    ls.sort_by(f64::total_cmp);
    let mut trials = Vec::new();
    let mut best: Option<(f64, GeenConfig)> = None;
    for &w in &ws {
        for &l in &ls {
            let mut c = config.clone();
            c.window = w;
            c.lambda = l;
            let loss = match train_geen(train, valid, &c) {
                Ok(model) => Some(model.validation_loss),
                Err(Error::AllRestartsDiverged(_)) => None,
                Err(e) => return Err(e),
            };
            trials.push(TuningTrial {
                window: w,
                lambda: l,
                validation_loss: loss,
            });
            if let Some(v) = loss {
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, c));
                }
            }
        }
    }
    let (_, cfg) = best.ok_or(Error::AllRestartsDiverged(trials.len()))?;
    Ok((cfg, trials))
}

/// Debug label for reports.
pub fn describe(config: &GeenConfig) -> String {
    format!(
        "w={} lambda={} M={} batches={} epochs={} restarts={}",
        config.window, config.lambda, config.batch_size, config.n_train, config.epochs, config.restarts
    )
}

/// Latent bandwidth for a given latent sample under the config's window.
pub fn latent_bandwidth(latents: &[f64], config: &GeenConfig) -> Result<f64> {
    silverman_bandwidth(sample_std(latents), latents.len(), config.window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_univariate, Domain, Splits, Variant};
    use crate::diff::finite_difference_check;
    use crate::kde::{conditional_density, conditional_mean, joint_density, KernelConfig};
    use crate::rng::standard_normal;

    fn small_config(m: usize) -> GeenConfig {
        let mut c = GeenConfig::new(m);
        c.hidden = vec![6, 6];
        c.batch_size = 20;
        c.n_train = 30;
        c.restarts = 2;
        c
    }

    fn sample(rows: usize, m: usize, seed: u64) -> Matrix {
        let mut s = Stream::new(seed, 0);
        let data = (0..rows * m).map(|_| standard_normal(&mut s)).collect();
        Matrix::from_vec(rows, m, data).unwrap()
    }

    fn objective(config: &GeenConfig, x: &Matrix, latent: Bandwidth) -> GeenObjective {
        let bw = column_bandwidths(x, config.batch_size, config.window).unwrap();
        GeenObjective::new(config, &bw, latent, Standardization::fit(x)).unwrap()
    }

    /// Direct evaluation through the pointwise KDE functions.
    fn oracle(batch: &Matrix, z: &[f64], bandwidths: &[f64], h_star: f64) -> (f64, f64) {
        let m = batch.rows();
        let cfg = KernelConfig {
            window: 1.0,
            bandwidths: bandwidths.to_vec(),
            latent_bandwidth: h_star,
        };
        let marginal = KernelConfig {
            window: 1.0,
            bandwidths: vec![],
            latent_bandwidth: h_star,
        };
        let empty = Matrix::zeros(m, 0);
        let mut d = 0.0;
        let mut c = 0.0;
        for i in 0..m {
            let row = batch.row(i);
            let mut t = joint_density(batch, z, row, z[i], &cfg).unwrap().ln();
            t -= joint_density(&empty, z, &[], z[i], &marginal).unwrap().ln();
            for j in 0..batch.cols() {
                let col = batch.col(j);
                t -= conditional_density(&col, z, row[j], z[i], bandwidths[j], h_star)
                    .unwrap()
                    .ln();
            }
            d += t;
            let mu = conditional_mean(&batch.col(0), z, z[i], h_star).unwrap();
            c += (mu - z[i]) * (mu - z[i]);
        }
        (d / m as f64, c / m as f64)
    }

    #[test]
    fn loss_matches_pointwise_oracle() {
        let config = small_config(4);
        let x = sample(50, 4, 1);
        let obj = objective(&config, &x, Bandwidth::Silverman { window: 1.0 });
        let p = init_uniform(obj.program.layout(), &mut Stream::new(2, 0));
        let z = {
            let net = network_program(&config).unwrap();
            let e = net.evaluate(&p, &[obj.standardization.apply(&x).unwrap()]).unwrap();
            e.value(net.output()).as_slice().to_vec()
        };
        let h_star = latent_bandwidth(&z, &GeenConfig { window: 1.0, ..config.clone() }).unwrap();
        assert!((obj.latent_bandwidth(&x, &p).unwrap() - h_star).abs() < 1e-15);
        let (d, c) = obj.terms(&x, &p).unwrap();
        let (d_ref, c_ref) = oracle(&x, &z, &obj.bandwidths, h_star);
        assert!((d - d_ref).abs() < 1e-9, "{d} vs {d_ref}");
        assert!((c - c_ref).abs() < 1e-9, "{c} vs {c_ref}");
        let loss = obj.loss(&x, &p).unwrap();
        assert!((loss - (d + config.lambda * c)).abs() < 1e-12);
    }

    #[test]
    fn constant_latent_with_independent_columns_has_small_divergence() {
        let mut prev = f64::INFINITY;
        for rows in [50, 400] {
            let config = GeenConfig {
                lambda: 0.0,
                batch_size: rows,
                ..small_config(3)
            };
            let x = sample(rows, 3, 3);
            let obj = objective(&config, &x, Bandwidth::Silverman { window: 1.0 });
            let p = ParameterVector::zeros(obj.program.param_count());
            let (d, _) = obj.terms(&x, &p).unwrap();
            // A constant latent takes the bandwidth floor.
            let (d_ref, _) = oracle(&x, &vec![0.0; rows], &obj.bandwidths, crate::kde::BANDWIDTH_FLOOR);
            assert!((d - d_ref).abs() < 1e-9);
            // Only the finite-sample bias of the plug-in estimate remains, shrinking with M.
            assert!(d > 0.0 && d < 0.6 && d < prev, "divergence {d} at M={rows}");
            prev = d;
        }
    }

    #[test]
    fn constraint_vanishes_at_nadaraya_watson_fixed_point() {
        // A constant column is its own conditional mean everywhere.
        let config = small_config(3);
        let mut x = sample(20, 3, 4);
        for r in 0..20 {
            x[(r, 0)] = 0.0;
        }
        let obj = objective(&config, &x, Bandwidth::Silverman { window: 1.0 });
        let p = ParameterVector::zeros(obj.program.param_count());
        let (_, c) = obj.terms(&x, &p).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn loss_is_linear_in_lambda() {
        let x = sample(30, 3, 5);
        let lo = GeenConfig {
            lambda: 0.25,
            ..small_config(3)
        };
        let hi = GeenConfig { lambda: 0.5, ..lo.clone() };
        let a = objective(&lo, &x, Bandwidth::Silverman { window: 1.0 });
        let b = objective(&hi, &x, Bandwidth::Silverman { window: 1.0 });
        let p = init_uniform(a.program.layout(), &mut Stream::new(6, 0));
        let (_, c) = a.terms(&x, &p).unwrap();
        let diff = b.loss(&x, &p).unwrap() - a.loss(&x, &p).unwrap();
        assert!((diff - 0.25 * c).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_at_fixed_latent_bandwidth() {
        let config = small_config(4);
        for seed in 0..5 {
            let x = sample(20, 4, 10 + seed);
            let silver = objective(&config, &x, Bandwidth::Silverman { window: 1.0 });
            let p = init_uniform(silver.program.layout(), &mut Stream::new(20 + seed, 0));
            let h = silver.latent_bandwidth(&x, &p).unwrap();
            let fixed = objective(&config, &x, Bandwidth::Fixed(h));
            let inputs = [x.clone(), fixed.standardization.apply(&x).unwrap()];
            let err = finite_difference_check(&fixed.program, &p, &inputs, 1e-5).unwrap();
            assert!(err < 1e-3, "seed {seed}: {err}");
            // Same gradient as the stop-gradient Silverman program.
            let g1 = silver.loss_and_gradient(&x, &p).unwrap().1;
            let g2 = fixed.loss_and_gradient(&x, &p).unwrap().1;
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn loss_is_invariant_to_row_order() {
        let config = small_config(4);
        let x = sample(25, 4, 7);
        let obj = objective(&config, &x, Bandwidth::Silverman { window: 1.0 });
        let p = init_uniform(obj.program.layout(), &mut Stream::new(8, 0));
        let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
        let a = obj.loss(&x, &p).unwrap();
        let b = obj.loss(&x.select_rows(&perm), &p).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn divergence_ignores_latent_shift_at_fixed_bandwidth() {
        let config = GeenConfig {
            lambda: 0.0,
            ..small_config(3)
        };
        let x = sample(30, 3, 9);
        let obj = objective(&config, &x, Bandwidth::Fixed(0.4));
        let p = init_uniform(obj.program.layout(), &mut Stream::new(9, 0));
        let mut shifted = p.clone();
        let last = *obj.program.layout().layers.last().unwrap();
        shifted.as_mut_slice()[last.bias_range()][0] += 3.0;
        let a = obj.loss(&x, &p).unwrap();
        let b = obj.loss(&x, &shifted).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn zero_final_layer_extracts_the_bias() {
        let config = small_config(4);
        let x = sample(40, 4, 11);
        let (mut model, _) = tiny_model(&config, 0);
        let last = *network_program(&config).unwrap().layout().layers.last().unwrap();
        for v in &mut model.params.as_mut_slice()[last.weight_range()] {
            *v = 0.0;
        }
        model.params.as_mut_slice()[last.bias_range()][0] = 0.75;
        assert!(extract(&model, &x).unwrap().iter().all(|&z| z == 0.75));
        assert_eq!(extract(&model, &x).unwrap(), extract(&model, &x).unwrap());
        assert!(extract(&model, &sample(3, 2, 0)).is_err());
    }

    fn tiny_model(config: &GeenConfig, epochs: usize) -> (TrainedGeen, Matrix) {
        let ds = generate_univariate(
            Variant::Baseline,
            Domain::Continuous,
            Splits {
                train: 200,
                validation: 60,
                test: 10,
            },
            5,
        )
        .unwrap();
        let (tr, va, _) = ds.split().unwrap();
        let c = GeenConfig {
            epochs,
            ..config.clone()
        };
        (train_geen(&tr.x, &va.x, &c).unwrap(), va.x)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let config = GeenConfig {
            restarts: 1,
            ..small_config(4)
        };
        let (model, va) = tiny_model(&config, 0);
        assert_eq!(model.restarts[0].steps, 0);
        let init = init_uniform(
            network_program(&config).unwrap().layout(),
            &mut Stream::new(derive_seed(config.seed, 0), 0),
        );
        assert_eq!(model.params, init);
        assert_eq!(
            model.validation_loss_on(&va).unwrap().to_bits(),
            model.validation_loss.to_bits()
        );
    }

    #[test]
    fn training_is_deterministic_and_selects_the_best_restart() {
        let config = GeenConfig {
            restarts: 3,
            ..small_config(4)
        };
        let (a, va) = tiny_model(&config, 1);
        let (b, _) = tiny_model(&config, 1);
        assert_eq!(a, b);
        for r in &a.restarts {
            assert!(a.validation_loss <= r.validation_loss.unwrap());
        }
        assert_eq!(
            a.validation_loss_on(&va).unwrap().to_bits(),
            a.validation_loss.to_bits()
        );
    }

    #[test]
    fn config_validation() {
        let mut c = GeenConfig::new(4);
        assert!(c.validate().is_ok());
        c.lambda = 1.5;
        assert!(c.validate().is_err());
        c.lambda = 0.0;
        c.window = 0.2;
        assert!(c.validate().is_err());
        c.window = 1.0;
        c.groups = Some(vec![vec![0, 1], vec![2]]);
        assert!(c.validate().is_err());
        c.groups = Some(vec![vec![0, 1], vec![2], vec![3]]);
        assert!(c.validate().is_ok());
        c.groups = Some(vec![vec![0, 1], vec![2], vec![2]]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn grouped_factorization_matches_oracle() {
        let config = GeenConfig {
            groups: Some(vec![vec![0, 1], vec![2], vec![3]]),
            ..small_config(4)
        };
        let x = sample(30, 4, 12);
        let h_star = 0.5;
        let obj = objective(&config, &x, Bandwidth::Fixed(h_star));
        let p = init_uniform(obj.program.layout(), &mut Stream::new(13, 0));
        let net = network_program(&config).unwrap();
        let e = net.evaluate(&p, &[obj.standardization.apply(&x).unwrap()]).unwrap();
        let z = e.value(net.output()).as_slice().to_vec();

        let cfg = |cols: &[usize]| KernelConfig {
            window: 1.0,
            bandwidths: cols.iter().map(|&j| obj.bandwidths[j]).collect(),
            latent_bandwidth: h_star,
        };
        let pick = |cols: &[usize]| {
            let rows: Vec<Vec<f64>> = (0..30).map(|r| cols.iter().map(|&j| x[(r, j)]).collect()).collect();
            if cols.is_empty() {
                Matrix::zeros(30, 0)
            } else {
                Matrix::from_rows(&rows).unwrap()
            }
        };
        let dens = |cols: &[usize], i: usize| {
            let q: Vec<f64> = cols.iter().map(|&j| x[(i, j)]).collect();
            joint_density(&pick(cols), &z, &q, z[i], &cfg(cols)).unwrap()
        };
        let mut want = 0.0;
        for i in 0..30 {
            let pz = dens(&[], i);
            want += dens(&[0, 1, 2, 3], i).ln() - pz.ln();
            for g in [&[0usize, 1][..], &[2], &[3]] {
                want -= (dens(g, i) / pz).ln();
            }
        }
        want /= 30.0;
        let (d, _) = obj.terms(&x, &p).unwrap();
        assert!((d - want).abs() < 1e-9, "{d} vs {want}");
    }

    #[test]
    fn tuning_single_point_and_ties() {
        let config = GeenConfig {
            restarts: 1,
            n_train: 10,
            ..small_config(4)
        };
        let ds = generate_univariate(
            Variant::Baseline,
            Domain::Continuous,
            Splits {
                train: 100,
                validation: 40,
                test: 1,
            },
            2,
        )
        .unwrap();
        let (tr, va, _) = ds.split().unwrap();
        let (c, trials) = tune_hyperparameters(&tr.x, &va.x, &[2.0], &[0.25], &config).unwrap();
        assert_eq!((c.window, c.lambda, trials.len()), (2.0, 0.25, 1));

        let (c, trials) = tune_hyperparameters(&tr.x, &va.x, &[1.0], &[0.5, 0.0], &config).unwrap();
        let best = trials
            .iter()
            .min_by(|a, b| a.validation_loss.unwrap().total_cmp(&b.validation_loss.unwrap()))
            .unwrap();
        assert_eq!(c.lambda, best.lambda);
        assert_eq!(trials[0].lambda, 0.0);
        assert!(tune_hyperparameters(&tr.x, &va.x, &[], &[0.5], &config).is_err());
    }
}
